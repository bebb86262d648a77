"""
H2SGNN Heterogeneous Graph

Typed node sets, typed relation matrices, meta-path subgraph induction and
edge homophily.
"""

import logging
from collections import Counter
from functools import reduce
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import (
    RelationLookupError,
    SchemaError,
    ShapeError,
    UndefinedHomophilyError,
)
from src.sparse import CsrMatrix, spgemm, sym_normalize

logger = logging.getLogger(__name__)

REVERSE_SUFFIX = "_rev"


class NodeType(BaseModel):
    """A node type and how many nodes it has"""
    name: str
    count: int = Field(ge=0)


class Relation(BaseModel):
    """A typed relation and its adjacency matrix"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    src: str
    dst: str
    matrix: CsrMatrix

    @property
    def is_reverse(self) -> bool:
        return self.name.endswith(REVERSE_SUFFIX)


class HeteroGraph(BaseModel):
    """Heterogeneous graph with features and labels on the target type"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_types: List[NodeType]
    relations: List[Relation]
    target_type: str
    features: np.ndarray
    labels: Optional[np.ndarray] = None  # -1 marks an unlabeled node
    num_classes: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "HeteroGraph":
        counts = {nt.name: nt.count for nt in self.node_types}
        if len(counts) != len(self.node_types):
            raise SchemaError("duplicate node type names")
        if self.target_type not in counts:
            raise SchemaError(f"target type '{self.target_type}' is not a node type")

        names = set()
        for rel in self.relations:
            if rel.name in names:
                raise SchemaError(f"duplicate relation '{rel.name}'")
            names.add(rel.name)
            if rel.src not in counts or rel.dst not in counts:
                raise SchemaError(f"relation '{rel.name}' references an unknown node type")
            expected = (counts[rel.src], counts[rel.dst])
            if rel.matrix.shape != expected:
                raise ShapeError(
                    f"relation '{rel.name}' has shape {rel.matrix.shape}, expected {expected}"
                )

        n_target = counts[self.target_type]
        if self.features.ndim != 2 or self.features.shape[0] != n_target:
            raise ShapeError(
                f"features have shape {self.features.shape}, expected ({n_target}, d)"
            )
        if self.labels is not None:
            if self.labels.shape != (n_target,):
                raise ShapeError(f"labels have shape {self.labels.shape}, expected ({n_target},)")
            known = self.labels[self.labels >= 0]
            if known.size and known.max() >= self.num_classes:
                raise SchemaError(f"label {known.max()} outside [0, {self.num_classes})")
        return self

    def node_count(self, node_type: str) -> int:
        for nt in self.node_types:
            if nt.name == node_type:
                return nt.count
        raise SchemaError(f"unknown node type '{node_type}'")

    @property
    def num_target(self) -> int:
        return self.node_count(self.target_type)

    @property
    def num_nodes(self) -> int:
        return sum(nt.count for nt in self.node_types)

    @property
    def num_edges(self) -> int:
        """Stored edges of the declared (non-reverse) relations"""
        return sum(rel.matrix.nnz for rel in self.relations if not rel.is_reverse)

    def relation(self, name: str) -> Relation:
        for rel in self.relations:
            if rel.name == name:
                return rel
        raise RelationLookupError(f"unknown relation '{name}'")

    def with_reverse_relations(self) -> "HeteroGraph":
        """Add '<rel>_rev' = transpose for every relation that lacks one"""
        existing = {rel.name for rel in self.relations}
        added = [
            Relation(
                name=rel.name + REVERSE_SUFFIX,
                src=rel.dst,
                dst=rel.src,
                matrix=rel.matrix.transpose(),
            )
            for rel in self.relations
            if not rel.is_reverse and rel.name + REVERSE_SUFFIX not in existing
        ]
        if not added:
            return self
        return self.model_copy(update={"relations": self.relations + added})


class MetaPath(BaseModel):
    """Ordered relation sequence from the target type back to the target type"""
    name: str
    relation_seq: List[str] = Field(min_length=1)

    def endpoint_types(self, graph: HeteroGraph) -> List[str]:
        """Node types visited, checking composability along the way"""
        rels = [graph.relation(name) for name in self.relation_seq]
        types = [rels[0].src]
        for step, rel in enumerate(rels):
            if rel.src != types[-1]:
                raise SchemaError(
                    f"meta-path '{self.name}': step {step} starts at '{rel.src}' "
                    f"but the previous step ends at '{types[-1]}'"
                )
            types.append(rel.dst)
        return types

    def validate_on(self, graph: HeteroGraph) -> None:
        types = self.endpoint_types(graph)
        if types[0] != graph.target_type or types[-1] != graph.target_type:
            raise SchemaError(
                f"meta-path '{self.name}' runs {types[0]} -> {types[-1]}, "
                f"expected {graph.target_type} -> {graph.target_type}"
            )


class MetaPathSubgraph(BaseModel):
    """Homogeneous subgraph on the target nodes induced by a meta-path"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    path: MetaPath
    raw_adj: CsrMatrix
    norm_adj: CsrMatrix


def induce_metapath_adjacency(graph: HeteroGraph, path: MetaPath) -> CsrMatrix:
    """Left-to-right product of the relation matrices along the path"""
    path.validate_on(graph)
    matrices = [graph.relation(name).matrix for name in path.relation_seq]
    adj = reduce(spgemm, matrices)
    logger.debug("meta-path %s: %d stored entries", path.name, adj.nnz)
    return adj


def build_subgraph(
    graph: HeteroGraph,
    path: MetaPath,
    binarize: bool = False,
    drop_selfloops: bool = True,
) -> MetaPathSubgraph:
    """Induce, optionally clean up, then symmetric-normalize a meta-path adjacency

    raw_adj keeps the path-instance counts; only norm_adj sees the cleanup.
    """
    raw = induce_metapath_adjacency(graph, path)
    processed = raw
    if drop_selfloops:
        processed = processed.drop_diagonal()
    if binarize:
        processed = processed.binarize()
    return MetaPathSubgraph(path=path, raw_adj=raw, norm_adj=sym_normalize(processed))


def edge_homophily(adj: CsrMatrix, labels) -> float:
    """Fraction of stored off-diagonal entries whose endpoints share a label

    Entries touching a node with a negative (unknown) label are skipped.
    """
    labels = np.asarray(labels)
    if adj.n_rows != adj.n_cols:
        raise ShapeError(f"homophily needs a square adjacency, got {adj.shape}")
    if labels.shape != (adj.n_rows,):
        raise ShapeError(f"{labels.shape[0]} labels for {adj.n_rows} nodes")

    coo = adj.to_scipy().tocoo()
    rows, cols = coo.row, coo.col
    eligible = (rows != cols) & (labels[rows] >= 0) & (labels[cols] >= 0)
    total = int(eligible.sum())
    if total == 0:
        raise UndefinedHomophilyError("homophily is undefined on a graph without edges")
    same = int((labels[rows[eligible]] == labels[cols[eligible]]).sum())
    return same / total


def _initial_index(graph: HeteroGraph) -> Dict[str, str]:
    by_initial: Dict[str, List[str]] = {}
    for nt in graph.node_types:
        by_initial.setdefault(nt.name[:1].upper(), []).append(nt.name)
    return {k: v[0] for k, v in by_initial.items() if len(v) == 1}


def resolve_metapath(graph: HeteroGraph, token: str) -> MetaPath:
    """Parse 'PAP' (node-type initials) or 'NAME:rel1>rel2' into a MetaPath"""
    token = token.strip()
    if ":" in token:
        name, _, rels = token.partition(":")
        seq = [r.strip() for r in rels.split(">") if r.strip()]
        if not name or not seq:
            raise SchemaError(f"cannot parse meta-path '{token}'")
        path = MetaPath(name=name.strip(), relation_seq=seq)
        path.validate_on(graph)
        return path

    if len(token) < 2:
        raise SchemaError(f"meta-path shorthand '{token}' needs at least two node types")
    initials = _initial_index(graph)
    try:
        types = [initials[ch.upper()] for ch in token]
    except KeyError as e:
        raise SchemaError(f"meta-path '{token}': no unique node type with initial {e}") from None

    seq = []
    for src, dst in zip(types, types[1:]):
        between = [rel for rel in graph.relations if rel.src == src and rel.dst == dst]
        # stored relations win over materialized reverses
        candidates = [rel.name for rel in between if not rel.is_reverse] or [
            rel.name for rel in between
        ]
        if len(candidates) != 1:
            raise SchemaError(
                f"meta-path '{token}': {len(candidates)} relations from {src} to {dst}, need exactly one"
            )
        seq.append(candidates[0])
    path = MetaPath(name=token.upper(), relation_seq=seq)
    path.validate_on(graph)
    return path


def default_metapaths(graph: HeteroGraph) -> List[MetaPath]:
    """Palindromes through each stored relation touching the target type

    Outgoing relations give [r, r_rev], incoming ones [r_rev, r]. Paths whose
    initials collide, such as two paper-paper relations, are named "PPP-<relation>".
    """
    graph = graph.with_reverse_relations()
    target = graph.target_type
    found = []
    for rel in graph.relations:
        if rel.is_reverse:
            continue
        if rel.src == target:
            seq = [rel.name, rel.name + REVERSE_SUFFIX]
            other = rel.dst
        elif rel.dst == target:
            seq = [rel.name + REVERSE_SUFFIX, rel.name]
            other = rel.src
        else:
            continue
        found.append(((target[:1] + other[:1] + target[:1]).upper(), rel.name, seq))

    taken = Counter(initials for initials, _, _ in found)
    return [
        MetaPath(name=initials if taken[initials] == 1 else f"{initials}-{name}", relation_seq=seq)
        for initials, name, seq in found
    ]


def homophily_table(
    graph: HeteroGraph,
    paths: List[MetaPath],
    binarize: bool = False,
    drop_selfloops: bool = True,
) -> List[Tuple[str, float]]:
    """Edge homophily of every meta-path subgraph"""
    if graph.labels is None:
        raise SchemaError("homophily needs labels on the target type")
    table = []
    for path in paths:
        sub = build_subgraph(graph, path, binarize=binarize, drop_selfloops=drop_selfloops)
        table.append((path.name, edge_homophily(sub.raw_adj, graph.labels)))
    return table
