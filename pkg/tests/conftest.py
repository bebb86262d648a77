"""
Shared fixtures
"""

import numpy as np
import pytest
import scipy.sparse as sp

from src.hetgraph import HeteroGraph, MetaPath, MetaPathSubgraph, NodeType, Relation
from src.model import GraphContext
from src.sparse import CsrMatrix, sym_normalize


def make_context(n=12, d=5, num_metapaths=2, num_classes=3, seed=0, materialize_global=False):
    """Random symmetric meta-path subgraphs over n target nodes, plus labels"""
    rng = np.random.default_rng(seed)
    subgraphs = []
    for i in range(num_metapaths):
        a = sp.random(n, n, density=0.35, random_state=rng, format="csr")
        raw = CsrMatrix.from_scipy(a + a.T).drop_diagonal()
        subgraphs.append(
            MetaPathSubgraph(
                path=MetaPath(name=f"P{i}", relation_seq=[f"r{i}"]),
                raw_adj=raw,
                norm_adj=sym_normalize(raw),
            )
        )
    features = rng.standard_normal((n, d))
    labels = np.arange(n) % num_classes
    return GraphContext(subgraphs, features, materialize_global=materialize_global), labels


@pytest.fixture
def context_factory():
    """Build random graph contexts on demand"""
    return make_context


@pytest.fixture
def author_paper_graph():
    """2 authors, 3 papers; authors are the target type"""
    writes = CsrMatrix.from_dense([[1, 1, 0], [0, 0, 1]])
    knows = CsrMatrix.from_dense([[0, 2], [2, 0]])
    graph = HeteroGraph(
        node_types=[NodeType(name="author", count=2), NodeType(name="paper", count=3)],
        relations=[
            Relation(name="writes", src="author", dst="paper", matrix=writes),
            Relation(name="knows", src="author", dst="author", matrix=knows),
        ],
        target_type="author",
        features=np.eye(2),
        labels=np.array([0, 1]),
        num_classes=2,
    )
    return graph.with_reverse_relations()
