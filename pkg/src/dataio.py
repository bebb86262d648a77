"""
H2SGNN Data I/O

Dataset directories (schema.json, one TSV edge file per relation, features,
labels.tsv, splits.json) and experiment configs (JSON or YAML).
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from sklearn.preprocessing import normalize

from src.errors import (
    ConfigError,
    DatasetValidationError,
    RelationLookupError,
    SchemaError,
)
from src.hetgraph import (
    REVERSE_SUFFIX,
    HeteroGraph,
    MetaPath,
    NodeType,
    Relation,
    default_metapaths,
    resolve_metapath,
)
from src.model import ModelConfig
from src.sparse import CsrMatrix
from src.train import TrainHyper

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "H2SGNN_DATA_DIR"
SCHEMA_FILE = "schema.json"
LABELS_FILE = "labels.tsv"
SPLITS_FILE = "splits.json"

# Published per-benchmark settings; explicit config keys win
PRESETS: Dict[str, dict] = {
    "dblp": {"local_basis": "legendre", "global_basis": "monomial", "order": 6, "lr": 0.005},
    "acm": {"local_basis": "jacobi", "global_basis": "monomial", "order": 10, "lr": 0.0005},
    "imdb": {"local_basis": "monomial", "global_basis": "monomial", "order": 10, "lr": 0.0005},
    "aminer": {"local_basis": "monomial", "global_basis": "monomial", "order": 10, "lr": 0.001},
}


class RelationSpec(BaseModel):
    """Schema entry for one relation; edges live in `file` (default '<name>.tsv')"""
    model_config = ConfigDict(extra="forbid")

    name: str
    src: str
    dst: str
    file: Optional[str] = None

    @property
    def filename(self) -> str:
        return self.file or f"{self.name}.tsv"


class ExpectedStats(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: Optional[int] = None
    edges: Optional[int] = None
    node_types: Optional[int] = None


class DatasetSchema(BaseModel):
    """Contents of schema.json"""
    model_config = ConfigDict(extra="forbid")

    name: str
    target_type: str
    num_classes: int = Field(ge=1)
    class_names: List[str] = Field(default_factory=list)
    node_types: List[NodeType]
    relations: List[RelationSpec]
    features: str = "features.npy"
    expected: Optional[ExpectedStats] = None


class Splits(BaseModel):
    """Train/val/test node ids over the target type"""
    train: List[int]
    val: List[int]
    test: List[int]

    def as_dict(self) -> Dict[str, List[int]]:
        return {"train": self.train, "val": self.val, "test": self.test}


class DatasetMetadata(BaseModel):
    name: str
    target_type: str
    class_names: List[str] = Field(default_factory=list)


class DatasetStatistics(BaseModel):
    name: str
    nodes: int
    node_types: int
    edges: int
    target_nodes: int
    features: int
    classes: int
    nodes_per_type: Dict[str, int]


class DatasetBundle(BaseModel):
    """A loaded dataset: graph, masks and metadata"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    graph: HeteroGraph
    masks: Splits
    metadata: DatasetMetadata

    @model_validator(mode="after")
    def _check_masks(self) -> "DatasetBundle":
        labels = self.graph.labels
        if labels is None:
            raise DatasetValidationError("dataset has no labels on the target type")
        n = self.graph.num_target
        seen: Dict[int, str] = {}
        for split, ids in self.masks.as_dict().items():
            for node in ids:
                if node < 0 or node >= n:
                    raise DatasetValidationError(f"{split} mask: node {node} outside [0, {n})")
                if node in seen:
                    raise DatasetValidationError(f"node {node} is in both {seen[node]} and {split}")
                if labels[node] < 0:
                    raise DatasetValidationError(f"{split} mask: node {node} has no label")
                seen[node] = split
        return self

    def statistics(self) -> DatasetStatistics:
        graph = self.graph
        return DatasetStatistics(
            name=self.metadata.name,
            nodes=graph.num_nodes,
            node_types=len(graph.node_types),
            edges=graph.num_edges,
            target_nodes=graph.num_target,
            features=graph.features.shape[1],
            classes=graph.num_classes,
            nodes_per_type={nt.name: nt.count for nt in graph.node_types},
        )


def resolve_dataset_path(path: Union[str, Path]) -> Path:
    """Relative paths that do not exist are looked up under $H2SGNN_DATA_DIR"""
    candidate = Path(path).expanduser()
    if candidate.exists() or candidate.is_absolute():
        return candidate
    root = os.getenv(DATA_DIR_ENV)
    if root and (Path(root) / candidate).exists():
        return Path(root) / candidate
    return candidate


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    return path


def _load_table(path: Path, columns: Optional[tuple] = None) -> np.ndarray:
    """Tab-separated numeric table, one record per line, no header"""
    _require(path)
    if not path.read_text().strip():
        return np.zeros((0, columns[0] if columns else 0))
    try:
        table = np.loadtxt(path, delimiter="\t", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise DatasetValidationError(f"{path}: {e}") from e
    if columns and table.shape[1] not in columns:
        raise DatasetValidationError(
            f"{path}: expected {' or '.join(map(str, columns))} columns, got {table.shape[1]}"
        )
    return table


def _integer_column(path: Path, table: np.ndarray, col: int, upper: int, what: str) -> np.ndarray:
    values = table[:, col]
    bad = np.flatnonzero((values != np.floor(values)) | (values < 0) | (values >= upper))
    if bad.size:
        row = int(bad[0])
        raise DatasetValidationError(
            f"{path}, row {row + 1}: {what} {values[row]:g} outside [0, {upper})"
        )
    return values.astype(np.int64)


def _read_relation(directory: Path, spec: RelationSpec, counts: Dict[str, int]) -> Relation:
    for node_type in (spec.src, spec.dst):
        if node_type not in counts:
            raise DatasetValidationError(f"relation '{spec.name}' references unknown node type '{node_type}'")
    path = directory / spec.filename
    table = _load_table(path, (2, 3))
    shape = (counts[spec.src], counts[spec.dst])
    src = _integer_column(path, table, 0, shape[0], f"{spec.src} id")
    dst = _integer_column(path, table, 1, shape[1], f"{spec.dst} id")
    weights = table[:, 2] if table.shape[1] == 3 else None
    matrix = CsrMatrix.from_edges(src, dst, shape, weights=weights)
    logger.debug("relation %s: %d edges from %s", spec.name, matrix.nnz, path.name)
    return Relation(name=spec.name, src=spec.src, dst=spec.dst, matrix=matrix)


def _read_features(directory: Path, filename: str, n_target: int) -> np.ndarray:
    path = _require(directory / filename)
    if path.suffix == ".npy":
        try:
            features = np.load(path, allow_pickle=False)
        except ValueError as e:
            raise DatasetValidationError(f"{path}: {e}") from e
    else:
        features = _load_table(path)
    if features.ndim != 2 or features.shape[0] != n_target:
        raise DatasetValidationError(
            f"{path}: features have shape {features.shape}, expected ({n_target}, d)"
        )
    if not np.issubdtype(features.dtype, np.floating):
        raise DatasetValidationError(f"{path}: features must be floating point, got {features.dtype}")
    if not np.all(np.isfinite(features)):
        raise DatasetValidationError(f"{path}: features contain non-finite values")
    return features


def _read_labels(directory: Path, n_target: int, num_classes: int) -> np.ndarray:
    path = directory / LABELS_FILE
    table = _load_table(path, (2,))
    ids = _integer_column(path, table, 0, n_target, "node id")
    classes = _integer_column(path, table, 1, num_classes, "class")
    unique, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise DatasetValidationError(f"{path}: node {unique[counts > 1][0]} is labeled twice")
    labels = np.full(n_target, -1, dtype=np.int64)
    labels[ids] = classes
    return labels


def _read_splits(directory: Path) -> Splits:
    path = _require(directory / SPLITS_FILE)
    try:
        with open(path, "r") as f:
            return Splits.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DatasetValidationError(f"{path}: {e}") from e


def _check_expected(schema: DatasetSchema, graph: HeteroGraph) -> None:
    expected = schema.expected
    if expected is None:
        return
    actual = {
        "nodes": graph.num_nodes,
        "edges": graph.num_edges,
        "node_types": len(graph.node_types),
    }
    for key, value in actual.items():
        want = getattr(expected, key)
        if want is not None and want != value:
            raise DatasetValidationError(f"{schema.name}: expected {want} {key}, found {value}")


def _read_schema(schema_path: Path) -> DatasetSchema:
    _require(schema_path)
    try:
        with open(schema_path, "r") as f:
            return DatasetSchema.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DatasetValidationError(f"{schema_path}: {e}") from e


def load_dataset(path: Union[str, Path], row_normalize: bool = False) -> DatasetBundle:
    """Load and validate a dataset directory; reverse relations are added"""
    directory = resolve_dataset_path(path)
    schema_path = directory / SCHEMA_FILE
    schema = _read_schema(schema_path)

    counts = {nt.name: nt.count for nt in schema.node_types}
    if schema.target_type not in counts:
        raise DatasetValidationError(f"{schema_path}: target type '{schema.target_type}' is not declared")
    n_target = counts[schema.target_type]

    relations = [_read_relation(directory, spec, counts) for spec in schema.relations]
    features = _read_features(directory, schema.features, n_target)
    if row_normalize:
        features = normalize(features, norm="l1", axis=1)
    labels = _read_labels(directory, n_target, schema.num_classes)
    splits = _read_splits(directory)

    try:
        graph = HeteroGraph(
            node_types=schema.node_types,
            relations=relations,
            target_type=schema.target_type,
            features=features,
            labels=labels,
            num_classes=schema.num_classes,
        )
        _check_expected(schema, graph)
        bundle = DatasetBundle(
            graph=graph.with_reverse_relations(),
            masks=splits,
            metadata=DatasetMetadata(
                name=schema.name, target_type=schema.target_type, class_names=schema.class_names
            ),
        )
    except ValidationError as e:
        raise DatasetValidationError(f"{directory}: {e}") from e

    stats = bundle.statistics()
    logger.info(
        "loaded %s: %d nodes, %d node types, %d edges", stats.name, stats.nodes, stats.node_types, stats.edges
    )
    return bundle


def write_dataset(bundle: DatasetBundle, path: Union[str, Path], expected: bool = True) -> Path:
    """Write a bundle in the layout load_dataset reads back"""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    graph = bundle.graph
    declared = [rel for rel in graph.relations if not rel.is_reverse]

    specs = []
    for rel in declared:
        spec = RelationSpec(name=rel.name, src=rel.src, dst=rel.dst)
        coo = rel.matrix.to_scipy().tocoo()
        columns = [coo.row, coo.col]
        fmt = ["%d", "%d"]
        if not np.all(coo.data == 1.0):
            columns.append(coo.data)
            fmt.append("%.17g")
        np.savetxt(directory / spec.filename, np.column_stack(columns), fmt=fmt, delimiter="\t")
        specs.append(spec)

    stats = bundle.statistics()
    schema = DatasetSchema(
        name=bundle.metadata.name,
        target_type=graph.target_type,
        num_classes=graph.num_classes,
        class_names=bundle.metadata.class_names,
        node_types=graph.node_types,
        relations=specs,
        expected=ExpectedStats(nodes=stats.nodes, edges=stats.edges, node_types=stats.node_types)
        if expected
        else None,
    )
    with open(directory / SCHEMA_FILE, "w") as f:
        json.dump(schema.model_dump(exclude_none=True), f, indent=2)

    np.save(directory / schema.features, graph.features, allow_pickle=False)

    labeled = np.flatnonzero(graph.labels >= 0)
    np.savetxt(
        directory / LABELS_FILE,
        np.column_stack([labeled, graph.labels[labeled]]),
        fmt="%d",
        delimiter="\t",
    )
    with open(directory / SPLITS_FILE, "w") as f:
        json.dump(bundle.masks.as_dict(), f)

    logger.info("wrote dataset %s to %s", bundle.metadata.name, directory)
    return directory


class MetaPathSpec(BaseModel):
    """Explicit meta-path in a config"""
    model_config = ConfigDict(extra="forbid")

    name: str
    relations: List[str] = Field(min_length=1)


class ExperimentConfig(BaseModel):
    """Everything one `train` invocation needs"""
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[str] = None
    preset: Optional[str] = None
    metapaths: List[Union[str, MetaPathSpec]] = Field(default_factory=list)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainHyper = Field(default_factory=TrainHyper)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    binarize: bool = False
    drop_selfloops: bool = True
    row_normalize: bool = False
    materialize_global: bool = False
    output_dir: str = "runs"

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data):
        if not isinstance(data, dict) or not data.get("preset"):
            return data
        name = str(data["preset"]).lower()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{data['preset']}', expected one of {sorted(PRESETS)}")
        preset = PRESETS[name]
        data = dict(data, preset=name)
        if isinstance(data.get("model", {}), dict):
            model = dict(data.get("model") or {})
            for key in ("local_basis", "global_basis", "order"):
                model.setdefault(key, preset[key])
            data["model"] = model
        if isinstance(data.get("train", {}), dict):
            train = dict(data.get("train") or {})
            train.setdefault("lr", preset["lr"])
            data["train"] = train
        return data

    def resolve_metapaths(self, graph: HeteroGraph) -> List[MetaPath]:
        """Meta-paths checked against the graph; none configured means the defaults"""
        if not self.metapaths:
            return default_metapaths(graph)
        paths = []
        for item in self.metapaths:
            try:
                if isinstance(item, str):
                    paths.append(resolve_metapath(graph, item))
                else:
                    path = MetaPath(name=item.name, relation_seq=item.relations)
                    path.validate_on(graph)
                    paths.append(path)
            except (RelationLookupError, SchemaError) as e:
                raise DatasetValidationError(f"meta-path {item!r}: {e}") from e
        return paths

    def model_for(self, paths: List[MetaPath]) -> ModelConfig:
        """Model config bound to the resolved meta-paths"""
        return self.model.model_copy(
            update={
                "metapaths": [p.name for p in paths],
                "materialize_global": self.materialize_global or self.model.materialize_global,
            }
        )


def load_config(path: Union[str, Path], dataset: Optional[str] = None) -> ExperimentConfig:
    """Parse a JSON or YAML experiment config; `dataset` overrides the file's"""
    path = Path(path)
    text = _require(path).read_text()
    try:
        raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text or "{}")
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if dataset is not None:
        raw["dataset"] = str(dataset)
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    check_metapath_relations(config)
    return config


def check_metapath_relations(config: ExperimentConfig) -> None:
    """Configured meta-paths must only name relations (or their reverses) the dataset declares

    Skipped when the dataset directory or its schema.json is not there yet.
    """
    if not config.dataset or not config.metapaths:
        return
    schema_path = resolve_dataset_path(config.dataset) / SCHEMA_FILE
    if not schema_path.exists():
        return
    schema = _read_schema(schema_path)
    known = {spec.name for spec in schema.relations}
    known |= {name + REVERSE_SUFFIX for name in known}
    initials = {nt.name[:1].upper() for nt in schema.node_types}

    for item in config.metapaths:
        if isinstance(item, MetaPathSpec):
            name, relations = item.name, item.relations
        elif ":" in item:
            name, _, rest = item.partition(":")
            relations = [r.strip() for r in rest.split(">") if r.strip()]
        else:
            missing = sorted({ch.upper() for ch in item.strip() if ch.upper() not in initials})
            if missing:
                raise DatasetValidationError(
                    f"meta-path '{item}': no node type of {schema.name} starts with {missing}"
                )
            continue
        unknown = [r for r in relations if r not in known]
        if unknown:
            raise DatasetValidationError(
                f"meta-path '{name.strip()}': {schema.name} has no relation {unknown}"
            )
