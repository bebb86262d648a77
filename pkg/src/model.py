"""
H2SGNN Model

Local independent filtering (one polynomial filter per meta-path subgraph),
global hybrid filtering (one polynomial filter on the beta-weighted sum of
subgraphs), their sum, and an MLP head.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from src.errors import ArgumentError, ShapeError
from src.filters import (
    BasisStack,
    FilterBasis,
    LinearOperator,
    SparseOperator,
    contract,
    propagate_basis,
)
from src.hetgraph import HeteroGraph, MetaPath, MetaPathSubgraph, build_subgraph
from src.sparse import CsrMatrix, add_scaled

logger = logging.getLogger(__name__)

DTYPE = torch.float64


class ModelVariant(str, Enum):
    """Which filtering branches feed the MLP"""
    FULL = "full"
    LOCAL_ONLY = "local_only"
    GLOBAL_ONLY = "global_only"

    @property
    def uses_local(self) -> bool:
        return self != ModelVariant.GLOBAL_ONLY

    @property
    def uses_global(self) -> bool:
        return self != ModelVariant.LOCAL_ONLY


class ModelConfig(BaseModel):
    """Architecture hyperparameters"""
    model_config = ConfigDict(extra="forbid")

    order: int = Field(default=10, ge=0)
    metapaths: List[str] = Field(default_factory=list)
    local_basis: Union[FilterBasis, List[FilterBasis]] = Field(default_factory=FilterBasis)
    global_basis: FilterBasis = Field(default_factory=FilterBasis)
    hidden_dim: int = Field(default=64, ge=1)
    num_mlp_layers: int = Field(default=2, ge=1)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    variant: ModelVariant = ModelVariant.FULL
    init_delta: float = Field(default=0.5, gt=0.0, lt=1.0)
    materialize_global: bool = False

    @property
    def num_metapaths(self) -> int:
        return len(self.metapaths)

    def local_bases(self) -> List[FilterBasis]:
        """One basis per meta-path"""
        if isinstance(self.local_basis, FilterBasis):
            return [self.local_basis] * self.num_metapaths
        if len(self.local_basis) != self.num_metapaths:
            raise ArgumentError(
                f"{len(self.local_basis)} local bases for {self.num_metapaths} meta-paths"
            )
        return list(self.local_basis)


class TorchSparseOperator:
    """Constant sparse matrix applied to torch panels"""

    def __init__(self, matrix: CsrMatrix):
        coo = matrix.to_scipy().tocoo()
        indices = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
        values = torch.as_tensor(coo.data, dtype=DTYPE)
        self.shape = matrix.shape
        self.tensor = torch.sparse_coo_tensor(indices, values, matrix.shape).coalesce()

    def __call__(self, v: torch.Tensor) -> torch.Tensor:
        return torch.sparse.mm(self.tensor, v)


class WeightedSumOperator:
    """v -> sum_i beta_i * op_i(v), never forming the summed matrix"""

    def __init__(self, operators: Sequence[LinearOperator], beta):
        if len(operators) == 0:
            raise ArgumentError("global operator needs at least one meta-path")
        if len(beta) != len(operators):
            raise ArgumentError(f"{len(beta)} weights for {len(operators)} operators")
        shapes = {tuple(op.shape) for op in operators if hasattr(op, "shape")}
        if len(shapes) > 1:
            raise ShapeError(f"meta-path operators disagree in shape: {sorted(shapes)}")
        self.operators = list(operators)
        self.beta = beta
        self.shape = shapes.pop() if shapes else None

    def __call__(self, v):
        out = self.beta[0] * self.operators[0](v)
        for i in range(1, len(self.operators)):
            out = out + self.beta[i] * self.operators[i](v)
        return out


class MaterializedGlobalOperator:
    """Explicit sum_i beta_i A_i on the union sparsity pattern, differentiable in beta"""

    def __init__(self, matrices: Sequence[CsrMatrix]):
        shapes = {m.shape for m in matrices}
        if len(shapes) != 1:
            raise ShapeError(f"meta-path matrices disagree in shape: {sorted(shapes)}")
        self.shape = shapes.pop()
        n = self.shape[1]
        pattern = add_scaled([m.binarize() for m in matrices], [1.0] * len(matrices))
        coo = pattern.to_scipy().tocoo()
        union_keys = coo.row.astype(np.int64) * n + coo.col
        aligned = np.zeros((len(matrices), len(union_keys)))
        for i, m in enumerate(matrices):
            mc = m.to_scipy().tocoo()
            positions = np.searchsorted(union_keys, mc.row.astype(np.int64) * n + mc.col)
            aligned[i, positions] = mc.data
        self.rows = torch.as_tensor(coo.row, dtype=torch.long)
        self.cols = torch.as_tensor(coo.col, dtype=torch.long)
        self.aligned = torch.as_tensor(aligned, dtype=DTYPE)

    def bind(self, beta) -> LinearOperator:
        if not torch.is_tensor(beta):
            beta = torch.as_tensor(np.asarray(beta, dtype=np.float64), dtype=DTYPE)
        values = beta @ self.aligned

        def apply(v: torch.Tensor) -> torch.Tensor:
            out = torch.zeros(self.shape[0], v.shape[1], dtype=v.dtype)
            return out.index_add(0, self.rows, values.unsqueeze(1) * v[self.cols])

        return apply


def global_operator(subgraphs: Sequence, beta) -> WeightedSumOperator:
    """Lazy global adjacency over meta-path subgraphs, CSR matrices or operators"""
    operators = []
    for item in subgraphs:
        if isinstance(item, MetaPathSubgraph):
            operators.append(SparseOperator(item.norm_adj))
        elif isinstance(item, CsrMatrix):
            operators.append(SparseOperator(item))
        else:
            operators.append(item)
    return WeightedSumOperator(operators, beta)


def materialize_global(subgraphs: Sequence[MetaPathSubgraph], beta: Sequence[float]) -> CsrMatrix:
    """Explicit global adjacency; only sensible for small graphs"""
    return add_scaled([s.norm_adj for s in subgraphs], [float(b) for b in beta])


def meta_path_importance(beta) -> List[float]:
    """|beta_i| / sum_j |beta_j|"""
    weights = np.abs(np.asarray(beta, dtype=np.float64))
    total = weights.sum()
    if total == 0:
        return [0.0] * len(weights)
    return (weights / total).tolist()


class GraphContext:
    """Meta-path subgraphs and target features, ready for the model"""

    def __init__(
        self,
        subgraphs: Sequence[MetaPathSubgraph],
        features,
        materialize_global: bool = False,
    ):
        if not subgraphs:
            raise ArgumentError("at least one meta-path subgraph is required")
        n = subgraphs[0].norm_adj.n_rows
        for sub in subgraphs:
            if sub.norm_adj.shape != (n, n):
                raise ShapeError(f"subgraph '{sub.path.name}' has shape {sub.norm_adj.shape}")
        self.x = torch.as_tensor(np.asarray(features), dtype=DTYPE)
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise ShapeError(f"features have shape {tuple(self.x.shape)}, expected ({n}, d)")

        self.subgraphs = list(subgraphs)
        self.operators = [TorchSparseOperator(s.norm_adj) for s in subgraphs]
        self.materialized = (
            MaterializedGlobalOperator([s.norm_adj for s in subgraphs]) if materialize_global else None
        )

    @classmethod
    def from_graph(
        cls,
        graph: HeteroGraph,
        paths: Sequence[MetaPath],
        binarize: bool = False,
        drop_selfloops: bool = True,
        materialize_global: bool = False,
    ) -> "GraphContext":
        subgraphs = [
            build_subgraph(graph, p, binarize=binarize, drop_selfloops=drop_selfloops) for p in paths
        ]
        return cls(subgraphs, graph.features, materialize_global=materialize_global)

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    @property
    def metapath_names(self) -> List[str]:
        return [s.path.name for s in self.subgraphs]

    def global_operator(self, beta) -> LinearOperator:
        if self.materialized is not None:
            return self.materialized.bind(beta)
        return WeightedSumOperator(self.operators, beta)


@dataclass
class ForwardTrace:
    """Intermediate representations of one forward pass"""
    z_local: Optional[torch.Tensor]
    z_global: Optional[torch.Tensor]
    z: torch.Tensor
    logits: torch.Tensor
    xw: torch.Tensor
    local_stacks: List[BasisStack] = field(default_factory=list)
    global_stack: Optional[BasisStack] = None
    train_mode: bool = False

    @property
    def has_caches(self) -> bool:
        return self.logits.requires_grad and (bool(self.local_stacks) or self.global_stack is not None)


def gpr_coefficients(order: int, delta: float) -> np.ndarray:
    """delta (1-delta)^k with the last order taking the residual mass"""
    coeffs = delta * (1 - delta) ** np.arange(order + 1)
    coeffs[-1] = (1 - delta) ** order
    return coeffs


class H2SGNN(nn.Module):
    """Learnable tensors: w, alpha, beta, gamma and the MLP"""

    def __init__(self, config: ModelConfig, num_features: int, num_classes: int):
        super().__init__()
        if config.num_metapaths < 1:
            raise ArgumentError("model config names no meta-paths")
        if num_classes < 1 or num_features < 1:
            raise ArgumentError(f"bad dimensions: {num_features} features, {num_classes} classes")
        self.config = config
        self.num_features = num_features
        self.num_classes = num_classes
        self.local_bases = config.local_bases()

        R, K, hidden = config.num_metapaths, config.order, config.hidden_dim
        self.w = nn.Parameter(torch.empty(num_features, hidden, dtype=DTYPE))
        self.alpha = nn.Parameter(torch.empty(R, K + 1, dtype=DTYPE))
        self.beta = nn.Parameter(torch.empty(R, dtype=DTYPE))
        self.gamma = nn.Parameter(torch.empty(K + 1, dtype=DTYPE))

        dims = [hidden] * config.num_mlp_layers + [num_classes]
        self.mlp = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1], dtype=DTYPE) for i in range(config.num_mlp_layers)
        )
        self.reset_parameters()

        self.alpha.requires_grad_(config.variant.uses_local)
        self.beta.requires_grad_(config.variant.uses_global)
        self.gamma.requires_grad_(config.variant.uses_global)

    def reset_parameters(self) -> None:
        bound = 1.0 / np.sqrt(self.num_features)
        with torch.no_grad():
            nn.init.uniform_(self.w, -bound, bound)
            coeffs = torch.as_tensor(
                gpr_coefficients(self.config.order, self.config.init_delta), dtype=DTYPE
            )
            self.alpha.copy_(coeffs.expand_as(self.alpha))
            self.gamma.copy_(coeffs)
            self.beta.fill_(1.0 / self.config.num_metapaths)
        for layer in self.mlp:
            layer.reset_parameters()

    def named_tensors(self) -> Dict[str, nn.Parameter]:
        return dict(self.named_parameters())

    def map_features(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.w

    def _check_context(self, context: GraphContext) -> None:
        if context.num_features != self.num_features:
            raise ShapeError(f"model expects {self.num_features} features, got {context.num_features}")
        if len(context.operators) != self.config.num_metapaths:
            raise ShapeError(
                f"model expects {self.config.num_metapaths} meta-paths, got {len(context.operators)}"
            )

    def local_filtering(
        self, context: GraphContext, xw: torch.Tensor
    ) -> Tuple[torch.Tensor, List[BasisStack]]:
        """Z_l = sum_i sum_k alpha_ik h_ik(A_i) XW"""
        K = self.config.order
        stacks = [
            propagate_basis(basis, op, xw, K)
            for basis, op in zip(self.local_bases, context.operators)
        ]
        z_local = contract(stacks[0], self.alpha[0])
        for i in range(1, len(stacks)):
            z_local = z_local + contract(stacks[i], self.alpha[i])
        return z_local, stacks

    def global_filtering(
        self, context: GraphContext, xw: torch.Tensor
    ) -> Tuple[torch.Tensor, BasisStack]:
        """Z_g = sum_k gamma_k g_k(sum_i beta_i A_i) XW"""
        stack = propagate_basis(
            self.config.global_basis, context.global_operator(self.beta), xw, self.config.order
        )
        return contract(stack, self.gamma), stack

    def head(self, z: torch.Tensor, train_mode: bool) -> torch.Tensor:
        h = F.dropout(z, p=self.config.dropout, training=train_mode)
        for layer in self.mlp[:-1]:
            h = F.relu(layer(h))
            h = F.dropout(h, p=self.config.dropout, training=train_mode)
        return self.mlp[-1](h)

    def forward(self, context: GraphContext, train_mode: bool = False) -> ForwardTrace:
        self._check_context(context)
        xw = self.map_features(context.x)
        variant = self.config.variant

        z_local, local_stacks = (None, [])
        z_global, global_stack = (None, None)
        if variant.uses_local:
            z_local, local_stacks = self.local_filtering(context, xw)
        if variant.uses_global:
            z_global, global_stack = self.global_filtering(context, xw)

        if variant == ModelVariant.FULL:
            z = z_local + z_global
        else:
            z = z_local if z_local is not None else z_global

        return ForwardTrace(
            z_local=z_local,
            z_global=z_global,
            z=z,
            logits=self.head(z, train_mode),
            xw=xw,
            local_stacks=local_stacks,
            global_stack=global_stack,
            train_mode=train_mode,
        )

    def coefficients(self) -> Dict[str, list]:
        """alpha, beta, gamma as plain lists"""
        return {
            "alpha": self.alpha.detach().tolist(),
            "beta": self.beta.detach().tolist(),
            "gamma": self.gamma.detach().tolist(),
        }

    def filter_parameter_count(self) -> int:
        """Learnable filter coefficients for the configured variant"""
        return sum(
            p.numel() for name, p in self.named_parameters()
            if name in ("alpha", "beta", "gamma") and p.requires_grad
        )


def build_model(config: ModelConfig, num_features: int, num_classes: int, seed: int = 0) -> H2SGNN:
    """Seeded construction so a given seed always yields the same initial weights"""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = H2SGNN(config, num_features, num_classes)
    return model


def cross_entropy_loss(logits: torch.Tensor, labels, mask) -> torch.Tensor:
    """Mean cross-entropy over the masked nodes"""
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.long)
    if mask.numel() == 0:
        raise ArgumentError("loss mask is empty")
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    target = labels[mask]
    if torch.any(target < 0):
        raise ArgumentError("loss mask contains unlabeled nodes")
    return F.cross_entropy(logits[mask], target, reduction="mean")
