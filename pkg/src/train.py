"""
H2SGNN Training

Gradients of the masked cross-entropy through the whole filter pipeline,
AdamW updates, Micro/Macro-F1 and the early-stopped training loop.
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats
from sklearn.metrics import f1_score

from src.errors import ArgumentError, NonFiniteGradientError, StateError
from src.hetgraph import MetaPath
from src.model import (
    ForwardTrace,
    GraphContext,
    H2SGNN,
    ModelConfig,
    build_model,
    cross_entropy_loss,
    meta_path_importance,
)

if TYPE_CHECKING:
    from src.dataio import DatasetBundle

logger = logging.getLogger(__name__)

COEFFICIENT_PARAMS = ("alpha", "beta", "gamma")


class TrainHyper(BaseModel):
    """Optimizer and schedule settings"""
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=0.005, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    epochs: int = Field(default=2000, ge=1)
    patience: Optional[int] = Field(default=100, ge=1)  # None: never stop early
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    coefficient_lr: Optional[float] = Field(default=None, gt=0)
    coefficient_weight_decay: Optional[float] = Field(default=None, ge=0)


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_micro_f1: float = Field(ge=0, le=1)
    val_macro_f1: float = Field(ge=0, le=1)


class TrainReport(BaseModel):
    """Outcome of one seeded training run"""
    seed: int
    variant: str
    metapaths: List[str]
    epochs: List[EpochRecord]
    epochs_run: int
    best_epoch: int
    best_val_micro_f1: float = Field(ge=0, le=1)
    test_micro_f1: float = Field(ge=0, le=1)
    test_macro_f1: float = Field(ge=0, le=1)
    alpha: List[List[float]]
    beta: List[float]
    gamma: List[float]
    meta_path_importance: List[float]


class AggregateReport(BaseModel):
    """Mean and standard error over seeds"""
    variant: str
    seeds: List[int]
    micro_f1_mean: float
    micro_f1_stderr: float
    macro_f1_mean: float
    macro_f1_stderr: float


@dataclass
class Gradients:
    """One gradient tensor per model parameter, shape-matched"""
    tensors: Dict[str, torch.Tensor]
    loss: float

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def non_finite(self) -> List[str]:
        return [name for name, g in self.tensors.items() if not torch.all(torch.isfinite(g))]


def backward(trace: ForwardTrace, labels, mask, model: H2SGNN) -> Gradients:
    """Exact gradients of the masked mean cross-entropy w.r.t. every parameter"""
    if not trace.has_caches:
        raise StateError("trace was produced without gradient tracking; rerun forward outside no_grad")
    loss = cross_entropy_loss(trace.logits, labels, mask)
    params = model.named_tensors()
    trainable = [(name, p) for name, p in params.items() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in trainable], allow_unused=True)

    tensors = {name: torch.zeros_like(p) for name, p in params.items()}
    for (name, _), g in zip(trainable, grads):
        if g is not None:
            tensors[name] = g.detach()
    return Gradients(tensors=tensors, loss=float(loss.detach()))


def build_optimizer(model: H2SGNN, hyper: TrainHyper) -> torch.optim.AdamW:
    """AdamW over trainable parameters; filter coefficients may get their own lr/decay"""
    coefficient, other = [], []
    for name, p in model.named_parameters():
        if p.requires_grad:
            (coefficient if name in COEFFICIENT_PARAMS else other).append(p)

    groups = [{"params": other}]
    if coefficient:
        group = {"params": coefficient}
        if hyper.coefficient_lr is not None:
            group["lr"] = hyper.coefficient_lr
        if hyper.coefficient_weight_decay is not None:
            group["weight_decay"] = hyper.coefficient_weight_decay
        groups.append(group)
    return torch.optim.AdamW(
        groups, lr=hyper.lr, betas=hyper.betas, eps=hyper.eps, weight_decay=hyper.weight_decay
    )


def adam_step(
    params: Mapping[str, torch.nn.Parameter],
    grads: Gradients,
    optimizer: torch.optim.Optimizer,
) -> None:
    """Apply one bias-corrected AdamW update in place"""
    bad = grads.non_finite()
    if bad:
        raise NonFiniteGradientError(
            f"non-finite gradients in {', '.join(bad)} (loss={grads.loss})"
        )
    for name, p in params.items():
        if p.requires_grad:
            p.grad = grads[name].clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def _masked(preds, labels, mask) -> Tuple[np.ndarray, np.ndarray]:
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ArgumentError("metric mask is empty")
    return np.asarray(labels)[mask], np.asarray(preds)[mask]


def _classes(y_true: np.ndarray, y_pred: np.ndarray, num_classes: Optional[int]) -> List[int]:
    if num_classes is None:
        num_classes = int(max(y_true.max(), y_pred.max())) + 1
    return list(range(num_classes))


def micro_f1(preds, labels, mask, num_classes: Optional[int] = None) -> float:
    y_true, y_pred = _masked(preds, labels, mask)
    return float(
        f1_score(y_true, y_pred, labels=_classes(y_true, y_pred, num_classes), average="micro", zero_division=0)
    )


def macro_f1(preds, labels, mask, num_classes: Optional[int] = None) -> float:
    """Unweighted per-class mean; classes seen in neither preds nor labels count as 0"""
    y_true, y_pred = _masked(preds, labels, mask)
    return float(
        f1_score(y_true, y_pred, labels=_classes(y_true, y_pred, num_classes), average="macro", zero_division=0)
    )


def score(model: H2SGNN, context: GraphContext, labels, mask) -> Tuple[float, float, float]:
    """(loss, Micro-F1, Macro-F1) of eval-mode predictions on a mask"""
    with torch.no_grad():
        logits = model(context, train_mode=False).logits
        loss = float(cross_entropy_loss(logits, labels, mask))
    preds = logits.argmax(dim=1).numpy()
    return (
        loss,
        micro_f1(preds, labels, mask, model.num_classes),
        macro_f1(preds, labels, mask, model.num_classes),
    )


def evaluate(model: H2SGNN, context: GraphContext, labels, mask) -> Tuple[float, float]:
    """(Micro-F1, Macro-F1) of eval-mode predictions on a mask"""
    _, micro, macro = score(model, context, labels, mask)
    return micro, macro


class Trainer:
    """Full-graph training with early stopping on validation Micro-F1, ties broken by validation loss"""

    def __init__(
        self,
        context: GraphContext,
        labels,
        splits: Mapping[str, Sequence[int]],
        config: ModelConfig,
        hyper: TrainHyper,
        num_classes: int,
        seed: int = 0,
    ):
        for split in ("train", "val", "test"):
            if len(splits.get(split, [])) == 0:
                raise ArgumentError(f"{split} mask is empty")
        if not config.metapaths:
            config = config.model_copy(update={"metapaths": context.metapath_names})
        self.context = context
        self.labels = np.asarray(labels)
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in splits.items()}
        self.config = config
        self.hyper = hyper
        self.seed = seed
        self.model = build_model(config, context.num_features, num_classes, seed=seed)

    def run(self) -> TrainReport:
        hyper, model = self.hyper, self.model
        train_mask, val_mask = self.splits["train"], self.splits["val"]
        optimizer = build_optimizer(model, hyper)
        records: List[EpochRecord] = []
        best_val, best_loss, best_epoch, best_state, stale = -1.0, float("inf"), 0, None, 0

        with torch.random.fork_rng():
            torch.manual_seed(self.seed)
            for epoch in range(hyper.epochs):
                trace = model(self.context, train_mode=True)
                grads = backward(trace, self.labels, train_mask, model)
                adam_step(model.named_tensors(), grads, optimizer)

                val_loss, val_micro, val_macro = score(model, self.context, self.labels, val_mask)
                records.append(
                    EpochRecord(
                        epoch=epoch,
                        train_loss=grads.loss,
                        val_loss=val_loss,
                        val_micro_f1=val_micro,
                        val_macro_f1=val_macro,
                    )
                )
                logger.debug(
                    "epoch %d loss %.4f val loss %.4f micro %.4f macro %.4f",
                    epoch, grads.loss, val_loss, val_micro, val_macro,
                )

                if val_micro > best_val or (val_micro == best_val and val_loss < best_loss):
                    best_val, best_loss, best_epoch, stale = val_micro, val_loss, epoch, 0
                    best_state = copy.deepcopy(model.state_dict())
                else:
                    stale += 1
                    if hyper.patience is not None and stale >= hyper.patience:
                        logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                        break

        model.load_state_dict(best_state)
        test_micro, test_macro = evaluate(model, self.context, self.labels, self.splits["test"])
        coeffs = model.coefficients()
        logger.info(
            "seed %d: best epoch %d, test micro %.4f macro %.4f", self.seed, best_epoch, test_micro, test_macro
        )
        return TrainReport(
            seed=self.seed,
            variant=self.config.variant.value,
            metapaths=self.context.metapath_names,
            epochs=records,
            epochs_run=len(records),
            best_epoch=best_epoch,
            best_val_micro_f1=best_val,
            test_micro_f1=test_micro,
            test_macro_f1=test_macro,
            alpha=coeffs["alpha"],
            beta=coeffs["beta"],
            gamma=coeffs["gamma"],
            meta_path_importance=meta_path_importance(coeffs["beta"]),
        )


def train(
    bundle: "DatasetBundle",
    paths: Sequence[MetaPath],
    config: ModelConfig,
    hyper: TrainHyper,
    seed: int = 0,
    binarize: bool = False,
    drop_selfloops: bool = True,
) -> Tuple[TrainReport, H2SGNN]:
    """Run one seed end to end; returns the report and the restored best model"""
    context = GraphContext.from_graph(
        bundle.graph,
        paths,
        binarize=binarize,
        drop_selfloops=drop_selfloops,
        materialize_global=config.materialize_global,
    )
    trainer = Trainer(
        context,
        bundle.graph.labels,
        bundle.masks.as_dict(),
        config.model_copy(update={"metapaths": [p.name for p in paths]}),
        hyper,
        num_classes=bundle.graph.num_classes,
        seed=seed,
    )
    return trainer.run(), trainer.model


def aggregate_reports(reports: Sequence[TrainReport]) -> AggregateReport:
    """Mean and standard error of test F1 over seeds"""
    if not reports:
        raise ArgumentError("no reports to aggregate")
    micro = np.array([r.test_micro_f1 for r in reports])
    macro = np.array([r.test_macro_f1 for r in reports])

    def stderr(values: np.ndarray) -> float:
        return float(stats.sem(values)) if len(values) > 1 else 0.0

    return AggregateReport(
        variant=reports[0].variant,
        seeds=[r.seed for r in reports],
        micro_f1_mean=float(micro.mean()),
        micro_f1_stderr=stderr(micro),
        macro_f1_mean=float(macro.mean()),
        macro_f1_stderr=stderr(macro),
    )


def finite_difference_check(
    model: H2SGNN,
    context: GraphContext,
    labels,
    mask,
    eps: float = 1e-4,
) -> Dict[str, float]:
    """Relative error ||analytic - central difference|| / max(norms) per parameter tensor"""
    trace = model(context, train_mode=False)
    analytic = backward(trace, labels, mask, model)

    def loss() -> float:
        with torch.no_grad():
            return float(cross_entropy_loss(model(context, train_mode=False).logits, labels, mask))

    errors = {}
    for name, p in model.named_tensors().items():
        if not p.requires_grad:
            continue
        numeric = torch.zeros_like(p)
        flat, out = p.data.view(-1), numeric.view(-1)
        for j in range(flat.numel()):
            orig = flat[j].item()
            flat[j] = orig + eps
            plus = loss()
            flat[j] = orig - eps
            minus = loss()
            flat[j] = orig
            out[j] = (plus - minus) / (2 * eps)
        a = analytic[name]
        scale = max(float(a.norm()), float(numeric.norm()), 1e-6)
        errors[name] = float((a - numeric).norm()) / scale
    if any(math.isnan(e) for e in errors.values()):
        raise NonFiniteGradientError(f"finite-difference check produced NaN: {errors}")
    return errors
