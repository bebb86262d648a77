"""
H2SGNN Storage

Run directories: per-seed reports, the seed aggregate, model checkpoints and
an append-only run history.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError

from src.errors import FormatError
from src.hetgraph import MetaPath
from src.model import DTYPE, H2SGNN, ModelConfig
from src.train import AggregateReport, TrainReport

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "h2sgnn-checkpoint"
CHECKPOINT_VERSION = 1


class TensorBlob(BaseModel):
    """Row-major flattened tensor"""
    shape: List[int]
    data: List[float]


class Checkpoint(BaseModel):
    """Everything needed to rebuild a trained model and its inputs"""
    model_config = ConfigDict(extra="forbid")

    format: str
    version: int
    config: ModelConfig
    num_features: int
    num_classes: int
    metapaths: List[MetaPath]
    binarize: bool = False
    drop_selfloops: bool = True
    tensors: Dict[str, TensorBlob]


def checkpoint_from_model(
    model: H2SGNN,
    paths: Sequence[MetaPath],
    binarize: bool = False,
    drop_selfloops: bool = True,
) -> Checkpoint:
    tensors = {
        name: TensorBlob(shape=list(t.shape), data=t.detach().reshape(-1).tolist())
        for name, t in model.state_dict().items()
    }
    return Checkpoint(
        format=CHECKPOINT_FORMAT,
        version=CHECKPOINT_VERSION,
        config=model.config,
        num_features=model.num_features,
        num_classes=model.num_classes,
        metapaths=list(paths),
        binarize=binarize,
        drop_selfloops=drop_selfloops,
        tensors=tensors,
    )


def model_from_checkpoint(checkpoint: Checkpoint) -> H2SGNN:
    """Rebuild the model and load its tensors"""
    model = H2SGNN(checkpoint.config, checkpoint.num_features, checkpoint.num_classes)
    expected = model.state_dict()
    if set(expected) != set(checkpoint.tensors):
        missing = sorted(set(expected) - set(checkpoint.tensors))
        extra = sorted(set(checkpoint.tensors) - set(expected))
        raise FormatError(f"checkpoint tensors do not match the model (missing {missing}, unexpected {extra})")

    state = {}
    for name, blob in checkpoint.tensors.items():
        if int(np.prod(blob.shape)) != len(blob.data):
            raise FormatError(f"tensor '{name}': shape {blob.shape} but {len(blob.data)} values")
        if tuple(blob.shape) != tuple(expected[name].shape):
            raise FormatError(
                f"tensor '{name}': shape {blob.shape}, model expects {list(expected[name].shape)}"
            )
        state[name] = torch.tensor(blob.data, dtype=DTYPE).reshape(blob.shape)
    model.load_state_dict(state)
    return model


def load_checkpoint(path: Union[str, Path]) -> Tuple[H2SGNN, Checkpoint]:
    """Read a checkpoint file; anything malformed raises FormatError"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {raw.get('version')!r}")
    try:
        checkpoint = Checkpoint.model_validate(raw)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e
    return model_from_checkpoint(checkpoint), checkpoint


class RunStorage:
    """Manages one output directory"""

    def __init__(self, output_dir: Union[str, Path] = "runs"):
        self.data_dir = Path(output_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

    def report_path(self, seed: int) -> Path:
        return self.data_dir / f"report_seed{seed}.json"

    def checkpoint_path(self, seed: int) -> Path:
        return self.data_dir / f"checkpoint_seed{seed}.json"

    def _write(self, path: Path, payload: dict) -> Path:
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
        logger.info("saved %s", path)
        return path

    def save_report(self, report: TrainReport) -> Path:
        return self._write(self.report_path(report.seed), report.model_dump(mode="json"))

    def load_report(self, seed: int) -> TrainReport:
        path = self.report_path(seed)
        try:
            with open(path, "r") as f:
                return TrainReport.model_validate(json.load(f))
        except (json.JSONDecodeError, ValidationError) as e:
            raise FormatError(f"{path}: {e}") from e

    def save_aggregate(self, aggregate: AggregateReport) -> Path:
        return self._write(self.data_dir / "aggregate.json", aggregate.model_dump(mode="json"))

    def save_checkpoint(
        self,
        model: H2SGNN,
        paths: Sequence[MetaPath],
        seed: int,
        binarize: bool = False,
        drop_selfloops: bool = True,
    ) -> Path:
        checkpoint = checkpoint_from_model(model, paths, binarize=binarize, drop_selfloops=drop_selfloops)
        return self._write(self.checkpoint_path(seed), checkpoint.model_dump(mode="json"))

    def append_history(self, report: TrainReport, dataset: str = "") -> None:
        """Add one finished run to history.json"""
        history_file = self.data_dir / "history.json"
        if history_file.exists():
            with open(history_file, "r") as f:
                history = json.load(f)
        else:
            history = {"entries": []}

        history["entries"].append(
            {
                "timestamp": datetime.now().isoformat(),
                "dataset": dataset,
                "seed": report.seed,
                "variant": report.variant,
                "best_epoch": report.best_epoch,
                "test_micro_f1": report.test_micro_f1,
                "test_macro_f1": report.test_macro_f1,
            }
        )
        with open(history_file, "w") as f:
            json.dump(history, f, indent=2)

    def get_history(self) -> List[dict]:
        history_file = self.data_dir / "history.json"
        if not history_file.exists():
            return []
        with open(history_file, "r") as f:
            return json.load(f).get("entries", [])
