"""
Persistence Module

Trajectory and table CSVs, training checkpoints and run manifests.

CSV numbers are written with 17 significant digits and read back with
round-trip precision, so a write/read cycle preserves every 64-bit value.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from .bioreactor import STATE_NAMES, FbrParams
from .errors import CheckpointError
from .nn import MlpModel, dumps_document, model_from_dict, model_to_dict
from .ode import Trajectory
from .training import TrainReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
TRAJECTORY_COLUMNS = ["t", *STATE_NAMES]
MANIFEST_SCHEMA_VERSION = 1
# run-specific settings that do not change the numbers
_VOLATILE_CONFIG = ("threads", "log_every")


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def write_frame(frame: pd.DataFrame, path: str) -> None:
    """Write a table as CSV: no index, LF line endings, 17 significant digits."""
    _ensure_parent(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_frame(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_trajectory(traj: Trajectory, path: str) -> None:
    """Trajectory CSV with header t,X,S,V."""
    if traj.dimension != len(STATE_NAMES):
        raise CheckpointError(f"trajectory CSVs hold {len(STATE_NAMES)} states, got {traj.dimension}")
    frame = pd.DataFrame(np.column_stack([traj.times, traj.states]), columns=TRAJECTORY_COLUMNS)
    write_frame(frame, path)
    logger.info(f"Wrote {len(traj)} samples to {path}")


def read_trajectory(path: str) -> Trajectory:
    """Read a trajectory CSV.

    Raises:
        OSError: If the file cannot be opened
        CheckpointError: If the header or values are malformed
    """
    frame = read_frame(path)
    if list(frame.columns) != TRAJECTORY_COLUMNS:
        raise CheckpointError(f"{path}: expected columns {TRAJECTORY_COLUMNS}, got {list(frame.columns)}")
    values = frame.to_numpy(dtype=np.float64)
    if values.shape[0] < 1 or not np.all(np.isfinite(values)):
        raise CheckpointError(f"{path}: trajectory must have at least one finite row")
    try:
        return Trajectory(values[:, 0], values[:, 1:])
    except ValueError as e:
        raise CheckpointError(f"{path}: {str(e)}")


def write_loss_history(history: Sequence[Tuple[int, float]], path: str) -> None:
    frame = pd.DataFrame({"iteration": [int(i) for i, _ in history], "loss": [float(v) for _, v in history]})
    write_frame(frame, path)


def read_loss_history(path: str) -> List[Tuple[int, float]]:
    frame = read_frame(path)
    if list(frame.columns) != ["iteration", "loss"]:
        raise CheckpointError(f"{path}: not a loss-history CSV")
    return [(int(i), float(v)) for i, v in zip(frame["iteration"], frame["loss"])]


@dataclass
class TrainingCheckpoint:
    """A trained model with what is needed to use it again."""
    method: str
    target: str
    model: MlpModel
    state_model: Optional[MlpModel]
    fbr_params: Optional[FbrParams]
    data_window: Optional[Tuple[float, float]]
    config: Dict[str, Any]


def _stable_config(config: Dict[str, Any]) -> Dict[str, Any]:
    return {key: value for key, value in config.items() if key not in _VOLATILE_CONFIG}


def save_training_checkpoint(report: TrainReport, path: str, p: Optional[FbrParams] = None) -> None:
    """Write the trained network in the single-model checkpoint layout, with
    the run's method, target, reactor constants and state network alongside.

    Wall time is not stored, so repeated runs give identical files.
    """
    document = model_to_dict(report.final_model)
    document.update({
        "method": report.method,
        "target": report.target,
        "state_model": model_to_dict(report.state_model) if report.state_model is not None else None,
        "fbr_params": p.model_dump() if p is not None else None,
        "data_window": list(report.data_window) if report.data_window is not None else None,
        "config": _stable_config(report.config),
    })
    _ensure_parent(path)
    with open(path, "w", newline="\n") as f:
        f.write(dumps_document(document))
    logger.info(f"Saved {report.method}/{report.target} checkpoint to {path}")


def load_training_checkpoint(path: str) -> TrainingCheckpoint:
    """Read a checkpoint written by save_training_checkpoint.

    Raises:
        OSError: If the file cannot be opened
        CheckpointError: If the document is malformed
    """
    with open(path, "r") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: invalid JSON: {str(e)}")
    if not isinstance(document, dict):
        raise CheckpointError(f"{path}: checkpoint must be a JSON object")
    model = model_from_dict(document)
    state_doc = document.get("state_model")
    try:
        p = FbrParams(**document["fbr_params"]) if document.get("fbr_params") else None
    except ValidationError as e:
        raise CheckpointError(f"{path}: invalid reactor constants: {str(e)}")
    window = document.get("data_window")
    return TrainingCheckpoint(
        method=document.get("method", "discrete"),
        target=document.get("target", "full_dynamics" if model.output_width == 3 else "constitutive"),
        model=model,
        state_model=model_from_dict(state_doc) if state_doc else None,
        fbr_params=p,
        data_window=(float(window[0]), float(window[1])) if window else None,
        config=document.get("config") or {},
    )


class RunManifest(BaseModel):
    """What produced a set of artifacts, sufficient to reproduce them."""
    schema_version: int = MANIFEST_SCHEMA_VERSION
    command: str
    argv: List[str]
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    seed: Optional[int] = None
    input_hash: str = ""
    source: Optional[str] = None
    elapsed: Optional[float] = None


def hash_inputs(paths: Dict[str, str]) -> str:
    """sha256 over the named input files, in name order."""
    digest = hashlib.sha256()
    for name in sorted(paths):
        digest.update(name.encode("utf-8"))
        with open(paths[name], "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def manifest_path_for(output_path: str) -> str:
    return f"{output_path}.manifest.json"


def write_manifest(manifest: RunManifest, path: str) -> None:
    _ensure_parent(path)
    with open(path, "w", newline="\n") as f:
        f.write(manifest.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote run manifest to {path}")


def read_manifest(path: str) -> RunManifest:
    """Raises CheckpointError on malformed manifests."""
    with open(path, "r") as f:
        text = f.read()
    try:
        manifest = RunManifest.model_validate_json(text)
    except ValidationError as e:
        raise CheckpointError(f"{path}: invalid run manifest: {str(e)}")
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported manifest schema {manifest.schema_version}")
    return manifest
