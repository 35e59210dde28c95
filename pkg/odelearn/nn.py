"""
Neural Network Module

Multilayer perceptrons used for the learned right-hand side f^NN, the learned
growth rate mu^NN and the time-to-state network y^NN, together with input and
output normalization, the Adam optimizer and the checkpoint format.
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import tanh, values_of
from .errors import CheckpointError, ContractViolation

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
ACTIVATION = "tanh"
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class NormStats:
    """Per-column statistics applied to network inputs and outputs."""
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray

    def __post_init__(self):
        for name in ("input_mean", "input_std", "output_mean", "output_std"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if np.any(self.input_std <= 0) or np.any(self.output_std <= 0):
            raise ContractViolation("normalization std entries must be > 0")
        if self.input_mean.shape != self.input_std.shape or self.output_mean.shape != self.output_std.shape:
            raise ContractViolation("normalization mean/std widths differ")

    @classmethod
    def identity(cls, n_in: int, n_out: int) -> "NormStats":
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "output_mean": self.output_mean.tolist(),
            "output_std": self.output_std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "NormStats":
        return cls(**{key: np.asarray(data[key], dtype=np.float64) for key in
                      ("input_mean", "input_std", "output_mean", "output_std")})


def param_count(layer_sizes: Sequence[int]) -> int:
    """Number of weights and biases of a dense network."""
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True)
class MlpModel:
    """Dense network with tanh hidden layers and an identity output layer.

    Parameters are one flat vector, layer by layer: the row-major (in, out)
    weight matrix followed by the bias.
    """
    layer_sizes: Tuple[int, ...]
    params: np.ndarray
    norm: Optional[NormStats] = None
    activation: str = ACTIVATION

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=np.float64).reshape(-1))
        if self.params.size != param_count(sizes):
            raise ContractViolation(
                f"expected {param_count(sizes)} parameters for layers {list(sizes)}, got {self.params.size}"
            )
        if self.norm is not None and (
            self.norm.input_mean.size != sizes[0] or self.norm.output_mean.size != sizes[-1]
        ):
            raise ContractViolation("normalization widths do not match the network")

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params: np.ndarray) -> "MlpModel":
        return replace(self, params=np.array(params, dtype=np.float64))

    def with_norm(self, norm: Optional[NormStats]) -> "MlpModel":
        return replace(self, norm=norm)


def _check_layers(layer_sizes: Sequence[int]) -> None:
    if len(layer_sizes) < 2:
        raise ContractViolation(f"need at least 2 layer sizes, got {list(layer_sizes)}")
    if any(int(n) < 1 for n in layer_sizes):
        raise ContractViolation(f"layer widths must be >= 1, got {list(layer_sizes)}")


def mlp_init(layer_sizes: Sequence[int], seed: int, norm: Optional[NormStats] = None) -> MlpModel:
    """Glorot-uniform weights and zero biases, reproducible from the seed.

    Args:
        layer_sizes: Input width first, output width last
        seed: Seed for numpy's default generator
        norm: Optional normalization statistics

    Returns:
        The initialized model
    """
    _check_layers(layer_sizes)
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return MlpModel(tuple(layer_sizes), np.concatenate(chunks), norm)


def mlp_apply(model: MlpModel, x, params=None):
    """Forward pass shared by plain, taped and dual-number evaluation.

    ``x`` and ``params`` may be numpy arrays, tape variables or dual numbers;
    the same sequence of elementary operations is applied in every case.
    """
    P = model.params if params is None else params
    width = values_of(x).shape[-1]
    if width != model.input_width:
        raise ContractViolation(f"input width {width} does not match model input width {model.input_width}")
    norm = model.norm
    h = x
    if norm is not None:
        h = (h - norm.input_mean) / norm.input_std
    offset = 0
    n_layers = len(model.layer_sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(model.layer_sizes[:-1], model.layer_sizes[1:])):
        W = P[offset:offset + n_in * n_out].reshape((n_in, n_out))
        offset += n_in * n_out
        b = P[offset:offset + n_out]
        offset += n_out
        h = h @ W + b
        if i < n_layers - 1:
            h = tanh(h)
    if norm is not None:
        h = h * norm.output_std + norm.output_mean
    return h


def mlp_eval(model: MlpModel, x: Sequence[float]) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    return mlp_apply(model, np.asarray(x, dtype=np.float64))


def fit_norm(inputs: np.ndarray, outputs: np.ndarray) -> NormStats:
    """Per-column mean and population standard deviation.

    Columns whose standard deviation is below 1e-12 get 1.0 instead.

    Raises:
        ContractViolation: If fewer than two rows are given
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    outputs = np.asarray(outputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    if inputs.shape[0] < 2 or outputs.shape[0] < 2:
        raise ContractViolation("fit_norm needs at least 2 rows")

    def stats(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        std = a.std(axis=0)
        return a.mean(axis=0), np.where(std < STD_FLOOR, 1.0, std)

    in_mean, in_std = stats(inputs)
    out_mean, out_std = stats(outputs)
    return NormStats(in_mean, in_std, out_mean, out_std)


@dataclass(frozen=True)
class AdamState:
    """Adam moments and hyperparameters."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, **hyper) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, **hyper)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update.

    Returns:
        (new parameters, new optimizer state); inputs are not modified

    Raises:
        ContractViolation: If the vector lengths disagree
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape):
        raise ContractViolation(
            f"adam length mismatch: params {params.shape}, grads {grads.shape}, moments {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)


# Checkpoint format

_PARAMS_PLACEHOLDER = "__ODELEARN_PARAMS__"


def _format_number(value: float) -> str:
    if not np.isfinite(value):
        raise CheckpointError(f"cannot serialize non-finite parameter {value!r}")
    return f"{value:.17g}"


def model_to_dict(model: MlpModel) -> Dict[str, Any]:
    return {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "norm": model.norm.to_dict() if model.norm is not None else None,
        "params": [float(p) for p in model.params],
    }


def model_from_dict(data: Dict[str, Any]) -> MlpModel:
    try:
        if data["schema_version"] != CHECKPOINT_SCHEMA_VERSION:
            raise CheckpointError(f"unsupported checkpoint schema {data['schema_version']!r}")
        if data.get("activation", ACTIVATION) != ACTIVATION:
            raise CheckpointError(f"unsupported activation {data['activation']!r}")
        norm = NormStats.from_dict(data["norm"]) if data.get("norm") else None
        return MlpModel(tuple(data["layer_sizes"]), np.asarray(data["params"], dtype=np.float64), norm)
    except (KeyError, TypeError, ContractViolation) as e:
        raise CheckpointError(f"invalid model checkpoint: {str(e)}")


def dumps_document(document: Dict[str, Any]) -> str:
    """JSON text in which every ``params`` array uses 17 significant digits.

    Models may appear anywhere in the document as dicts from model_to_dict.
    """
    arrays: List[List[float]] = []

    def strip(node):
        if isinstance(node, dict):
            out = {}
            for key, val in node.items():
                if key == "params" and isinstance(val, list):
                    out[key] = f"{_PARAMS_PLACEHOLDER}{len(arrays)}"
                    arrays.append(val)
                else:
                    out[key] = strip(val)
            return out
        if isinstance(node, list):
            return [strip(v) for v in node]
        return node

    text = json.dumps(strip(document), indent=2, sort_keys=True)
    for i, values in enumerate(arrays):
        rendered = "[" + ", ".join(_format_number(v) for v in values) + "]"
        text = text.replace(f'"{_PARAMS_PLACEHOLDER}{i}"', rendered, 1)
    return text + "\n"


def save_model(model: MlpModel, path: str) -> None:
    """Write a single-model checkpoint."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(dumps_document(model_to_dict(model)))
    logger.info(f"Saved model checkpoint with {model.n_params} parameters to {path}")


def load_model(path: str) -> MlpModel:
    """Read a single-model checkpoint."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {str(e)}")
    return model_from_dict(data)
