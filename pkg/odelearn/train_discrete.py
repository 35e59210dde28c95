"""
Discrete (Multistep) Training Module

Learns f^NN (unknown dynamics) or mu^NN (constitutive relation) by minimizing
the mean squared multistep residual over every window of one or more
uniformly sampled trajectories.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .autodiff import square
from .bioreactor import (
    FbrParams,
    estimate_mu_samples,
    fbr_rhs_with_nn_mu,
)
from .errors import ContractViolation
from .nn import MlpModel, NormStats, fit_norm, mlp_apply, mlp_init
from .ode import UNIFORM_TOL, MultistepScheme, Trajectory, combine_window, scheme_by_name, trajectory_windows
from .training import ChunkRunner, TrainReport, make_chunks, run_adam, taped

logger = logging.getLogger(__name__)

# rhs(states (B, D), times (B,), params) -> (B, D); params may be a tape variable
BatchRhs = Callable[[np.ndarray, np.ndarray, object], object]


class DiscreteTrainConfig(BaseModel):
    """Settings for multistep-residual training."""
    target: Literal["full_dynamics", "constitutive"] = "full_dynamics"
    scheme: str = "trapezoidal"
    iterations: int = Field(50000, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    normalize: bool = True
    seed: int = 7
    hidden: Optional[List[int]] = None
    mu_inputs: Literal["state", "substrate"] = "state"
    log_every: int = Field(100, gt=0)
    threads: int = Field(1, ge=1)

    @field_validator("scheme")
    @classmethod
    def _known_scheme(cls, value: str) -> str:
        scheme_by_name(value)
        return value

    def layer_sizes(self) -> List[int]:
        if self.target == "full_dynamics":
            return [3] + list(self.hidden or [64, 64]) + [3]
        n_in = 3 if self.mu_inputs == "state" else 1
        return [n_in] + list(self.hidden or [32, 32]) + [1]

    def adam_hyper(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class WindowSet:
    """Pooled multistep windows; ys[m] / ts[m] hold y[n-m] / t[n-m] per window."""
    ys: List[np.ndarray]
    ts: List[np.ndarray]
    dt: float

    @property
    def count(self) -> int:
        return self.ys[0].shape[0]


def _canonical_order(trajectories: Sequence[Trajectory]) -> List[Trajectory]:
    return sorted(
        trajectories,
        key=lambda tr: (float(tr.times[0]), tuple(tr.states[0].tolist()), len(tr), tuple(tr.states[-1].tolist())),
    )


def build_windows(trajectories: Sequence[Trajectory], M: int) -> WindowSet:
    """Pool the windows of every trajectory; no window spans two trajectories.

    Raises:
        ContractViolation: On empty input, non-uniform or too-short
            trajectories, or trajectories with different spacing
    """
    if not trajectories:
        raise ContractViolation("at least one trajectory is required")
    dts = []
    per_traj = []
    for traj in _canonical_order(trajectories):
        windows = trajectory_windows(traj, M)
        dts.append(traj.uniform_dt)
        N = len(traj) - 1
        times = [traj.times[M - m:N + 1 - m] for m in range(M + 1)]
        per_traj.append((windows, times))
    if max(dts) - min(dts) > UNIFORM_TOL:
        raise ContractViolation(f"all trajectories must share one dt, got {sorted(set(dts))}")
    ys = [np.concatenate([w[m] for w, _ in per_traj], axis=0) for m in range(M + 1)]
    ts = [np.concatenate([t[m] for _, t in per_traj], axis=0) for m in range(M + 1)]
    return WindowSet(ys, ts, float(dts[0]))


def _window_sse(rhs: BatchRhs, windows: WindowSet, sl: slice, scheme: MultistepScheme, params):
    ys = [y[sl] for y in windows.ys]
    w = ys[0].shape[0]
    f_all = rhs(np.concatenate(ys, axis=0), np.concatenate([t[sl] for t in windows.ts]), params)
    fs = [f_all[m * w:(m + 1) * w] for m in range(scheme.M + 1)]
    residual = combine_window(scheme, ys, fs, windows.dt)
    return square(residual).sum()


def window_loss(rhs: BatchRhs, windows: WindowSet, scheme: MultistepScheme, params=None) -> float:
    """Mean over windows of the squared residual norm, summed in chunk order."""
    total = 0.0
    for sl in make_chunks(windows.count):
        total += float(_window_sse(rhs, windows, sl, scheme, params))
    return total / windows.count


def window_loss_and_grad(
    rhs: BatchRhs,
    windows: WindowSet,
    scheme: MultistepScheme,
    params: np.ndarray,
    runner: Optional[ChunkRunner] = None,
):
    """Window loss and its gradient with respect to ``params``."""
    runner = runner or ChunkRunner()
    loss, grad = runner.reduce(
        lambda sl: taped(lambda P: _window_sse(rhs, windows, sl, scheme, P), params),
        make_chunks(windows.count),
        params.size,
    )
    return loss / windows.count, grad / windows.count


def dynamics_rhs(model: MlpModel) -> BatchRhs:
    return lambda y, t, P: mlp_apply(model, y, params=model.params if P is None else P)


def constitutive_rhs(mu_model: MlpModel, p: FbrParams) -> BatchRhs:
    return lambda y, t, P: fbr_rhs_with_nn_mu(y, t, p, mu_model, params=mu_model.params if P is None else P)


def discrete_loss(
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray],
    trajectories: Sequence[Trajectory],
    scheme: MultistepScheme,
) -> float:
    """Window MSE for an arbitrary batched right-hand side rhs(states, times)."""
    windows = build_windows(trajectories, scheme.M)
    return window_loss(lambda y, t, P: rhs(y, t), windows, scheme)


def discrete_loss_dynamics(model: MlpModel, trajectories: Sequence[Trajectory], scheme: MultistepScheme) -> float:
    """Multistep MSE with f replaced by f^NN."""
    return window_loss(dynamics_rhs(model), build_windows(trajectories, scheme.M), scheme)


def discrete_loss_constitutive(
    mu_model: MlpModel,
    trajectories: Sequence[Trajectory],
    scheme: MultistepScheme,
    p: FbrParams,
) -> float:
    """Multistep MSE of the known balances with mu^NN as growth rate."""
    return window_loss(constitutive_rhs(mu_model, p), build_windows(trajectories, scheme.M), scheme)


def _pooled(trajectories: Sequence[Trajectory]) -> np.ndarray:
    return np.concatenate([tr.states for tr in trajectories], axis=0)


def dynamics_norm(trajectories: Sequence[Trajectory]) -> NormStats:
    """Input stats from states, output stats from finite-difference derivatives."""
    trajectories = _canonical_order(trajectories)
    derivatives = np.concatenate([np.gradient(tr.states, tr.times, axis=0) for tr in trajectories], axis=0)
    return fit_norm(_pooled(trajectories), derivatives)


def constitutive_norm(trajectories: Sequence[Trajectory], p: FbrParams, mu_inputs: str = "state") -> NormStats:
    """Input stats from states (or S), output stats from estimated growth rates."""
    trajectories = _canonical_order(trajectories)
    states = _pooled(trajectories)
    inputs = states if mu_inputs == "state" else states[:, 1:2]
    mu = np.concatenate([estimate_mu_samples(tr, p) for tr in trajectories])
    return fit_norm(inputs, mu[:, None])


def train_discrete(
    config: DiscreteTrainConfig,
    trajectories: Sequence[Trajectory],
    p: Optional[FbrParams] = None,
) -> TrainReport:
    """Train f^NN or mu^NN on the multistep residual of the given data.

    Args:
        config: Training settings
        trajectories: Uniformly sampled trajectories sharing one dt
        p: Reactor constants, required for the constitutive target

    Returns:
        TrainReport with the trained network

    Raises:
        ContractViolation: On invalid data or a missing p
        TrainingDivergence: If the loss becomes non-finite
    """
    if config.target == "constitutive" and p is None:
        raise ContractViolation("constitutive training requires reactor constants")
    scheme = scheme_by_name(config.scheme)
    windows = build_windows(trajectories, scheme.M)
    logger.info(
        f"Discrete training ({config.target}, {scheme.name}) on {len(trajectories)} trajectories, "
        f"{windows.count} windows, dt={windows.dt}"
    )

    norm = None
    if config.normalize:
        norm = dynamics_norm(trajectories) if config.target == "full_dynamics" else \
            constitutive_norm(trajectories, p, config.mu_inputs)
    model = mlp_init(config.layer_sizes(), config.seed, norm)
    rhs = dynamics_rhs(model) if config.target == "full_dynamics" else constitutive_rhs(model, p)

    started = time.perf_counter()
    with ChunkRunner(config.threads) as runner:
        params, history = run_adam(
            lambda P: window_loss_and_grad(rhs, windows, scheme, P, runner),
            model.params.copy(),
            config.iterations,
            config.adam_hyper(),
            config.log_every,
            label=f"discrete/{config.target}",
        )
    elapsed = time.perf_counter() - started
    logger.info(f"Discrete training finished in {elapsed:.1f}s")
    return TrainReport(
        method="discrete",
        target=config.target,
        loss_history=history,
        final_model=model.with_params(params),
        config=config.model_dump(),
        elapsed=elapsed,
        data_window=(
            min(float(tr.times[0]) for tr in trajectories),
            max(float(tr.times[-1]) for tr in trajectories),
        ),
    )
