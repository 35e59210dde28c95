"""
Continuous PINN Training Module

Jointly fits a time-to-state network y^NN(t) to data and penalizes the ODE
residual dy^NN/dt - f at collocation times, where f is either a learned
right-hand side f^NN(y^NN) or the known reactor balances with a learned
growth rate mu^NN(y^NN). Data need not be uniformly spaced.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .autodiff import DualScalar, square
from .bioreactor import FbrParams, fbr_rhs_with_nn_mu
from .errors import ContractViolation
from .nn import MlpModel, NormStats, mlp_apply, mlp_eval, mlp_init
from .ode import Trajectory
from .train_discrete import constitutive_norm, dynamics_norm
from .training import ChunkRunner, TrainReport, make_chunks, run_adam, taped

logger = logging.getLogger(__name__)

WINDOW_TOL = 1e-9


class ContinuousTrainConfig(BaseModel):
    """Settings for continuous (collocation) training."""
    target: Literal["full_dynamics", "constitutive"] = "full_dynamics"
    n_collocation: int = Field(501, ge=1)
    collocation_sampling: Literal["uniform_grid", "random_uniform"] = "uniform_grid"
    w_data: float = Field(1.0, gt=0)
    w_residual: float = Field(1.0, ge=0)
    iterations: int = Field(20000, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = 7
    time_scaling: bool = True
    normalize: bool = True
    normalized_loss: bool = False
    state_hidden: List[int] = Field(default_factory=lambda: [32, 32, 32])
    aux_hidden: Optional[List[int]] = None
    mu_inputs: Literal["state", "substrate"] = "state"
    log_every: int = Field(100, gt=0)
    threads: int = Field(1, ge=1)

    def state_layer_sizes(self) -> List[int]:
        return [1] + list(self.state_hidden) + [3]

    def aux_layer_sizes(self) -> List[int]:
        if self.target == "full_dynamics":
            return [3] + list(self.aux_hidden or [64, 64]) + [3]
        n_in = 3 if self.mu_inputs == "state" else 1
        return [n_in] + list(self.aux_hidden or [32, 32]) + [1]

    def adam_hyper(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass(frozen=True)
class PinnPair:
    """y^NN (1 -> 3) with f^NN (3 -> 3) or mu^NN (3 -> 1, or 1 -> 1 on S)."""
    y_model: MlpModel
    aux_model: MlpModel

    def __post_init__(self):
        if self.y_model.input_width != 1 or self.y_model.output_width != 3:
            raise ContractViolation(f"state network must map 1 -> 3, got {self.y_model.layer_sizes}")
        if self.aux_model.output_width not in (1, 3):
            raise ContractViolation(f"auxiliary network has unsupported widths {self.aux_model.layer_sizes}")

    @property
    def target(self) -> str:
        return "full_dynamics" if self.aux_model.output_width == 3 else "constitutive"

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.y_model.params, self.aux_model.params])

    def with_params(self, params: np.ndarray) -> "PinnPair":
        ny = self.y_model.n_params
        return PinnPair(self.y_model.with_params(params[:ny]), self.aux_model.with_params(params[ny:]))


def sample_collocation(config: ContinuousTrainConfig, t_min: float, t_max: float) -> np.ndarray:
    """Collocation times on [t_min, t_max]: an equispaced grid with both
    endpoints, or sorted seeded uniform draws."""
    if not t_max > t_min:
        raise ContractViolation(f"collocation interval must be non-empty, got [{t_min}, {t_max}]")
    if config.collocation_sampling == "uniform_grid":
        return np.linspace(t_min, t_max, config.n_collocation)
    rng = np.random.default_rng(config.seed)
    return np.sort(rng.uniform(t_min, t_max, config.n_collocation))


def _component_scale(y_model: MlpModel, normalized: bool) -> np.ndarray:
    if normalized and y_model.norm is not None:
        return y_model.norm.output_std
    return np.ones(y_model.output_width)


@dataclass
class _Problem:
    pair: PinnPair
    times: np.ndarray
    states: np.ndarray
    colloc: np.ndarray
    scale: np.ndarray
    p: Optional[FbrParams]

    def split(self, params):
        if params is None:
            return self.pair.y_model.params, self.pair.aux_model.params
        ny = self.pair.y_model.n_params
        return params[:ny], params[ny:]

    def data_sse(self, sl: slice, params=None):
        Py, _ = self.split(params)
        y = mlp_apply(self.pair.y_model, self.times[sl, None], params=Py)
        return square((y - self.states[sl]) / self.scale).sum()

    def residual_sse(self, sl: slice, params=None):
        Py, Pa = self.split(params)
        col = self.colloc[sl, None]
        out = mlp_apply(self.pair.y_model, DualScalar(col, np.ones_like(col)), params=Py)
        if self.pair.target == "full_dynamics":
            f = mlp_apply(self.pair.aux_model, out.value, params=Pa)
        else:
            f = fbr_rhs_with_nn_mu(out.value, 0.0, self.p, self.pair.aux_model, params=Pa, check_volume=False)
        return square((out.tangent - f) / self.scale).sum()


def _problem(pair: PinnPair, data: Trajectory, colloc_times: Sequence[float], p: Optional[FbrParams],
             normalized: bool) -> _Problem:
    colloc = np.asarray(colloc_times, dtype=np.float64).reshape(-1)
    if colloc.size < 1:
        raise ContractViolation("at least one collocation time is required")
    lo, hi = float(data.times[0]), float(data.times[-1])
    if colloc.min() < lo - WINDOW_TOL or colloc.max() > hi + WINDOW_TOL:
        raise ContractViolation(f"collocation times must lie within the data window [{lo}, {hi}]")
    if data.dimension != 3:
        raise ContractViolation(f"state data must have 3 components, got {data.dimension}")
    if pair.target == "constitutive" and p is None:
        raise ContractViolation("constitutive loss requires reactor constants")
    return _Problem(pair, data.times, data.states, colloc, _component_scale(pair.y_model, normalized), p)


def _terms(problem: _Problem, params=None, skip_residual: bool = False) -> Tuple[float, float]:
    data_sse = 0.0
    for sl in make_chunks(problem.times.size):
        data_sse += float(problem.data_sse(sl, params))
    residual_sse = 0.0
    if not skip_residual:
        for sl in make_chunks(problem.colloc.size):
            residual_sse += float(problem.residual_sse(sl, params))
    return data_sse / problem.times.size, residual_sse / problem.colloc.size


def _combine(data_term: float, residual_term: float, w_data: float, w_residual: float) -> Tuple[float, float, float]:
    total = w_data * data_term + w_residual * residual_term
    if not (np.isfinite(data_term) and np.isfinite(residual_term)):
        logger.warning(f"Non-finite continuous loss terms: data={data_term}, residual={residual_term}")
    return total, data_term, residual_term


def continuous_loss_dynamics(
    pair: PinnPair,
    data: Trajectory,
    colloc_times: Sequence[float],
    w_data: float = 1.0,
    w_residual: float = 1.0,
    normalized: bool = False,
) -> Tuple[float, float, float]:
    """Data misfit of y^NN plus the residual dy^NN/dt - f^NN(y^NN).

    Returns:
        (total, data_term, residual_term) with
        total = w_data * data_term + w_residual * residual_term
    """
    if pair.target != "full_dynamics":
        raise ContractViolation("continuous_loss_dynamics needs an f^NN auxiliary network")
    problem = _problem(pair, data, colloc_times, None, normalized)
    return _combine(*_terms(problem), w_data, w_residual)


def continuous_loss_constitutive(
    pair: PinnPair,
    data: Trajectory,
    colloc_times: Sequence[float],
    p: FbrParams,
    w_data: float = 1.0,
    w_residual: float = 1.0,
    normalized: bool = False,
) -> Tuple[float, float, float]:
    """Data misfit of y^NN plus the residual of the reactor balances with
    mu^NN evaluated on y^NN."""
    if pair.target != "constitutive":
        raise ContractViolation("continuous_loss_constitutive needs a mu^NN auxiliary network")
    problem = _problem(pair, data, colloc_times, p, normalized)
    return _combine(*_terms(problem), w_data, w_residual)


def continuous_loss_and_grad(
    pair: PinnPair,
    data: Trajectory,
    colloc_times: Sequence[float],
    p: Optional[FbrParams] = None,
    w_data: float = 1.0,
    w_residual: float = 1.0,
    normalized: bool = False,
    params: Optional[np.ndarray] = None,
    runner: Optional[ChunkRunner] = None,
) -> Tuple[float, np.ndarray]:
    """Total continuous loss and its gradient over the concatenated parameters
    (y^NN first, then the auxiliary network)."""
    problem = _problem(pair, data, colloc_times, p, normalized)
    params = pair.params if params is None else params
    runner = runner or ChunkRunner()
    data_sse, data_grad = runner.reduce(
        lambda sl: taped(lambda P: problem.data_sse(sl, P), params),
        make_chunks(problem.times.size),
        params.size,
    )
    total = w_data * (data_sse / problem.times.size)
    grad = w_data * (data_grad / problem.times.size)
    if w_residual > 0:
        res_sse, res_grad = runner.reduce(
            lambda sl: taped(lambda P: problem.residual_sse(sl, P), params),
            make_chunks(problem.colloc.size),
            params.size,
        )
        total = total + w_residual * (res_sse / problem.colloc.size)
        grad = grad + w_residual * (res_grad / problem.colloc.size)
    return total, grad


def state_norm(data: Trajectory, time_scaling: bool, normalize: bool) -> Optional[NormStats]:
    """Time input mapped to [-1, 1] over the data window; outputs de-normalized
    with the data's per-component statistics."""
    if not time_scaling and not normalize:
        return None
    lo, hi = float(data.times[0]), float(data.times[-1])
    in_mean, in_std = ((lo + hi) / 2.0, (hi - lo) / 2.0) if time_scaling else (0.0, 1.0)
    if normalize:
        out_mean = data.states.mean(axis=0)
        std = data.states.std(axis=0)
        out_std = np.where(std < 1e-12, 1.0, std)
    else:
        out_mean, out_std = np.zeros(3), np.ones(3)
    return NormStats(np.array([in_mean]), np.array([in_std]), out_mean, out_std)


def init_pair(config: ContinuousTrainConfig, data: Trajectory, p: Optional[FbrParams] = None) -> PinnPair:
    """Seeded y^NN and auxiliary networks with their normalization."""
    y_model = mlp_init(config.state_layer_sizes(), config.seed, state_norm(data, config.time_scaling, config.normalize))
    aux_norm = None
    if config.normalize:
        aux_norm = dynamics_norm([data]) if config.target == "full_dynamics" else \
            constitutive_norm([data], p, config.mu_inputs)
    aux_model = mlp_init(config.aux_layer_sizes(), config.seed + 1, aux_norm)
    return PinnPair(y_model, aux_model)


def train_continuous(
    config: ContinuousTrainConfig,
    data: Trajectory,
    p: Optional[FbrParams] = None,
) -> TrainReport:
    """Jointly train y^NN and the auxiliary network with Adam.

    Returns:
        TrainReport whose final_model is f^NN or mu^NN and whose state_model
        is y^NN

    Raises:
        ContractViolation: On invalid data or a missing p
        TrainingDivergence: If the loss becomes non-finite
    """
    if config.target == "constitutive" and p is None:
        raise ContractViolation("constitutive training requires reactor constants")
    if len(data) < 2:
        raise ContractViolation("continuous training needs at least 2 samples")
    lo, hi = float(data.times[0]), float(data.times[-1])
    colloc = sample_collocation(config, lo, hi)
    pair = init_pair(config, data, p)
    logger.info(
        f"Continuous training ({config.target}) on {len(data)} samples over [{lo}, {hi}], "
        f"{colloc.size} collocation points ({config.collocation_sampling})"
    )
    if config.w_residual == 0:
        logger.info("Residual weight is 0; fitting y^NN to data only")

    started = time.perf_counter()
    with ChunkRunner(config.threads) as runner:
        params, history = run_adam(
            lambda P: continuous_loss_and_grad(
                pair, data, colloc, p, config.w_data, config.w_residual, config.normalized_loss, P, runner
            ),
            pair.params,
            config.iterations,
            config.adam_hyper(),
            config.log_every,
            label=f"continuous/{config.target}",
        )
    elapsed = time.perf_counter() - started
    trained = pair.with_params(params)
    data_term, residual_term = _terms(_problem(trained, data, colloc, p, False))
    extras = {"data_term": data_term, "residual_term": residual_term}
    if config.normalized_loss:
        scaled = _terms(_problem(trained, data, colloc, p, True))
        extras.update({"scaled_data_term": scaled[0], "scaled_residual_term": scaled[1]})
    logger.info(
        f"Continuous training finished in {elapsed:.1f}s: data term {data_term:.3e}, residual term {residual_term:.3e}"
    )
    return TrainReport(
        method="continuous",
        target=config.target,
        loss_history=history,
        final_model=trained.aux_model,
        config=config.model_dump(),
        elapsed=elapsed,
        state_model=trained.y_model,
        data_window=(lo, hi),
        extras=extras,
    )


def data_window_of(y_model: MlpModel) -> Optional[Tuple[float, float]]:
    """Training window encoded in the time scaling of y^NN, if any."""
    if y_model.norm is None:
        return None
    mean, std = float(y_model.norm.input_mean[0]), float(y_model.norm.input_std[0])
    if mean == 0.0 and std == 1.0:
        return None
    return mean - std, mean + std


def interpolate_state(y_model: MlpModel, t: float, window: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """State predicted by y^NN at time t; warns when t is outside the training window."""
    window = window if window is not None else data_window_of(y_model)
    if window is not None and not (window[0] - WINDOW_TOL <= t <= window[1] + WINDOW_TOL):
        logger.warning(f"t={t} is outside the training window {window}; y^NN is extrapolating")
    return mlp_eval(y_model, [t])
