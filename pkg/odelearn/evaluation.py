"""
Evaluation Module

Rollouts of learned models from (possibly unseen) initial conditions, error
metrics against reference trajectories, growth-rate curve extraction and the
comparison of the four training formulations.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .bioreactor import FbrParams, fbr_rhs, fbr_rhs_with_nn_mu, haldane_mu, haldane_relation, nn_mu, synthesize
from .errors import ContractViolation, IntegrationError, OdeLearnError, RolloutError
from .nn import MlpModel, mlp_eval
from .ode import DynamicalSystem, Trajectory, implicit_rollout, integrate, rk4_step, scheme_by_name
from .training import TrainReport

logger = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e6
HORIZON_TOLERANCE = 0.1
GRID_TOL = 1e-9


@dataclass
class Metrics:
    """Per-state errors of a predicted trajectory against the truth.

    ``rel_rmse`` is normalized by the truth's per-state standard deviation;
    ``horizon`` is the first time the largest normalized error exceeds 10%
    (the last compared time if it never does).
    """
    rmse: np.ndarray
    rel_rmse: np.ndarray
    max_abs_error: np.ndarray
    horizon: float
    truncated: bool = False
    n_samples: int = 0

    @property
    def score(self) -> float:
        """Mean relative RMSE; infinite for truncated rollouts."""
        return math.inf if self.truncated else float(np.mean(self.rel_rmse))

    def to_dict(self, names: Sequence[str] = ("X", "S", "V")) -> Dict[str, float]:
        row: Dict[str, float] = {}
        for i, name in enumerate(names):
            row[f"rmse_{name}"] = float(self.rmse[i])
            row[f"rel_rmse_{name}"] = float(self.rel_rmse[i])
            row[f"max_abs_{name}"] = float(self.max_abs_error[i])
        row["horizon"] = float(self.horizon)
        row["truncated"] = bool(self.truncated)
        row["n_samples"] = int(self.n_samples)
        return row


@dataclass
class MuCurve:
    """Learned and Haldane growth rates along the states of a reference trajectory."""
    times: np.ndarray
    S: np.ndarray
    mu_learned: np.ndarray
    mu_true: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.S) == len(self.mu_learned) == len(self.mu_true)):
            raise ContractViolation("growth-rate curve columns must have equal lengths")

    @property
    def relative_gap(self) -> float:
        """RMS of mu_learned - mu_true relative to the RMS of mu_true."""
        denom = math.sqrt(float(np.mean(self.mu_true ** 2)))
        gap = math.sqrt(float(np.mean((self.mu_learned - self.mu_true) ** 2)))
        return gap / denom if denom > 0 else gap

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "S": self.S, "mu_learned": self.mu_learned, "mu_true": self.mu_true})


@dataclass
class RhsCurves:
    """Learned and true right-hand sides along a trajectory, one row per sample."""
    times: np.ndarray
    learned: np.ndarray
    true: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        data = {"t": self.times}
        for i, name in enumerate(("X", "S", "V")):
            data[f"d{name}_learned"] = self.learned[:, i]
            data[f"d{name}_true"] = self.true[:, i]
        return pd.DataFrame(data)


def _require_widths(model: MlpModel, n_in: Sequence[int], n_out: int, what: str) -> None:
    if model.input_width not in n_in or model.output_width != n_out:
        raise ContractViolation(f"{what} has layer sizes {list(model.layer_sizes)}")


def _reference_warmup(reference: Trajectory, ic: np.ndarray, M: int, dt: float) -> np.ndarray:
    if len(reference) < M:
        raise ContractViolation(f"warmup needs {M} reference samples, got {len(reference)}")
    expected = reference.times[0] + dt * np.arange(M)
    if not np.allclose(reference.times[:M], expected, rtol=0, atol=GRID_TOL):
        raise ContractViolation(f"warmup samples must be spaced by dt={dt}")
    if not np.allclose(reference.states[0], ic, rtol=1e-12, atol=0):
        raise ContractViolation("warmup must start at the initial condition")
    return reference.states[:M].copy()


def _rollout(system: DynamicalSystem, ic, duration: float, dt: float, integrator: str, scheme: str,
             warmup: Optional[Trajectory] = None) -> Trajectory:
    ic = np.asarray(ic, dtype=np.float64)
    if ic.shape != (3,):
        raise ContractViolation(f"initial condition must have 3 components, got {ic.tolist()}")
    if integrator == "rk4":
        return integrate(system, ic, 0.0, duration, dt, blowup_threshold=BLOWUP_THRESHOLD)
    if integrator != "multistep":
        raise ContractViolation(f"unknown integrator {integrator!r}")
    ms = scheme_by_name(scheme)
    n_total = int(round(duration / dt))
    if n_total < ms.M or abs(n_total * dt - duration) > GRID_TOL:
        raise ContractViolation(f"multistep rollout needs dt dividing the duration, got {duration}/{dt}")
    if warmup is not None:
        start = _reference_warmup(warmup, ic, ms.M, dt)
    elif ms.M == 1:
        start = ic[None, :]
    else:
        warm = integrate(system, ic, 0.0, (ms.M - 1) * dt, dt, blowup_threshold=BLOWUP_THRESHOLD)
        if warm.truncated:
            return warm
        start = warm.states
    return implicit_rollout(
        ms, system.rhs, start, dt, n_total - ms.M + 1, blowup_threshold=BLOWUP_THRESHOLD
    )


def rollout_learned_dynamics(
    model: MlpModel,
    ic: Sequence[float],
    duration: float,
    dt: float,
    integrator: str = "rk4",
    scheme: str = "trapezoidal",
    warmup: Optional[Trajectory] = None,
) -> Trajectory:
    """Integrate dy/dt = f^NN(y) from ic over [0, duration].

    With ``integrator="multistep"`` the implicit scheme is stepped after an
    RK4 warmup of M-1 steps, or from the first M samples of ``warmup`` when a
    reference trajectory is given. A state exceeding 1e6 in magnitude truncates the
    trajectory and sets its ``truncated`` flag.
    """
    _require_widths(model, (3,), 3, "dynamics network")
    system = DynamicalSystem(3, lambda y, t: mlp_eval(model, y), name="learned-dynamics")
    traj = _rollout(system, ic, duration, dt, integrator, scheme, warmup)
    logger.info(f"Rolled out learned dynamics over {traj.times[-1]:.6g} s ({len(traj)} samples)")
    return traj


def rollout_learned_mu(
    mu_model: MlpModel,
    ic: Sequence[float],
    duration: float,
    dt: float,
    p: FbrParams,
    integrator: str = "rk4",
    scheme: str = "trapezoidal",
    warmup: Optional[Trajectory] = None,
) -> Trajectory:
    """Integrate the reactor balances with the growth rate from mu^NN."""
    _require_widths(mu_model, (1, 3), 1, "growth-rate network")
    system = DynamicalSystem(3, lambda y, t: fbr_rhs_with_nn_mu(y, t, p, mu_model), name="learned-mu")
    traj = _rollout(system, ic, duration, dt, integrator, scheme, warmup)
    logger.info(f"Rolled out learned growth rate over {traj.times[-1]:.6g} s ({len(traj)} samples)")
    return traj


def resample(system, y0: Sequence[float], times: Sequence[float], substeps: int = 10) -> Trajectory:
    """States of ``system`` at the given times by RK4 with ``substeps`` steps per interval."""
    times = np.asarray(times, dtype=np.float64)
    states = np.empty((times.size, len(y0)))
    states[0] = np.asarray(y0, dtype=np.float64)
    for i in range(times.size - 1):
        y = states[i]
        h = (times[i + 1] - times[i]) / substeps
        for k in range(substeps):
            y = rk4_step(system, y, times[i] + k * h, h)
        states[i + 1] = y
    return Trajectory(times, states)


def _aligned(predicted: Trajectory, truth: Trajectory, resample_system) -> Trajectory:
    n = len(predicted)
    if n <= len(truth) and np.allclose(predicted.times, truth.times[:n], rtol=0, atol=GRID_TOL):
        return truth.head(n)
    if resample_system is None:
        raise ContractViolation("trajectories are sampled on different time grids")
    if abs(predicted.times[0] - truth.times[0]) > GRID_TOL:
        raise ContractViolation("trajectories must start at the same time to be resampled")
    logger.info(f"Resampling truth onto {n} predicted sample times")
    return resample(resample_system, truth.states[0], predicted.times)


def compare_trajectories(
    predicted: Trajectory,
    truth: Trajectory,
    resample_system: Optional[DynamicalSystem] = None,
) -> Metrics:
    """Error metrics on aligned samples.

    A truncated prediction is compared on the prefix it covers. Grids that
    differ otherwise need ``resample_system`` to recompute the truth.

    Raises:
        ContractViolation: On mismatched grids without a resampling system
    """
    if predicted.dimension != truth.dimension:
        raise ContractViolation(f"state dimensions differ: {predicted.dimension} vs {truth.dimension}")
    ref = _aligned(predicted, truth, resample_system)
    err = predicted.states - ref.states
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    std = ref.states.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    rel = np.abs(err) / std
    exceeded = np.flatnonzero(rel.max(axis=1) > HORIZON_TOLERANCE)
    horizon = float(predicted.times[exceeded[0]] if exceeded.size else predicted.times[-1])
    truncated = predicted.truncated or len(predicted) < len(truth)
    return Metrics(rmse, rmse / std, np.max(np.abs(err), axis=0), horizon, truncated, len(predicted))


def metrics_table(named: Dict[str, Metrics], label: str = "name") -> pd.DataFrame:
    """One row per named Metrics, in insertion order."""
    records = []
    for name, metrics in named.items():
        record = {label: name}
        record.update(metrics.to_dict())
        records.append(record)
    return pd.DataFrame.from_records(records)


def extract_mu_curve(mu_model: MlpModel, reference: Trajectory, p: FbrParams) -> MuCurve:
    """mu^NN and the Haldane law at every state visited by ``reference``."""
    S = reference.states[:, 1].copy()
    learned = np.asarray(nn_mu(reference.states, mu_model), dtype=np.float64)
    return MuCurve(reference.times.copy(), S, learned, haldane_mu(S, p))


def rhs_along_trajectory(
    traj: Trajectory,
    p: FbrParams,
    model: MlpModel,
    target: str = "full_dynamics",
) -> RhsCurves:
    """Learned and true right-hand sides at every sample of ``traj``.

    For the constitutive target the learned rhs is the known balances with
    mu^NN.
    """
    if target == "full_dynamics":
        learned = np.asarray(mlp_eval(model, traj.states))
    elif target == "constitutive":
        learned = np.asarray(fbr_rhs_with_nn_mu(traj.states, 0.0, p, model))
    else:
        raise ContractViolation(f"unknown target {target!r}")
    true = np.asarray(fbr_rhs(traj.states, 0.0, p, haldane_relation(p)))
    return RhsCurves(traj.times.copy(), learned, true)


def predict_states(
    y_model: MlpModel,
    times: Sequence[float],
    window: Optional[Tuple[float, float]] = None,
) -> Trajectory:
    """y^NN evaluated on a grid of times; warns when the grid leaves the training window."""
    times = np.asarray(times, dtype=np.float64)
    if window is not None and (times.min() < window[0] - 1e-9 or times.max() > window[1] + 1e-9):
        logger.warning(
            f"Predicting y^NN on [{times.min()}, {times.max()}] beyond the training window {window}; "
            f"values outside it are extrapolated"
        )
    return Trajectory(times, np.asarray(mlp_eval(y_model, times[:, None])))


def state_network_metrics(y_model: MlpModel, train: Trajectory, test: Trajectory) -> Dict[str, Metrics]:
    """How well y^NN reproduces the training data and a longer test trajectory.

    Returns:
        {"interpolation": ..., "extrapolation": ...}
    """
    return {
        "interpolation": compare_trajectories(predict_states(y_model, train.times), train),
        "extrapolation": compare_trajectories(predict_states(y_model, test.times), test),
    }


@dataclass
class ComparisonRow:
    method: str
    target: str
    metrics: Metrics
    expected_poor: bool = False
    error: Optional[str] = None
    rank: int = 0


@dataclass
class ComparisonTable:
    """Rollout metrics per formulation, ranked by mean relative RMSE."""
    rows: List[ComparisonRow]
    claim_holds: Dict[str, bool] = field(default_factory=dict)

    def row(self, method: str, target: str) -> Optional[ComparisonRow]:
        for r in self.rows:
            if r.method == method and r.target == target:
                return r
        return None

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            record = {"rank": r.rank, "method": r.method, "target": r.target, "score": r.metrics.score}
            record.update(r.metrics.to_dict())
            record["expected_poor"] = r.expected_poor
            record["error"] = r.error or ""
            records.append(record)
        return pd.DataFrame.from_records(records)


def _rollout_report(report: TrainReport, test_ic, duration: float, dt: float, p: FbrParams) -> Trajectory:
    if report.target == "full_dynamics":
        return rollout_learned_dynamics(report.final_model, test_ic, duration, dt)
    return rollout_learned_mu(report.final_model, test_ic, duration, dt, p)


def _failed_metrics(t0: float) -> Metrics:
    nan = np.full(3, np.nan)
    return Metrics(nan, nan, nan, t0, truncated=True, n_samples=0)


def method_comparison(
    reports: Sequence[TrainReport],
    test_ic: Sequence[float],
    duration: float,
    dt: float,
    p: FbrParams,
    strict: bool = False,
) -> ComparisonTable:
    """Roll out every trained model from ``test_ic`` and rank the formulations.

    For each family (discrete, continuous) present with both targets,
    ``claim_holds[family]`` records whether the constitutive model beats the
    full-dynamics model. Rollout failures are recorded, not raised.

    Raises:
        OdeLearnError: If ``strict`` and the constitutive model does not win
            in some family
    """
    if not reports:
        raise ContractViolation("no training reports to compare")
    truth = synthesize(test_ic, duration, dt, p)
    rows: List[ComparisonRow] = []
    for report in reports:
        expected_poor = report.method == "continuous" and report.target == "full_dynamics"
        try:
            pred = _rollout_report(report, test_ic, duration, dt, p)
            metrics = compare_trajectories(pred, truth)
            error = None
        except (IntegrationError, RolloutError) as e:
            logger.warning(f"Rollout of {report.method}/{report.target} failed: {str(e)}")
            metrics, error = _failed_metrics(0.0), str(e)
        rows.append(ComparisonRow(report.method, report.target, metrics, expected_poor, error))

    ordered = sorted(rows, key=lambda r: (r.metrics.score, r.method, r.target))
    for i, r in enumerate(ordered):
        r.rank = i + 1
    table = ComparisonTable(ordered)

    for family in ("discrete", "continuous"):
        mu_row, dyn_row = table.row(family, "constitutive"), table.row(family, "full_dynamics")
        if mu_row is None or dyn_row is None:
            continue
        holds = mu_row.metrics.score < dyn_row.metrics.score
        table.claim_holds[family] = holds
        logger.info(
            f"{family}: constitutive score {mu_row.metrics.score:.4g} vs dynamics {dyn_row.metrics.score:.4g}"
            f" -> {'holds' if holds else 'does not hold'}"
        )
        if strict and not holds:
            raise OdeLearnError(f"constitutive model does not beat full dynamics in the {family} family")
    return table


