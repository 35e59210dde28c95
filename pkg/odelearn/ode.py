"""
ODE Module

Dynamical-system interface, the classical Runge-Kutta integrator used for
ground truth, and linear multistep machinery: coefficient tables, the window
residual and implicit rollouts.

Sign convention for a scheme with coefficients (alpha, beta):

    l_n = sum_m alpha[m] * y[n-m] - dt * sum_m beta[m] * f(y[n-m])

With alpha = [1, -1] and beta = [1/2, 1/2] a zero residual is the trapezoidal
rule y_n = y_{n-1} + dt/2 (f_n + f_{n-1}).
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, IntegrationError, RolloutError

logger = logging.getLogger(__name__)

Rhs = Callable[[np.ndarray, float], np.ndarray]

UNIFORM_TOL = 1e-12
STEP_TOL = 1e-9


@dataclass(frozen=True)
class DynamicalSystem:
    """dy/dt = rhs(y, t); any forcing u(t) lives inside the rhs closure."""
    dimension: int
    rhs: Rhs
    name: str = "system"

    def __call__(self, y: np.ndarray, t: float) -> np.ndarray:
        return self.rhs(y, t)


@dataclass
class Trajectory:
    """Time-stamped states, one row per sample."""
    times: np.ndarray
    states: np.ndarray
    uniform_dt: Optional[float] = field(default=None, init=False)
    truncated: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != self.times.size:
            raise ContractViolation(
                f"{self.states.shape[0]} states for {self.times.size} times"
            )
        steps = np.diff(self.times)
        if np.any(steps <= 0):
            raise ContractViolation("trajectory times must be strictly increasing")
        if steps.size and np.all(np.abs(steps - steps[0]) <= UNIFORM_TOL):
            self.uniform_dt = float(steps[0])

    def __len__(self) -> int:
        return self.times.size

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self.uniform_dt is not None

    def subset(self, indices: Sequence[int]) -> "Trajectory":
        idx = np.sort(np.asarray(indices, dtype=int))
        return Trajectory(self.times[idx], self.states[idx])

    def head(self, n: int) -> "Trajectory":
        return Trajectory(self.times[:n], self.states[:n], truncated=self.truncated)


# Runge-Kutta

def _checked(value: np.ndarray, t: float, y: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise IntegrationError("non-finite right-hand side", t, y)
    return value


def rk4_step(system, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step.

    Raises:
        ContractViolation: If dt is not positive
        IntegrationError: If the rhs returns a non-finite value
    """
    if not dt > 0:
        raise ContractViolation(f"dt must be > 0, got {dt}")
    f = system.rhs if isinstance(system, DynamicalSystem) else system
    y = np.asarray(y, dtype=np.float64)
    k1 = _checked(np.asarray(f(y, t)), t, y)
    k2 = _checked(np.asarray(f(y + 0.5 * dt * k1, t + 0.5 * dt)), t, y)
    k3 = _checked(np.asarray(f(y + 0.5 * dt * k2, t + 0.5 * dt)), t, y)
    k4 = _checked(np.asarray(f(y + dt * k3, t + dt)), t, y)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    span = t1 - t0
    n = int(round(span / dt))
    if n >= 1 and abs(n * dt - span) <= STEP_TOL:
        times = t0 + dt * np.arange(n + 1)
        times[-1] = t1
        return times
    n_full = int(math.floor(span / dt))
    times = t0 + dt * np.arange(n_full + 1)
    if t1 - times[-1] > STEP_TOL:
        times = np.append(times, t1)
    else:
        times[-1] = t1
    return times


def integrate(
    system,
    y0: Sequence[float],
    t0: float,
    t1: float,
    dt: float,
    blowup_threshold: Optional[float] = None,
) -> Trajectory:
    """Integrate with RK4 from t0 to t1, both endpoints included.

    If dt does not divide the span the last step is shortened. With a
    blow-up threshold, integration stops (returning a truncated trajectory)
    as soon as any |state| exceeds it or becomes non-finite.

    Raises:
        ContractViolation: If t1 <= t0 or dt <= 0
        IntegrationError: On non-finite states without a blow-up threshold
    """
    if not t1 > t0:
        raise ContractViolation(f"integration span must be positive, got [{t0}, {t1}]")
    if not dt > 0:
        raise ContractViolation(f"dt must be > 0, got {dt}")
    times = _time_grid(t0, t1, dt)
    states = np.empty((times.size, len(y0)))
    states[0] = np.asarray(y0, dtype=np.float64)
    for i in range(times.size - 1):
        h = times[i + 1] - times[i]
        try:
            nxt = rk4_step(system, states[i], times[i], h)
        except IntegrationError:
            if blowup_threshold is None:
                raise
            nxt = np.full(states.shape[1], np.nan)
        if not np.all(np.isfinite(nxt)) or (
            blowup_threshold is not None and np.max(np.abs(nxt)) > blowup_threshold
        ):
            if blowup_threshold is None:
                raise IntegrationError("non-finite state", float(times[i + 1]), states[i])
            logger.warning(f"Integration blew up at t={times[i + 1]:.6g}; truncating trajectory")
            return Trajectory(times[:i + 1], states[:i + 1], truncated=True)
        states[i + 1] = nxt
    return Trajectory(times, states)


# Multistep schemes

@dataclass(frozen=True)
class MultistepScheme:
    """Linear multistep coefficients; index m multiplies y[n-m] and f(y[n-m])."""
    name: str
    M: int
    alpha_exact: Tuple[Fraction, ...]
    beta_exact: Tuple[Fraction, ...]

    @property
    def alpha(self) -> np.ndarray:
        return np.array([float(a) for a in self.alpha_exact])

    @property
    def beta(self) -> np.ndarray:
        return np.array([float(b) for b in self.beta_exact])

    def check_consistency(self) -> None:
        """Verify the consistency conditions in exact rational arithmetic."""
        if len(self.alpha_exact) != self.M + 1 or len(self.beta_exact) != self.M + 1:
            raise ContractViolation(f"{self.name}: coefficient lists must have length M+1")
        if self.alpha_exact[0] != 1:
            raise ContractViolation(f"{self.name}: alpha[0] must be 1")
        if sum(self.alpha_exact) != 0:
            raise ContractViolation(f"{self.name}: alpha must sum to 0")
        if sum(-m * a for m, a in enumerate(self.alpha_exact)) != sum(self.beta_exact):
            raise ContractViolation(f"{self.name}: first-order consistency fails")


_ADAMS_MOULTON = {
    1: (Fraction(1, 2), Fraction(1, 2)),
    2: (Fraction(5, 12), Fraction(8, 12), Fraction(-1, 12)),
    3: (Fraction(9, 24), Fraction(19, 24), Fraction(-5, 24), Fraction(1, 24)),
    4: (Fraction(251, 720), Fraction(646, 720), Fraction(-264, 720), Fraction(106, 720), Fraction(-19, 720)),
}


def scheme_adams_moulton(M: int) -> MultistepScheme:
    """Adams-Moulton scheme with M steps (1 <= M <= 4)."""
    if M not in _ADAMS_MOULTON:
        raise ContractViolation(f"Adams-Moulton supports 1 <= M <= 4, got {M}")
    alpha = (Fraction(1), Fraction(-1)) + (Fraction(0),) * (M - 1)
    name = "trapezoidal" if M == 1 else f"am{M}"
    scheme = MultistepScheme(name, M, alpha, _ADAMS_MOULTON[M])
    scheme.check_consistency()
    return scheme


def scheme_trapezoidal() -> MultistepScheme:
    """Trapezoidal rule: M=1, alpha=[1, -1], beta=[1/2, 1/2]."""
    return scheme_adams_moulton(1)


def scheme_by_name(name: str) -> MultistepScheme:
    """Look up "trapezoidal", "am1" ... "am4"."""
    key = name.lower()
    if key == "trapezoidal":
        return scheme_trapezoidal()
    if key.startswith("am") and key[2:].isdigit():
        return scheme_adams_moulton(int(key[2:]))
    raise ContractViolation(f"unknown multistep scheme {name!r}")


def combine_window(scheme: MultistepScheme, ys: Sequence, fs: Sequence, dt: float):
    """sum_m alpha[m] ys[m] - dt * sum_m beta[m] fs[m].

    ``ys[m]`` / ``fs[m]`` hold y[n-m] / f(y[n-m]) and may be arrays (a batch
    of windows) or tape variables.
    """
    alpha, beta = scheme.alpha, scheme.beta
    state_part = alpha[0] * ys[0]
    for m in range(1, scheme.M + 1):
        state_part = state_part + alpha[m] * ys[m]
    rhs_part = beta[0] * fs[0]
    for m in range(1, scheme.M + 1):
        rhs_part = rhs_part + beta[m] * fs[m]
    return state_part - dt * rhs_part


def multistep_residual(
    scheme: MultistepScheme,
    window: np.ndarray,
    dt: float,
    f: Callable[[np.ndarray], np.ndarray],
    times: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Residual of one window ordered newest first (y_n, y_{n-1}, ..., y_{n-M}).

    Args:
        scheme: Multistep coefficients
        window: (M+1, D) states, newest first
        dt: Uniform spacing
        f: Right-hand side evaluated on a single state
        times: Optional sample times of the window, checked for uniform spacing

    Raises:
        ContractViolation: On a wrong window length or non-uniform spacing
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape[0] != scheme.M + 1:
        raise ContractViolation(f"window must have M+1={scheme.M + 1} states, got {window.shape[0]}")
    if times is not None:
        gaps = -np.diff(np.asarray(times, dtype=np.float64))
        if np.any(np.abs(gaps - dt) > UNIFORM_TOL):
            raise ContractViolation("multistep residual requires uniformly spaced samples")
    fs = [np.asarray(f(window[m])) for m in range(scheme.M + 1)]
    return combine_window(scheme, list(window), fs, dt)


def trajectory_windows(traj: Trajectory, M: int) -> List[np.ndarray]:
    """Stacked window states: element m is the (W, D) array of y[n-m], n = M..N.

    Raises:
        ContractViolation: If the trajectory is non-uniform or too short
    """
    if not traj.is_uniform:
        raise ContractViolation("multistep methods require measurements at uniform time intervals")
    N = len(traj) - 1
    if N + 1 <= M:
        raise ContractViolation(f"trajectory with {len(traj)} samples has no windows for M={M}")
    return [traj.states[M - m:N + 1 - m] for m in range(M + 1)]


def _newton(G: Callable[[np.ndarray], np.ndarray], y: np.ndarray, tol: float, max_iter: int) -> Tuple[np.ndarray, bool]:
    for _ in range(max_iter):
        g = G(y)
        if np.max(np.abs(g)) <= tol * max(1.0, np.max(np.abs(y))):
            return y, True
        J = np.empty((y.size, y.size))
        for j in range(y.size):
            h = 1e-7 * max(1.0, abs(y[j]))
            e = np.zeros_like(y)
            e[j] = h
            J[:, j] = (G(y + e) - G(y - e)) / (2.0 * h)
        try:
            y = y - np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            return y, False
        if not np.all(np.isfinite(y)):
            return y, False
    return y, np.max(np.abs(G(y))) <= tol * max(1.0, np.max(np.abs(y)))


def implicit_rollout(
    scheme: MultistepScheme,
    f: Rhs,
    warmup: np.ndarray,
    dt: float,
    n_steps: int,
    t0: float = 0.0,
    tol: float = 1e-12,
    damping: float = 0.5,
    max_iter: int = 100,
    blowup_threshold: Optional[float] = None,
) -> Trajectory:
    """Step the implicit multistep equation forward from M warmup states.

    Each new state starts from an RK4 predictor and is refined by damped
    fixed-point iteration; if that stalls, Newton's method with a
    finite-difference Jacobian takes over.

    Args:
        scheme: Multistep coefficients
        f: Right-hand side f(y, t)
        warmup: (M, D) initial states, oldest first
        dt: Step size
        n_steps: Number of new states
        t0: Time of the first warmup state
        tol: Residual tolerance, relative to max(1, |y|)
        damping: Fixed-point relaxation factor
        max_iter: Fixed-point iteration limit
        blowup_threshold: Truncate instead of failing when |y| exceeds it

    Returns:
        Trajectory of the warmup states followed by the new states

    Raises:
        RolloutError: If neither iteration converges at some step
    """
    warmup = np.atleast_2d(np.asarray(warmup, dtype=np.float64))
    M = scheme.M
    if warmup.shape[0] != M:
        raise ContractViolation(f"{scheme.name} needs {M} warmup states, got {warmup.shape[0]}")
    alpha, beta = scheme.alpha, scheme.beta
    states = [row.copy() for row in warmup]
    f_hist = [np.asarray(f(row, t0 + i * dt), dtype=np.float64) for i, row in enumerate(states)]
    truncated = False
    for step in range(n_steps):
        n = len(states)
        t_n = t0 + n * dt
        # known part of the window: terms with m >= 1
        known = np.zeros_like(states[-1])
        for m in range(1, M + 1):
            known = known - alpha[m] * states[n - m] + dt * beta[m] * f_hist[n - m]

        def g(y):
            return (known + dt * beta[0] * np.asarray(f(y, t_n))) / alpha[0]

        try:
            y = rk4_step(f, states[-1], t_n - dt, dt)
        except IntegrationError:
            y = states[-1].copy()
        converged = False
        for _ in range(max_iter):
            gy = g(y)
            if not np.all(np.isfinite(gy)):
                break
            if np.max(np.abs(gy - y)) <= tol * max(1.0, np.max(np.abs(y))):
                converged = True
                break
            y = (1.0 - damping) * y + damping * gy
        if not converged:
            logger.info(f"Fixed-point iteration stalled at step {step}; switching to Newton")
            y, converged = _newton(lambda z: z - g(z), y, tol, 50)
        if not converged or not np.all(np.isfinite(y)) or (
            blowup_threshold is not None and np.max(np.abs(y)) > blowup_threshold
        ):
            if blowup_threshold is not None:
                logger.warning(f"Implicit rollout blew up at step {step}; truncating trajectory")
                truncated = True
                break
            raise RolloutError("implicit multistep solve did not converge", step)
        states.append(y)
        f_hist.append(np.asarray(f(y, t_n), dtype=np.float64))
    times = t0 + dt * np.arange(len(states))
    return Trajectory(times, np.array(states), truncated=truncated)
