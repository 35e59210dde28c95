"""
Fedbatch Bioreactor Module

The fedbatch bioreactor (FBR) reference model: Haldane growth kinetics, the
mass-balance right-hand side, the same right-hand side with a learned growth
rate, and synthetic data generation.

State layout is [X, S, V]: biomass (g/L), substrate (g/L), volume (L).
Time is in seconds.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .autodiff import stack, values_of
from .errors import ContractViolation
from .nn import MlpModel, mlp_apply
from .ode import DynamicalSystem, Trajectory, integrate

logger = logging.getLogger(__name__)

STATE_NAMES = ("X", "S", "V")

# maps states (..., 3) to growth rates (...)
ConstitutiveRelation = Callable[[np.ndarray], np.ndarray]


class FbrParams(BaseModel):
    """Kinetic and feed constants of the bioreactor."""
    model_config = ConfigDict(frozen=True)

    k1: float = 1.0
    mu_star: float = 5.0
    Km: float = 10.0
    Ki: float = 0.1
    F: float = 0.1
    S_in: float = 3.5

    @field_validator("k1", "mu_star", "Km", "Ki", "F", "S_in")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("bioreactor constants must be strictly positive")
        return value


def _column(y, i: int):
    return y[i] if values_of(y).ndim == 1 else y[:, i]


def haldane_mu(S, p: FbrParams):
    """Substrate-inhibited growth rate mu*S / (Km + S + S^2/Ki).

    Raises:
        ContractViolation: If any S is negative
    """
    if np.any(values_of(S) < 0):
        raise ContractViolation("Haldane growth rate is undefined for negative substrate")
    return p.mu_star * S / (p.Km + S + S * S / p.Ki)


def haldane_relation(p: FbrParams) -> ConstitutiveRelation:
    """The Haldane law as a function of the full state."""
    return lambda y: haldane_mu(_column(y, 1), p)


def _balance(y, mu, p: FbrParams, check_volume: bool = True):
    X, S, V = _column(y, 0), _column(y, 1), _column(y, 2)
    if check_volume and np.any(values_of(V) <= 0):
        raise ContractViolation("reactor volume must be positive")
    dX = mu * X - p.F * X / V
    dS = -p.k1 * mu * X + p.F * (p.S_in - S) / V
    dV = np.full(np.shape(values_of(X)), p.F)
    return stack([dX, dS, dV], axis=-1)


def fbr_rhs(y, t: float, p: FbrParams, mu: ConstitutiveRelation):
    """Mass balances of the fedbatch reactor.

    dX/dt = mu X - F X / V
    dS/dt = -k1 mu X + F (S_in - S) / V
    dV/dt = F

    Args:
        y: State [X, S, V] or a batch of states (one per row)
        t: Time; the constant feed makes the balances autonomous
        p: Reactor constants
        mu: Growth rate as a function of the state

    Raises:
        ContractViolation: If V <= 0
    """
    return _balance(y, mu(y), p)


def _mu_input(y, mu_model: MlpModel):
    if mu_model.input_width == 3:
        return y
    if mu_model.input_width == 1:
        return y[1:2] if values_of(y).ndim == 1 else y[:, 1:2]
    raise ContractViolation(f"growth-rate network must take 3 (state) or 1 (substrate) inputs, got {mu_model.input_width}")


def nn_mu(y, mu_model: MlpModel, params=None):
    """Growth rate predicted by mu^NN for a state or batch of states."""
    if mu_model.output_width != 1:
        raise ContractViolation(f"growth-rate network must have one output, got {mu_model.output_width}")
    out = mlp_apply(mu_model, _mu_input(y, mu_model), params=params)
    return _column(out, 0)


def fbr_rhs_with_nn_mu(y, t: float, p: FbrParams, mu_model: MlpModel, params=None, check_volume: bool = True):
    """Known mass balances with the growth rate taken from mu^NN.

    ``params`` overrides the model parameters (e.g. with a tape variable).
    The volume guard can be disabled when y comes from a network output
    during training.
    """
    return _balance(y, nn_mu(y, mu_model, params), p, check_volume)


def fbr_system(p: FbrParams, mu: Optional[ConstitutiveRelation] = None) -> DynamicalSystem:
    """The reactor as a DynamicalSystem; Haldane kinetics unless mu is given."""
    relation = mu if mu is not None else haldane_relation(p)
    return DynamicalSystem(3, lambda y, t: fbr_rhs(y, t, p, relation), name="fedbatch")


def nn_mu_system(p: FbrParams, mu_model: MlpModel) -> DynamicalSystem:
    return DynamicalSystem(3, lambda y, t: fbr_rhs_with_nn_mu(y, t, p, mu_model), name="fedbatch-nn-mu")


def synthesize(ic: Sequence[float], duration: float, dt: float, p: FbrParams) -> Trajectory:
    """Haldane-kinetics trajectory from ic over [0, duration].

    Raises:
        ContractViolation: If the initial condition is not physical
    """
    ic = np.asarray(ic, dtype=np.float64)
    if ic.shape != (3,) or ic[0] < 0 or ic[1] < 0 or ic[2] <= 0:
        raise ContractViolation(f"initial condition must be [X>=0, S>=0, V>0], got {ic.tolist()}")
    logger.info(f"Synthesizing FBR trajectory from {ic.tolist()} over {duration} s (dt={dt})")
    return integrate(fbr_system(p), ic, 0.0, duration, dt)


def estimate_mu_samples(traj: Trajectory, p: FbrParams) -> np.ndarray:
    """Growth rates implied by the biomass balance, mu = (dX/dt)/X + F/V.

    Derivatives come from finite differences, so non-uniform data work too.
    """
    X, V = traj.states[:, 0], traj.states[:, 2]
    if np.any(X <= 0):
        raise ContractViolation("growth-rate estimate needs positive biomass")
    dX = np.gradient(X, traj.times)
    return dX / X + p.F / V
