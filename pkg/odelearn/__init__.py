"""
odelearn: physics-informed neural networks for learning the dynamics, or a
constitutive relation, of a system of ordinary differential equations from
trajectory data. Discrete (multistep residual) and continuous (collocation)
formulations are provided, with a fedbatch bioreactor as reference system.
"""

from .bioreactor import FbrParams, fbr_rhs, fbr_rhs_with_nn_mu, haldane_mu, synthesize
from .errors import (
    CheckpointError,
    ContractViolation,
    IntegrationError,
    OdeLearnError,
    RolloutError,
    TrainingDivergence,
)
from .nn import MlpModel, NormStats, load_model, mlp_eval, mlp_init, save_model
from .ode import DynamicalSystem, Trajectory, integrate, scheme_adams_moulton, scheme_trapezoidal
from .train_continuous import ContinuousTrainConfig, train_continuous
from .train_discrete import DiscreteTrainConfig, train_discrete

__version__ = "0.1.0"
