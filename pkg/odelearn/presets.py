"""
Named experiment recipes for the fedbatch reactor studies.

Each preset fixes the training initial conditions and duration, the test
initial condition, the formulation and the training settings.
"""

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from .errors import ContractViolation
from .train_continuous import ContinuousTrainConfig
from .train_discrete import DiscreteTrainConfig

BASE_IC = [0.1, 1.0, 10.0]
SECOND_IC = [0.2, 1.5, 15.0]
TEST_IC = [0.15, 1.2, 12.0]


class Preset(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    description: str
    method: Literal["discrete", "continuous"]
    target: Literal["full_dynamics", "constitutive"]
    train_ics: List[List[float]]
    train_duration: float = Field(gt=0)
    dt: float = Field(0.05, gt=0)
    test_ic: List[float]
    test_duration: float = Field(50.0, gt=0)
    normalize: bool = True
    # continuous runs: scale loss components by the data spread
    normalized_loss: bool = True
    iterations: int = Field(gt=0)
    seed: int = 7
    scheme: str = "trapezoidal"
    # how the test prediction is produced: integrating the learned model, or y^NN itself
    prediction: Literal["rollout", "state_network"] = "rollout"

    def train_config(
        self,
        seed: Optional[int] = None,
        threads: int = 1,
        iterations: Optional[int] = None,
    ) -> Union[DiscreteTrainConfig, ContinuousTrainConfig]:
        common = {
            "target": self.target,
            "iterations": iterations or self.iterations,
            "seed": self.seed if seed is None else seed,
            "normalize": self.normalize,
            "threads": threads,
        }
        if self.method == "discrete":
            return DiscreteTrainConfig(scheme=self.scheme, **common)
        return ContinuousTrainConfig(normalized_loss=self.normalized_loss, **common)


_PRESETS = [
    Preset(
        name="paper-4.1-one-traj",
        description="Discrete method, unknown dynamics, one 50 s trajectory, normalized inputs and outputs",
        method="discrete", target="full_dynamics",
        train_ics=[BASE_IC], train_duration=50.0,
        test_ic=[0.12, 1.2, 10.0], normalize=True, iterations=50000,
    ),
    Preset(
        name="paper-4.1-two-traj",
        description="Discrete method, unknown dynamics, two 25 s trajectories, no normalization",
        method="discrete", target="full_dynamics",
        train_ics=[BASE_IC, SECOND_IC], train_duration=25.0,
        test_ic=TEST_IC, normalize=False, iterations=50000,
    ),
    Preset(
        name="paper-4.2",
        description="Discrete method, growth rate, one 50 s trajectory",
        method="discrete", target="constitutive",
        train_ics=[BASE_IC], train_duration=50.0,
        test_ic=TEST_IC, iterations=50000,
    ),
    Preset(
        name="paper-4.2-two-traj",
        description="Discrete method, growth rate, two 25 s trajectories",
        method="discrete", target="constitutive",
        train_ics=[BASE_IC, SECOND_IC], train_duration=25.0,
        test_ic=TEST_IC, iterations=50000,
    ),
    Preset(
        name="paper-4.3",
        description="Continuous method, unknown dynamics, one 25 s trajectory, same initial condition for the test",
        method="continuous", target="full_dynamics",
        train_ics=[BASE_IC], train_duration=25.0,
        test_ic=BASE_IC, iterations=20000, prediction="state_network",
    ),
    Preset(
        name="paper-4.3-diff-ics",
        description="Continuous method, unknown dynamics, test from a different initial condition",
        method="continuous", target="full_dynamics",
        train_ics=[BASE_IC], train_duration=25.0,
        test_ic=TEST_IC, iterations=20000,
    ),
    Preset(
        name="paper-4.4",
        description="Continuous method, growth rate, reactor balances solved with the learned rate",
        method="continuous", target="constitutive",
        train_ics=[BASE_IC], train_duration=25.0,
        test_ic=TEST_IC, iterations=20000,
    ),
    Preset(
        name="paper-4.4-diff-ics",
        description="Continuous method, growth rate, y^NN compared with a test from a different initial condition",
        method="continuous", target="constitutive",
        train_ics=[BASE_IC], train_duration=25.0,
        test_ic=TEST_IC, iterations=20000, prediction="state_network",
    ),
]

PRESETS: Dict[str, Preset] = {preset.name: preset for preset in _PRESETS}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractViolation(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
