"""
End-to-end experiment pipeline for a named preset: synthesize data, train,
predict on the test case, evaluate and write every table and figure into
one output directory.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .bioreactor import FbrParams, synthesize
from .evaluation import (
    Metrics,
    compare_trajectories,
    extract_mu_curve,
    metrics_table,
    predict_states,
    rhs_along_trajectory,
    rollout_learned_dynamics,
    rollout_learned_mu,
    state_network_metrics,
)
from .ode import Trajectory
from .persistence import save_training_checkpoint, write_frame, write_loss_history, write_trajectory
from .plotting import plot_loss, plot_mu_vs_s, plot_mu_vs_t, plot_rhs, plot_states
from .presets import Preset
from .train_continuous import train_continuous
from .train_discrete import train_discrete
from .training import TrainReport

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    report: TrainReport
    metrics: Metrics
    outputs: Dict[str, str] = field(default_factory=dict)


def predict(preset: Preset, report: TrainReport, p: FbrParams) -> Trajectory:
    """Test-case prediction the preset asks for."""
    if preset.prediction == "state_network":
        times = synthesize(preset.test_ic, preset.test_duration, preset.dt, p).times
        return predict_states(report.state_model, times, report.data_window)
    if report.target == "full_dynamics":
        return rollout_learned_dynamics(report.final_model, preset.test_ic, preset.test_duration, preset.dt)
    return rollout_learned_mu(report.final_model, preset.test_ic, preset.test_duration, preset.dt, p)


def run_experiment(
    preset: Preset,
    out_dir: str,
    seed: Optional[int] = None,
    threads: int = 1,
    iterations: Optional[int] = None,
    p: Optional[FbrParams] = None,
) -> ExperimentResult:
    p = p or FbrParams()
    os.makedirs(out_dir, exist_ok=True)
    outputs: Dict[str, str] = {}

    def path(name: str) -> str:
        outputs[name] = os.path.join(out_dir, name)
        return outputs[name]

    logger.info(f"Running preset {preset.name}: {preset.description}")
    train: List[Trajectory] = []
    for k, ic in enumerate(preset.train_ics):
        traj = synthesize(ic, preset.train_duration, preset.dt, p)
        write_trajectory(traj, path(f"train_{k + 1}.csv"))
        train.append(traj)
    test = synthesize(preset.test_ic, preset.test_duration, preset.dt, p)
    write_trajectory(test, path("test.csv"))

    config = preset.train_config(seed=seed, threads=threads, iterations=iterations)
    if preset.method == "discrete":
        report = train_discrete(config, train, p)
    else:
        report = train_continuous(config, train[0], p)
    save_training_checkpoint(report, path("checkpoint.json"), p)
    write_loss_history(report.loss_history, path("loss.csv"))

    predicted = predict(preset, report, p)
    write_trajectory(predicted, path("prediction.csv"))
    metrics = compare_trajectories(predicted, test)
    write_frame(metrics_table({preset.prediction: metrics}, label="prediction"), path("metrics.csv"))
    logger.info(f"{preset.name}: relative RMSE per state {metrics.rel_rmse.tolist()}, horizon {metrics.horizon:.4g} s")

    if report.target == "constitutive":
        curve = extract_mu_curve(report.final_model, test, p)
        write_frame(curve.to_frame(), path("mu_curve.csv"))
        plot_mu_vs_s(path("mu_vs_s.svg"), curve)
        plot_mu_vs_t(path("mu_vs_t.svg"), curve)
        logger.info(f"{preset.name}: growth-rate relative gap {curve.relative_gap:.4g}")
    else:
        curves = rhs_along_trajectory(test, p, report.final_model, report.target)
        write_frame(curves.to_frame(), path("rhs.csv"))
        plot_rhs(path("rhs.svg"), curves)

    if report.state_model is not None:
        ranges = state_network_metrics(report.state_model, train[0], test)
        write_frame(metrics_table(ranges, label="range"), path("state_network.csv"))

    plot_states(path("states.svg"), train, test, predicted)
    plot_loss(path("loss.svg"), report.loss_history)
    return ExperimentResult(report, metrics, outputs)
