"""
Plotting Module

SVG figures of states, right-hand sides, growth-rate curves and loss
histories. Output is deterministic: fixed 800x600 viewport, fixed element
ids and no date metadata, so repeated renders are byte-identical.
"""

import logging
import os
from typing import List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bioreactor import STATE_NAMES  # noqa: E402
from .errors import ContractViolation  # noqa: E402
from .evaluation import MuCurve, RhsCurves  # noqa: E402
from .ode import Trajectory  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ("states", "rhs", "mu-vs-s", "mu-vs-t", "loss")
FIGSIZE = (800 / 72, 600 / 72)
DPI = 72
TRAIN_STYLES = [("red", "-"), ("magenta", "-")]
TEST_STYLE = ("blue", "--")
PREDICTION_STYLE = ("black", "--")
UNITS = {"X": "X (g/L)", "S": "S (g/L)", "V": "V (L)"}

plt.rcParams["svg.hashsalt"] = "odelearn"
plt.rcParams["svg.fonttype"] = "path"


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", dpi=DPI, metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote figure {path}")


def _panels(n: int):
    fig, axes = plt.subplots(n, 1, figsize=FIGSIZE, dpi=DPI, sharex=True, squeeze=False)
    return fig, [row[0] for row in axes]


def plot_states(
    path: str,
    train: Sequence[Trajectory] = (),
    test: Optional[Trajectory] = None,
    predicted: Optional[Trajectory] = None,
) -> None:
    """Three panels (X, S, V) over time: training data solid red (a second
    training trajectory magenta), test dashed blue, prediction dashed black."""
    if not train and test is None and predicted is None:
        raise ContractViolation("nothing to plot")
    fig, axes = _panels(3)
    for i, name in enumerate(STATE_NAMES):
        ax = axes[i]
        for k, traj in enumerate(train):
            color, style = TRAIN_STYLES[min(k, len(TRAIN_STYLES) - 1)]
            ax.plot(traj.times, traj.states[:, i], color=color, linestyle=style,
                    label="training data" if k == 0 else f"training data {k + 1}")
        if test is not None:
            ax.plot(test.times, test.states[:, i], color=TEST_STYLE[0], linestyle=TEST_STYLE[1], label="test data")
        if predicted is not None:
            ax.plot(predicted.times, predicted.states[:, i], color=PREDICTION_STYLE[0],
                    linestyle=PREDICTION_STYLE[1], label="prediction")
        ax.set_ylabel(UNITS[name])
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("t (s)")
    _save(fig, path)


def plot_rhs(path: str, curves: RhsCurves) -> None:
    """Learned (dashed black) and true (dashed blue) dy/dt per component."""
    fig, axes = _panels(3)
    for i, name in enumerate(STATE_NAMES):
        axes[i].plot(curves.times, curves.true[:, i], color=TEST_STYLE[0], linestyle=TEST_STYLE[1], label="true")
        axes[i].plot(curves.times, curves.learned[:, i], color=PREDICTION_STYLE[0],
                     linestyle=PREDICTION_STYLE[1], label="learned")
        axes[i].set_ylabel(f"d{name}/dt")
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("t (s)")
    _save(fig, path)


def _mu_plot(path: str, x, curve: MuCurve, xlabel: str) -> None:
    fig, axes = _panels(1)
    ax = axes[0]
    ax.plot(x, curve.mu_true, color=TEST_STYLE[0], linestyle=TEST_STYLE[1], label="Haldane")
    ax.plot(x, curve.mu_learned, color=PREDICTION_STYLE[0], linestyle=PREDICTION_STYLE[1], label="learned")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mu (1/s)")
    ax.legend(loc="best")
    _save(fig, path)


def plot_mu_vs_s(path: str, curve: MuCurve) -> None:
    _mu_plot(path, curve.S, curve, "S (g/L)")


def plot_mu_vs_t(path: str, curve: MuCurve) -> None:
    _mu_plot(path, curve.times, curve, "t (s)")


def plot_loss(path: str, history: List[Tuple[int, float]]) -> None:
    """Training loss against iteration on a log scale."""
    if not history:
        raise ContractViolation("empty loss history")
    fig, axes = _panels(1)
    ax = axes[0]
    ax.semilogy([i for i, _ in history], [v for _, v in history], color="black")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    _save(fig, path)
