"""
Command-line interface for odelearn.

Every artifact-producing command writes a run manifest next to its output so
the run can be replayed with ``odelearn replay``. Exit codes: 0 success,
2 usage or contract violation, 3 numerical failure, 4 I/O or checkpoint error.
"""

import functools
import logging
import os
import sys
import time
from typing import Any, Dict, List, Optional

import click
import numpy as np
from click.core import ParameterSource
from pydantic import ValidationError

from .bioreactor import FbrParams, fbr_system, synthesize
from .config import DEFAULT_SEED, DEFAULT_THREADS, LOG_FORMAT, LOG_LEVEL
from .errors import (
    CheckpointError,
    ContractViolation,
    IntegrationError,
    OdeLearnError,
    RolloutError,
    TrainingDivergence,
)
from .evaluation import (
    compare_trajectories,
    extract_mu_curve,
    method_comparison,
    metrics_table,
    rhs_along_trajectory,
    rollout_learned_dynamics,
    rollout_learned_mu,
)
from .experiment import run_experiment
from .persistence import (
    RunManifest,
    hash_inputs,
    load_training_checkpoint,
    manifest_path_for,
    read_loss_history,
    read_manifest,
    read_trajectory,
    save_training_checkpoint,
    write_frame,
    write_loss_history,
    write_manifest,
    write_trajectory,
)
from .plotting import PLOT_KINDS, plot_loss, plot_mu_vs_s, plot_mu_vs_t, plot_rhs, plot_states
from .presets import PRESETS, get_preset
from .train_continuous import ContinuousTrainConfig, train_continuous
from .train_discrete import DiscreteTrainConfig, train_discrete
from .training import TrainReport

logger = logging.getLogger("odelearn")

EXIT_CONTRACT = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

TARGETS = {"dynamics": "full_dynamics", "mu": "constitutive"}

# option name -> FbrParams field
FBR_OPTIONS = {"k1": "k1", "mu_star": "mu_star", "km": "Km", "ki": "Ki", "feed": "F", "s_in": "S_in"}


def _fail(code: int, message: str) -> None:
    logger.error(message)
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    """Map library failures onto exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ContractViolation, ValidationError) as e:
            _fail(EXIT_CONTRACT, str(e))
        except (TrainingDivergence, IntegrationError, RolloutError) as e:
            _fail(EXIT_NUMERICAL, str(e))
        except (CheckpointError, OSError) as e:
            _fail(EXIT_IO, str(e))
        except OdeLearnError as e:
            _fail(EXIT_NUMERICAL, str(e))
    return wrapper


def parse_vector(text: str, n: int = 3) -> List[float]:
    """'0.1,1,10' -> [0.1, 1.0, 10.0]"""
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError:
        raise ContractViolation(f"expected {n} comma-separated numbers, got {text!r}")
    if len(values) != n:
        raise ContractViolation(f"expected {n} comma-separated numbers, got {text!r}")
    return values


def _format_value(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _explicit(ctx: click.Context, name: str) -> bool:
    return ctx.get_parameter_source(name) not in (None, ParameterSource.DEFAULT, ParameterSource.DEFAULT_MAP)


def command_line(ctx: click.Context) -> List[str]:
    """Subcommand argv reconstructed from the resolved parameters.

    Reactor constants left at their defaults are omitted so that a replay
    still defers to the constants stored in a checkpoint.
    """
    argv = [ctx.info_name]
    for param in ctx.command.params:
        value = ctx.params.get(param.name)
        if value is None:
            continue
        if param.name in FBR_OPTIONS and not _explicit(ctx, param.name):
            continue
        if isinstance(param, click.Argument):
            argv.append(_format_value(value))
            continue
        if param.is_flag:
            if param.secondary_opts:
                argv.append(param.opts[0] if value else param.secondary_opts[0])
            elif value:
                argv.append(param.opts[0])
            continue
        for item in (value if param.multiple else [value]):
            argv.extend([param.opts[0], _format_value(item)])
    return argv


def _record(
    ctx: click.Context,
    manifest_path: str,
    outputs: Dict[str, str],
    inputs: Optional[Dict[str, str]] = None,
    source: Optional[str] = None,
    elapsed: Optional[float] = None,
) -> None:
    inputs = inputs or {}
    manifest = RunManifest(
        command=ctx.info_name,
        argv=command_line(ctx),
        config={key: value for key, value in ctx.params.items()},
        inputs=inputs,
        outputs=outputs,
        seed=ctx.params.get("seed"),
        input_hash=hash_inputs(inputs) if inputs else "",
        source=source,
        elapsed=elapsed,
    )
    write_manifest(manifest, manifest_path)


def fbr_options(fn):
    """Reactor constants shared by several commands."""
    defaults = FbrParams()
    options = [
        click.option("--k1", type=float, default=defaults.k1, show_default=True, help="Yield coefficient"),
        click.option("--mu-star", type=float, default=defaults.mu_star, show_default=True, help="Haldane mu*"),
        click.option("--km", type=float, default=defaults.Km, show_default=True, help="Haldane Km"),
        click.option("--ki", type=float, default=defaults.Ki, show_default=True, help="Haldane Ki"),
        click.option("--feed", type=float, default=defaults.F, show_default=True, help="Feed rate F"),
        click.option("--s-in", type=float, default=defaults.S_in, show_default=True, help="Inlet substrate"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _fbr_params(params: Dict[str, Any]) -> FbrParams:
    return FbrParams(**{field: params[name] for name, field in FBR_OPTIONS.items()})


def _resolve_fbr(ctx: click.Context, params: Dict[str, Any], stored: Optional[FbrParams]) -> FbrParams:
    """Checkpoint constants, overridden by any reactor option given explicitly."""
    if stored is None:
        return _fbr_params(params)
    overrides = {field: params[name] for name, field in FBR_OPTIONS.items() if _explicit(ctx, name)}
    if not overrides:
        return stored
    logger.info(f"Overriding checkpoint reactor constants with {overrides}")
    return FbrParams(**{**stored.model_dump(), **overrides})


seed_option = click.option(
    "--seed", type=int, envvar="ODELEARN_SEED", default=DEFAULT_SEED, show_default=True, help="Random seed"
)
threads_option = click.option(
    "--threads", type=click.IntRange(min=1), envvar="ODELEARN_THREADS", default=DEFAULT_THREADS,
    show_default=True, help="Concurrent evaluation chunks",
)


@click.group()
@click.option(
    "--log-level", envvar="ODELEARN_LOG_LEVEL", default=LOG_LEVEL, show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
def main(log_level: str) -> None:
    """Learn ODE dynamics or constitutive relations with physics-informed networks."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT, force=True)


@main.command()
@click.option("--ic", required=True, help="Initial condition X,S,V")
@click.option("--duration", type=float, default=50.0, show_default=True)
@click.option("--dt", type=float, default=0.05, show_default=True)
@click.option("--drop-fraction", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True,
              help="Randomly remove this share of interior samples")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@seed_option
@fbr_options
@click.pass_context
@handle_errors
def synth(ctx, ic, duration, dt, drop_fraction, out, seed, **fbr):
    """Synthesize a reactor trajectory with Haldane kinetics."""
    traj = synthesize(parse_vector(ic), duration, dt, _fbr_params(fbr))
    if drop_fraction > 0:
        rng = np.random.default_rng(seed)
        interior = np.arange(1, len(traj) - 1)
        n_drop = int(round(drop_fraction * interior.size))
        dropped = rng.choice(interior, size=n_drop, replace=False)
        traj = traj.subset(np.setdiff1d(np.arange(len(traj)), dropped))
        logger.info(f"Removed {n_drop} samples; {len(traj)} remain")
    write_trajectory(traj, out)
    _record(ctx, manifest_path_for(out), {"trajectory": out})


@main.command()
@click.option("--method", type=click.Choice(["discrete", "continuous"]), required=True)
@click.option("--target", type=click.Choice(sorted(TARGETS)), required=True)
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path(dir_okay=False),
              help="Training trajectory CSV (repeat for several)")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Checkpoint JSON")
@click.option("--loss-out", type=click.Path(dir_okay=False), help="Loss-history CSV")
@click.option("--iters", type=int, default=None, help="Adam iterations")
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--scheme", default="trapezoidal", show_default=True, help="trapezoidal or am1..am4")
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@click.option("--mu-inputs", type=click.Choice(["state", "substrate"]), default="state", show_default=True)
@click.option("--n-collocation", type=int, default=501, show_default=True)
@click.option("--collocation", type=click.Choice(["uniform_grid", "random_uniform"]), default="uniform_grid",
              show_default=True)
@click.option("--w-data", type=float, default=1.0, show_default=True)
@click.option("--w-residual", type=float, default=1.0, show_default=True)
@click.option("--time-scaling/--no-time-scaling", default=True, show_default=True)
@click.option("--normalized-loss/--plain-loss", default=False, show_default=True,
              help="Continuous only: scale each state component by its spread in the data")
@click.option("--log-every", type=int, default=100, show_default=True)
@seed_option
@threads_option
@fbr_options
@click.pass_context
@handle_errors
def train(ctx, method, target, data_paths, out, loss_out, iters, lr, scheme, normalize, mu_inputs,
          n_collocation, collocation, w_data, w_residual, time_scaling, normalized_loss, log_every, seed, threads,
          **fbr):
    """Train one of the four formulations."""
    p = _fbr_params(fbr)
    trajectories = [read_trajectory(path) for path in data_paths]
    common = {
        "target": TARGETS[target], "learning_rate": lr, "normalize": normalize, "seed": seed,
        "mu_inputs": mu_inputs, "log_every": log_every, "threads": threads,
    }
    if iters is not None:
        common["iterations"] = iters
    started = time.perf_counter()
    if method == "discrete":
        report = train_discrete(DiscreteTrainConfig(scheme=scheme, **common), trajectories, p)
    else:
        if len(trajectories) != 1:
            raise ContractViolation("continuous training takes exactly one trajectory")
        config = ContinuousTrainConfig(
            n_collocation=n_collocation, collocation_sampling=collocation, w_data=w_data,
            w_residual=w_residual, time_scaling=time_scaling,
            normalized_loss=normalized_loss, **common,
        )
        report = train_continuous(config, trajectories[0], p)
    loss_out = loss_out or f"{os.path.splitext(out)[0]}.loss.csv"
    save_training_checkpoint(report, out, p)
    write_loss_history(report.loss_history, loss_out)
    click.echo(f"final loss {report.final_loss:.6e}")
    _record(
        ctx, manifest_path_for(out), {"checkpoint": out, "loss": loss_out},
        inputs={f"data_{i}": path for i, path in enumerate(data_paths)},
        elapsed=time.perf_counter() - started,
    )


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(sorted(TARGETS)), required=True, help="Learned dynamics or learned mu")
@click.option("--ic", required=True, help="Initial condition X,S,V")
@click.option("--duration", type=float, default=50.0, show_default=True)
@click.option("--dt", type=float, default=0.05, show_default=True)
@click.option("--integrator", type=click.Choice(["rk4", "multistep"]), default="rk4", show_default=True)
@click.option("--scheme", default="trapezoidal", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@fbr_options
@click.pass_context
@handle_errors
def rollout(ctx, checkpoint, mode, ic, duration, dt, integrator, scheme, out, **fbr):
    """Integrate a trained model from an initial condition."""
    ck = load_training_checkpoint(checkpoint)
    if ck.target != TARGETS[mode]:
        raise ContractViolation(f"checkpoint holds a {ck.target} model, not usable for --mode {mode}")
    if mode == "dynamics":
        traj = rollout_learned_dynamics(ck.model, parse_vector(ic), duration, dt, integrator, scheme)
    else:
        p = _resolve_fbr(ctx, fbr, ck.fbr_params)
        traj = rollout_learned_mu(ck.model, parse_vector(ic), duration, dt, p, integrator, scheme)
    if traj.truncated:
        click.echo(f"rollout blew up; truncated at t={traj.times[-1]:.6g}", err=True)
    write_trajectory(traj, out)
    _record(ctx, manifest_path_for(out), {"trajectory": out}, inputs={"checkpoint": checkpoint}, source="rollout")


@main.command(name="eval")
@click.option("--predicted", required=True, type=click.Path(dir_okay=False))
@click.option("--truth", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Metrics CSV")
@click.option("--resample/--no-resample", default=False, show_default=True,
              help="Recompute the truth on the predicted grid with the reactor model")
@click.option("--checkpoint", type=click.Path(dir_okay=False), help="Also tabulate the learned model along the truth")
@click.option("--curves-out", type=click.Path(dir_okay=False))
@fbr_options
@click.pass_context
@handle_errors
def evaluate(ctx, predicted, truth, out, resample, checkpoint, curves_out, **fbr):
    """Error metrics of a predicted trajectory against the truth."""
    p = _fbr_params(fbr)
    pred, ref = read_trajectory(predicted), read_trajectory(truth)
    metrics = compare_trajectories(pred, ref, fbr_system(p) if resample else None)
    write_frame(metrics_table({os.path.basename(predicted): metrics}, label="predicted"), out)
    outputs = {"metrics": out}
    inputs = {"predicted": predicted, "truth": truth}
    if checkpoint:
        ck = load_training_checkpoint(checkpoint)
        curves_out = curves_out or f"{os.path.splitext(out)[0]}.curves.csv"
        model_p = _resolve_fbr(ctx, fbr, ck.fbr_params)
        if ck.target == "constitutive":
            frame = extract_mu_curve(ck.model, ref, model_p).to_frame()
        else:
            frame = rhs_along_trajectory(ref, model_p, ck.model, ck.target).to_frame()
        write_frame(frame, curves_out)
        outputs["curves"] = curves_out
        inputs["checkpoint"] = checkpoint
    click.echo(" ".join(f"{k}={v:.6g}" for k, v in zip(("X", "S", "V"), metrics.rel_rmse)))
    _record(ctx, manifest_path_for(out), outputs, inputs=inputs)


def _report_from_checkpoint(path: str) -> TrainReport:
    ck = load_training_checkpoint(path)
    return TrainReport(
        method=ck.method, target=ck.target, loss_history=[], final_model=ck.model, config=ck.config,
        elapsed=0.0, state_model=ck.state_model, data_window=ck.data_window,
    )


@main.command()
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option("--test-ic", default="0.15,1.2,12", show_default=True)
@click.option("--duration", type=float, default=50.0, show_default=True)
@click.option("--dt", type=float, default=0.05, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Ranking CSV")
@click.option("--strict", is_flag=True, help="Fail unless learning mu beats learning the dynamics")
@fbr_options
@click.pass_context
@handle_errors
def compare(ctx, checkpoints, test_ic, duration, dt, out, strict, **fbr):
    """Rank trained formulations by rollout accuracy."""
    reports = [_report_from_checkpoint(path) for path in checkpoints]
    table = method_comparison(reports, parse_vector(test_ic), duration, dt, _fbr_params(fbr), strict=strict)
    write_frame(table.to_frame(), out)
    for family, holds in sorted(table.claim_holds.items()):
        click.echo(f"{family}: constitutive {'beats' if holds else 'does not beat'} full dynamics")
    _record(ctx, manifest_path_for(out), {"ranking": out},
            inputs={f"checkpoint_{i}": path for i, path in enumerate(checkpoints)})


@main.command()
@click.option("--kind", type=click.Choice(PLOT_KINDS), required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="SVG file")
@click.option("--train", "train_paths", multiple=True, type=click.Path(dir_okay=False))
@click.option("--test", "test_path", type=click.Path(dir_okay=False))
@click.option("--predicted", type=click.Path(dir_okay=False))
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--data", "data_path", type=click.Path(dir_okay=False), help="Trajectory the model is evaluated along")
@click.option("--loss", "loss_path", type=click.Path(dir_okay=False))
@fbr_options
@click.pass_context
@handle_errors
def plot(ctx, kind, out, train_paths, test_path, predicted, checkpoint, data_path, loss_path, **fbr):
    """Render an SVG figure."""
    inputs: Dict[str, str] = {}
    if kind == "states":
        train_trajs = [read_trajectory(path) for path in train_paths]
        inputs.update({f"train_{i}": path for i, path in enumerate(train_paths)})
        test = read_trajectory(test_path) if test_path else None
        pred = read_trajectory(predicted) if predicted else None
        inputs.update({k: v for k, v in (("test", test_path), ("predicted", predicted)) if v})
        plot_states(out, train_trajs, test, pred)
    elif kind == "loss":
        if not loss_path:
            raise ContractViolation("--loss is required for the loss plot")
        plot_loss(out, read_loss_history(loss_path))
        inputs["loss"] = loss_path
    else:
        if not checkpoint or not data_path:
            raise ContractViolation(f"--checkpoint and --data are required for the {kind} plot")
        ck = load_training_checkpoint(checkpoint)
        p = _resolve_fbr(ctx, fbr, ck.fbr_params)
        traj = read_trajectory(data_path)
        inputs.update({"checkpoint": checkpoint, "data": data_path})
        if kind == "rhs":
            plot_rhs(out, rhs_along_trajectory(traj, p, ck.model, ck.target))
        else:
            if ck.target != "constitutive":
                raise ContractViolation(f"{kind} needs a growth-rate checkpoint")
            curve = extract_mu_curve(ck.model, traj, p)
            (plot_mu_vs_s if kind == "mu-vs-s" else plot_mu_vs_t)(out, curve)
    _record(ctx, manifest_path_for(out), {"figure": out}, inputs=inputs)


@main.command()
@click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), required=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, envvar="ODELEARN_SEED", default=None, help="Overrides the preset seed")
@click.option("--iters", type=int, default=None, help="Overrides the preset iteration count")
@threads_option
@click.pass_context
@handle_errors
def experiment(ctx, preset_name, out_dir, seed, iters, threads):
    """Run a named preset end to end."""
    preset = get_preset(preset_name)
    started = time.perf_counter()
    result = run_experiment(preset, out_dir, seed=seed, threads=threads, iterations=iters)
    click.echo(f"{preset.name}: mean relative RMSE {result.metrics.score:.4g}")
    _record(ctx, os.path.join(out_dir, "manifest.json"), result.outputs,
            source=f"preset:{preset.name}", elapsed=time.perf_counter() - started)


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@handle_errors
def replay(ctx, manifest_path):
    """Re-run the command recorded in a manifest."""
    manifest: RunManifest = read_manifest(manifest_path)
    name, *args = manifest.argv
    command = main.get_command(ctx, name)
    if command is None or name == "replay":
        raise CheckpointError(f"{manifest_path}: cannot replay command {name!r}")
    logger.info(f"Replaying: {' '.join(manifest.argv)}")
    with command.make_context(name, list(args), parent=ctx.parent) as sub_ctx:
        command.invoke(sub_ctx)


if __name__ == "__main__":
    main()
