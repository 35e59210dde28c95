"""
Shared training machinery: the run report, fixed-order chunked evaluation
and the full-batch Adam loop used by both the discrete and continuous
trainers.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tape, Var
from .config import CHUNK_SIZE
from .errors import ContractViolation, TrainingDivergence
from .nn import AdamState, MlpModel, adam_step

logger = logging.getLogger(__name__)

LossAndGrad = Tuple[float, np.ndarray]


@dataclass
class TrainReport:
    """Outcome of one training run.

    ``final_model`` is the network needed for rollouts (f^NN or mu^NN);
    continuous runs also carry the time-to-state network in ``state_model``.
    The last loss_history entry is the loss of the final parameters.
    """
    method: str
    target: str
    loss_history: List[Tuple[int, float]]
    final_model: MlpModel
    config: Dict[str, Any]
    elapsed: float
    state_model: Optional[MlpModel] = None
    data_window: Optional[Tuple[float, float]] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1][1]


def make_chunks(n_items: int, chunk_size: int = CHUNK_SIZE) -> List[slice]:
    """Fixed-size consecutive slices; the last one may be shorter."""
    if n_items <= 0:
        raise ContractViolation("nothing to evaluate")
    return [slice(a, min(a + chunk_size, n_items)) for a in range(0, n_items, chunk_size)]


class ChunkRunner:
    """Evaluates independent chunks, optionally on a thread pool.

    Results are always reduced in chunk order, so the totals do not depend
    on the number of threads.
    """

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ContractViolation(f"threads must be >= 1, got {threads}")
        self.threads = threads
        self._pool: Optional[ThreadPoolExecutor] = None

    def __enter__(self) -> "ChunkRunner":
        if self.threads > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        return self

    def __exit__(self, *exc) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
        if self._pool is None:
            return [fn(item) for item in items]
        return list(self._pool.map(fn, items))

    def reduce(self, fn: Callable[[Any], LossAndGrad], items: Sequence[Any], n_params: int) -> LossAndGrad:
        total = 0.0
        grad = np.zeros(n_params)
        for loss, g in self.map(fn, items):
            total += loss
            grad = grad + g
        return total, grad


def taped(build: Callable[[Var], Var], params: np.ndarray) -> LossAndGrad:
    """Build a scalar on a fresh tape over ``params`` and differentiate it."""
    tape = Tape()
    tape.params = tape.variable(params, kind="params")
    out = build(tape.params)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(params)
    return float(out.value), tape.gradient(out, [tape.params])[0]


def run_adam(
    loss_and_grad: Callable[[np.ndarray], LossAndGrad],
    params: np.ndarray,
    iterations: int,
    hyper: Dict[str, float],
    log_every: int = 100,
    label: str = "training",
) -> Tuple[np.ndarray, List[Tuple[int, float]]]:
    """Full-batch Adam minimization.

    Returns:
        Final parameters and the loss history (every ``log_every``
        iterations, then the loss of the final parameters)

    Raises:
        TrainingDivergence: When the loss or gradient becomes non-finite
    """
    state = AdamState.zeros(params.size, **hyper)
    history: List[Tuple[int, float]] = []
    started = time.perf_counter()
    for it in range(iterations):
        loss, grad = loss_and_grad(params)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            logger.error(f"{label}: loss diverged at iteration {it}")
            raise TrainingDivergence(f"{label} loss became non-finite", it)
        if it % log_every == 0:
            history.append((it, loss))
            logger.info(f"{label}: iteration {it} loss {loss:.6e} ({time.perf_counter() - started:.1f}s)")
        params, state = adam_step(state, params, grad)
    final_loss, _ = loss_and_grad(params)
    if not np.isfinite(final_loss):
        raise TrainingDivergence(f"{label} loss became non-finite", iterations)
    history.append((iterations, final_loss))
    logger.info(f"{label}: finished {iterations} iterations, final loss {final_loss:.6e}")
    return params, history
