"""
Automatic Differentiation Module

This module provides a reverse-mode differentiation tape and a forward-mode
dual-number layer. Tape nodes hold numpy values (a scalar or a batch of
independent data points), and every node records its parents and one
vector-Jacobian product per parent. Dual numbers carry a tangent with respect
to one scalar input (time); when their components are tape variables, the
tangent arithmetic is itself recorded, which gives parameter gradients of
time-derivative terms (forward-over-reverse).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float]
Vjp = Callable[[np.ndarray], np.ndarray]


@dataclass
class Node:
    """One recorded elementary operation."""
    kind: str
    parents: Tuple[int, ...]
    vjps: Tuple[Vjp, ...]


@dataclass
class Tape:
    """Append-only record of elementary operations in evaluation order.

    Parent indices of a node are always smaller than its own index, so a
    single reverse sweep visits every node once.
    """
    nodes: List[Node] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)
    params: Optional["Var"] = None
    outputs: Optional["Var"] = None

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value: ArrayLike, kind: str = "input") -> "Var":
        """Register a leaf whose gradient can be requested."""
        return self._push(kind, np.array(value, dtype=np.float64), (), ())

    def _push(self, kind: str, value: np.ndarray, parents: Tuple[int, ...], vjps: Tuple[Vjp, ...]) -> "Var":
        index = len(self.nodes)
        self.nodes.append(Node(kind, parents, vjps))
        self.values.append(value)
        return Var(self, index, value)

    def gradient(self, output: "Var", wrt: Sequence["Var"]) -> List[np.ndarray]:
        """Reverse sweep from a scalar output.

        Args:
            output: Scalar node to differentiate
            wrt: Leaves whose adjoints are returned

        Returns:
            One adjoint array per requested leaf, shaped like the leaf

        Raises:
            ContractViolation: If the output is not a single value
        """
        if output.tape is not self:
            raise ContractViolation("output belongs to a different tape")
        if output.value.size != 1:
            raise ContractViolation(
                f"cannot seed a non-scalar node of shape {output.value.shape}; reduce it first"
            )
        adjoints: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        adjoints[output.index] = np.ones_like(output.value)
        for k in range(output.index, -1, -1):
            g = adjoints[k]
            if g is None:
                continue
            node = self.nodes[k]
            for parent, vjp in zip(node.parents, node.vjps):
                contribution = vjp(g)
                if adjoints[parent] is None:
                    adjoints[parent] = contribution
                else:
                    adjoints[parent] = adjoints[parent] + contribution
        grads = []
        for leaf in wrt:
            adj = adjoints[leaf.index]
            grads.append(np.zeros_like(leaf.value) if adj is None else np.asarray(adj).reshape(leaf.value.shape))
        return grads


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


class Var:
    """Handle to a tape node; arithmetic on it is recorded."""

    __slots__ = ("tape", "index", "value")
    # Make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.value.shape})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def _binary(self, kind: str, other, value: np.ndarray, da: Vjp, db: Vjp, reverse: bool = False) -> "Var":
        parents, vjps = [], []
        a, b = (other, self) if reverse else (self, other)
        if isinstance(a, Var):
            parents.append(a.index)
            vjps.append(da)
        if isinstance(b, Var):
            if isinstance(a, Var) and a.tape is not b.tape:
                raise ContractViolation("operands belong to different tapes")
            parents.append(b.index)
            vjps.append(db)
        return self.tape._push(kind, value, tuple(parents), tuple(vjps))

    def _add(self, other, reverse=False):
        a, b = (other, self) if reverse else (self, other)
        av, bv = np.asarray(_value(a)), np.asarray(_value(b))
        return self._binary(
            "add", other, av + bv,
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(g, bv.shape),
            reverse,
        )

    def __add__(self, other):
        return self._add(other)

    def __radd__(self, other):
        return self._add(other, reverse=True)

    def _sub(self, other, reverse=False):
        a, b = (other, self) if reverse else (self, other)
        av, bv = np.asarray(_value(a)), np.asarray(_value(b))
        return self._binary(
            "sub", other, av - bv,
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(-g, bv.shape),
            reverse,
        )

    def __sub__(self, other):
        return self._sub(other)

    def __rsub__(self, other):
        return self._sub(other, reverse=True)

    def _mul(self, other, reverse=False):
        a, b = (other, self) if reverse else (self, other)
        av, bv = np.asarray(_value(a)), np.asarray(_value(b))
        return self._binary(
            "mul", other, av * bv,
            lambda g: _unbroadcast(g * bv, av.shape),
            lambda g: _unbroadcast(g * av, bv.shape),
            reverse,
        )

    def __mul__(self, other):
        return self._mul(other)

    def __rmul__(self, other):
        return self._mul(other, reverse=True)

    def _div(self, other, reverse=False):
        a, b = (other, self) if reverse else (self, other)
        av, bv = np.asarray(_value(a)), np.asarray(_value(b))
        return self._binary(
            "div", other, av / bv,
            lambda g: _unbroadcast(g / bv, av.shape),
            lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape),
            reverse,
        )

    def __truediv__(self, other):
        return self._div(other)

    def __rtruediv__(self, other):
        return self._div(other, reverse=True)

    def _matmul(self, other, reverse=False):
        a, b = (other, self) if reverse else (self, other)
        av, bv = np.asarray(_value(a)), np.asarray(_value(b))
        if bv.ndim != 2 or av.ndim not in (1, 2):
            raise ContractViolation(f"matmul supports (n,)|(B,n) @ (n,m), got {av.shape} @ {bv.shape}")
        if av.ndim == 1:
            da = lambda g: bv @ g
            db = lambda g: np.outer(av, g)
        else:
            da = lambda g: g @ bv.T
            db = lambda g: av.T @ g
        return self._binary("matmul", other, av @ bv, da, db, reverse)

    def __matmul__(self, other):
        return self._matmul(other)

    def __rmatmul__(self, other):
        return self._matmul(other, reverse=True)

    def __neg__(self):
        return self.tape._push("neg", -self.value, (self.index,), (lambda g: -g,))

    def tanh(self) -> "Var":
        y = np.tanh(self.value)
        return self.tape._push("tanh", y, (self.index,), (lambda g: g * (1.0 - y * y),))

    def exp(self) -> "Var":
        y = np.exp(self.value)
        return self.tape._push("exp", y, (self.index,), (lambda g: g * y,))

    def square(self) -> "Var":
        v = self.value
        return self.tape._push("square", v * v, (self.index,), (lambda g: 2.0 * g * v,))

    def sum(self, axis: Optional[int] = None) -> "Var":
        shape = self.value.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.array(np.broadcast_to(g, shape))

        return self.tape._push("sum", np.asarray(np.sum(self.value, axis=axis)), (self.index,), (vjp,))

    def mean(self, axis: Optional[int] = None) -> "Var":
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) / float(count)

    def reshape(self, *shape) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        original = self.value.shape
        return self.tape._push(
            "reshape", self.value.reshape(shape), (self.index,), (lambda g: g.reshape(original),)
        )

    def __getitem__(self, idx) -> "Var":
        shape = self.value.shape

        def vjp(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return full

        return self.tape._push("index", self.value[idx], (self.index,), (vjp,))


def tanh(x):
    """Hyperbolic tangent of an array, tape variable or dual number."""
    return x.tanh() if hasattr(x, "tanh") else np.tanh(x)


def exp(x):
    return x.exp() if hasattr(x, "exp") else np.exp(x)


def square(x):
    return x.square() if hasattr(x, "square") else x * x


def stack(items: Sequence, axis: int = 0):
    """Stack arrays and tape variables; constants contribute no parents."""
    variables = [x for x in items if isinstance(x, Var)]
    values = [np.asarray(_value(x), dtype=np.float64) for x in items]
    out = np.stack(values, axis=axis)
    if not variables:
        return out
    tape = variables[0].tape
    parents, vjps = [], []
    for i, x in enumerate(items):
        if isinstance(x, Var):
            parents.append(x.index)
            vjps.append(lambda g, i=i: np.take(g, i, axis=axis))
    return tape._push("stack", out, tuple(parents), tuple(vjps))


def values_of(x) -> np.ndarray:
    """Plain numpy value of an array, tape variable or dual number."""
    if isinstance(x, DualScalar):
        return values_of(x.value)
    return np.asarray(_value(x))


class DualScalar:
    """Dual number (value, tangent) with respect to one scalar input.

    Both components may be numpy arrays (elementwise over a batch of inputs)
    or tape variables. Right operands that are not dual numbers are treated as
    constant in the scalar input.
    """

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    def __repr__(self) -> str:
        return f"DualScalar(value={values_of(self.value)!r}, tangent={values_of(self.tangent)!r})"

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value + other.value, self.tangent + other.tangent)
        return DualScalar(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value - other.value, self.tangent - other.tangent)
        return DualScalar(self.value - other, self.tangent)

    def __rsub__(self, other):
        return DualScalar(other - self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(
                self.value * other.value,
                self.tangent * other.value + self.value * other.tangent,
            )
        return DualScalar(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(
                self.value / other.value,
                (self.tangent * other.value - self.value * other.tangent) / (other.value * other.value),
            )
        return DualScalar(self.value / other, self.tangent / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        return DualScalar(other * inv, -other * self.tangent * inv * inv)

    def __matmul__(self, other):
        return DualScalar(self.value @ other, self.tangent @ other)

    def __neg__(self):
        return DualScalar(-self.value, -self.tangent)

    def __getitem__(self, idx):
        return DualScalar(self.value[idx], self.tangent[idx])

    def tanh(self) -> "DualScalar":
        y = tanh(self.value)
        return DualScalar(y, self.tangent * (1.0 - y * y))

    def exp(self) -> "DualScalar":
        y = exp(self.value)
        return DualScalar(y, self.tangent * y)

    def square(self) -> "DualScalar":
        return DualScalar(self.value * self.value, 2.0 * self.value * self.tangent)


def tape_forward(model, x: Sequence[float]) -> Tuple[np.ndarray, Tape]:
    """Evaluate a network while recording every elementary operation.

    Args:
        model: MlpModel to evaluate
        x: Input vector (or batch of row vectors)

    Returns:
        The output values (identical to plain evaluation) and the tape, whose
        ``params`` and ``outputs`` attributes point at the parameter leaf and
        the output node

    Raises:
        ContractViolation: If the input width does not match the model
    """
    from .nn import mlp_apply

    tape = Tape()
    tape.params = tape.variable(model.params, kind="params")
    tape.outputs = mlp_apply(model, np.asarray(x, dtype=np.float64), params=tape.params)
    return tape.outputs.value, tape


def backward(tape: Tape, seed: Union[int, Var]) -> np.ndarray:
    """Gradient of one scalar on the tape with respect to the model parameters.

    Args:
        tape: Tape produced by tape_forward or a loss built on top of it
        seed: Either a flat index into the recorded outputs or a scalar node

    Returns:
        Gradient vector ordered like the flat parameter vector

    Raises:
        ContractViolation: On an invalid seed or a tape without parameters
    """
    if tape.params is None:
        raise ContractViolation("tape has no parameter leaf")
    if isinstance(seed, Var):
        node = seed
    else:
        if tape.outputs is None:
            raise ContractViolation("tape has no recorded outputs")
        size = tape.outputs.value.size
        if not 0 <= seed < size:
            raise ContractViolation(f"seed index {seed} outside outputs of size {size}")
        node = tape.outputs.reshape(size)[seed]
    return tape.gradient(node, [tape.params])[0]


def _time_input(model, t) -> np.ndarray:
    if model.layer_sizes[0] != 1:
        raise ContractViolation(f"time-input network must have input width 1, got {model.layer_sizes[0]}")
    return np.asarray(t, dtype=np.float64).reshape(-1, 1)


def time_derivative(model, t) -> Tuple[np.ndarray, np.ndarray]:
    """Outputs of a time-input network and their exact derivative in t.

    Args:
        model: MlpModel with input width 1
        t: A time or an array of times

    Returns:
        (y, dy_dt); one row per time when t is an array, else vectors
    """
    from .nn import mlp_apply

    times = _time_input(model, t)
    out = mlp_apply(model, DualScalar(times, np.ones_like(times)))
    y, dy = np.asarray(out.value), np.asarray(out.tangent)
    if np.ndim(t) == 0:
        return y[0], dy[0]
    return y, dy


def dual_forward(model, times: np.ndarray, params: Var) -> DualScalar:
    """Taped forward-mode evaluation of a time-input network on a batch of times."""
    from .nn import mlp_apply

    col = _time_input(model, times)
    return mlp_apply(model, DualScalar(col, np.ones_like(col)), params=params)


def time_derivative_with_param_grads(
    model,
    t: float,
    downstream: Callable[[Var, Var], Union[Var, float]],
) -> Tuple[float, np.ndarray]:
    """Scalar functional of (y, dy/dt) and its parameter gradient.

    Args:
        model: MlpModel with input width 1
        t: Time at which y and dy/dt are evaluated
        downstream: Maps the taped (y, dy_dt) vectors to a scalar

    Returns:
        (residual, gradient) where the gradient includes the paths through
        both y and dy/dt
    """
    tape = Tape()
    tape.params = tape.variable(model.params, kind="params")
    out = dual_forward(model, np.array([t]), tape.params)
    residual = downstream(out.value[0], out.tangent[0])
    if not isinstance(residual, Var):
        return float(residual), np.zeros_like(model.params)
    return float(residual.value), backward(tape, residual)
