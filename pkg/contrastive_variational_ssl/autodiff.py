"""Reverse-mode automatic differentiation over dense float64 tensors.

This module provides the numeric core of the toolkit: a Tensor value type,
a Tape that records differentiable operations while it is active, the
operations the models and losses need, backpropagation and a central
finite-difference gradient checker.

Key Features:
- Tensors are numpy float64 arrays with an attached gradient slot
- Operations record themselves on the active (thread-local) tape only when
  an input requires a gradient
- Only scalar and trailing-row-vector broadcasting is supported
- NaN/Inf values are rejected at every operation boundary
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from aws_lambda_powertools import Logger

from .constants import GRADCHECK_DENOMINATOR_FLOOR, SERVICE_NAME
from .errors import (
    DetachedLoss,
    DivisionByZero,
    DomainError,
    InvalidAxis,
    NonFiniteValue,
    NotScalar,
    ShapeMismatch,
)

logger = Logger(service=SERVICE_NAME, child=True)

UNARY_KINDS = ["exp", "log", "tanh", "relu", "neg", "sqrt", "square"]
BINARY_KINDS = ["add", "sub", "mul", "div"]
REDUCE_KINDS = ["sum", "mean", "max"]

_tape_state = threading.local()

Scalar = Union[int, float]
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Dense float64 array with an optional gradient slot
    """

    def __init__(self, data, requires_grad: bool = False):
        """
        Initialize a Tensor

        Args:
            data (array-like): Values; converted to a C-ordered float64 array
            requires_grad (bool): Whether backward should populate grad

        Raises:
            NonFiniteValue: If any value is NaN or Inf
        """
        array = np.asarray(data, dtype=np.float64)
        if not array.flags.c_contiguous:
            array = array.copy(order="C")
        if not np.all(np.isfinite(array)):
            raise NonFiniteValue("tensor values must be finite")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> List[int]:
        return list(self.data.shape)

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the values"""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise NotScalar(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce("sum", self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return reduce("mean", self, axis)

    def __add__(self, other) -> "Tensor":
        return combine_binary("add", self, as_tensor(other))

    def __radd__(self, other) -> "Tensor":
        return combine_binary("add", self, as_tensor(other))

    def __sub__(self, other) -> "Tensor":
        return combine_binary("sub", self, as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return combine_binary("add", map_unary("neg", self), as_tensor(other))

    def __mul__(self, other) -> "Tensor":
        return combine_binary("mul", self, as_tensor(other))

    def __rmul__(self, other) -> "Tensor":
        return combine_binary("mul", self, as_tensor(other))

    def __truediv__(self, other) -> "Tensor":
        return combine_binary("div", self, as_tensor(other))

    def __neg__(self) -> "Tensor":
        return map_unary("neg", self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """
    One recorded operation: kind, inputs, output and the local backward rule
    """

    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: GradFn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of differentiable operations for one training step.

    Usage:
        with Tape() as tape:
            loss = ...
            backward(tape, loss)
    """

    def __init__(self):
        """Initialize an empty tape."""
        self.nodes: List[Node] = []
        self.leaves: List[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def register(self, tensor: Tensor) -> None:
        self.leaves.append(tensor)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def produced(self, tensor: Tensor) -> bool:
        """Check whether a tensor is an output or a registered leaf of this tape."""
        return any(node.output is tensor for node in self.nodes) or any(
            leaf is tensor for leaf in self.leaves
        )

    def clear(self) -> None:
        self.nodes.clear()
        self.leaves.clear()


def _tape_stack() -> List[Optional[Tape]]:
    stack = getattr(_tape_state, "stack", None)
    if stack is None:
        stack = []
        _tape_state.stack = stack
    return stack


def active_tape() -> Optional[Tape]:
    """Return the tape currently recording on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend tape recording for evaluation passes."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def as_tensor(value) -> Tensor:
    """Wrap a python scalar or array as a constant tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _check_finite_inputs(kind: str, *inputs: Tensor) -> None:
    for tensor in inputs:
        if not np.all(np.isfinite(tensor.data)):
            raise NonFiniteValue(f"{kind}: input holds NaN or Inf")


def _emit(kind: str, inputs: Tuple[Tensor, ...], out_data: np.ndarray, backward_fn: GradFn) -> Tensor:
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    try:
        out = Tensor(out_data, requires_grad=needs_grad)
    except NonFiniteValue:
        raise NonFiniteValue(f"{kind}: result holds NaN or Inf") from None
    if needs_grad:
        tape.record(Node(kind, inputs, out, backward_fn))
    return out


def new_tensor(shape: Sequence[int], values, requires_grad: bool = False) -> Tensor:
    """Create a tensor from a shape and flat row-major values.

    Args:
        shape (Sequence[int]): Dimension sizes
        values (array-like): Flat values, product(shape) of them
        requires_grad (bool): Whether backward should populate grad

    Returns:
        Tensor: New tensor, registered on the active tape iff requires_grad

    Raises:
        ShapeMismatch: If the value count does not match the shape
        NonFiniteValue: If any value is NaN or Inf
    """
    dims = [int(d) for d in shape]
    if any(d < 0 for d in dims):
        raise ShapeMismatch(f"negative dimension in shape {dims}")
    flat = np.array(values, dtype=np.float64).reshape(-1)
    expected = int(np.prod(dims)) if dims else 1
    if flat.size != expected:
        raise ShapeMismatch(f"shape {dims} needs {expected} values, got {flat.size}")
    tensor = Tensor(flat.reshape(dims), requires_grad=requires_grad)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.register(tensor)
    return tensor


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of [m,k] and [k,n] tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    _check_finite_inputs("matmul", a, b)
    a_data, b_data = a.data, b.data

    def backward_fn(grad):
        return grad @ b_data.T, a_data.T @ grad

    return _emit("matmul", (a, b), a_data @ b_data, backward_fn)


def map_unary(kind: str, x: Tensor) -> Tensor:
    """Apply an elementwise function.

    Args:
        kind (str): One of exp, log, tanh, relu, neg, sqrt, square
        x (Tensor): Input

    Returns:
        Tensor: Elementwise result

    Raises:
        DomainError: For log of non-positive or sqrt of negative values
    """
    if kind not in UNARY_KINDS:
        raise DomainError(f"unknown unary op '{kind}'")
    _check_finite_inputs(kind, x)
    x_data = x.data

    with np.errstate(all="ignore"):
        if kind == "exp":
            out = np.exp(x_data)
            backward_fn = lambda grad: (grad * out,)
        elif kind == "log":
            if np.any(x_data <= 0):
                raise DomainError("log: inputs must be positive")
            out = np.log(x_data)
            backward_fn = lambda grad: (grad / x_data,)
        elif kind == "tanh":
            out = np.tanh(x_data)
            backward_fn = lambda grad: (grad * (1.0 - out * out),)
        elif kind == "relu":
            out = np.maximum(x_data, 0.0)
            backward_fn = lambda grad: (grad * (x_data > 0),)
        elif kind == "neg":
            out = -x_data
            backward_fn = lambda grad: (-grad,)
        elif kind == "sqrt":
            if np.any(x_data < 0):
                raise DomainError("sqrt: inputs must be non-negative")
            out = np.sqrt(x_data)
            backward_fn = lambda grad: (grad * 0.5 / out,)
        else:
            out = x_data * x_data
            backward_fn = lambda grad: (2.0 * x_data * grad,)

    return _emit(kind, (x,), out, backward_fn)


def _broadcast_mode(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1 and b.ndim <= 1:
        return "scalar"
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return "row"
    raise ShapeMismatch(f"cannot broadcast {b.shape} against {a.shape}")


def _unbroadcast(grad: np.ndarray, mode: str, shape: List[int]) -> np.ndarray:
    if mode == "same":
        return grad
    if mode == "scalar":
        return np.asarray(grad.sum()).reshape(shape)
    return grad.reshape(-1, shape[0]).sum(axis=0)


def combine_binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise binary op with scalar or trailing-row-vector broadcasting of b.

    Args:
        kind (str): One of add, sub, mul, div
        a (Tensor): Left operand; fixes the output shape
        b (Tensor): Right operand; same shape as a, a scalar, or a row matching a's last dim

    Returns:
        Tensor: Result with a's shape

    Raises:
        ShapeMismatch: If b cannot be broadcast against a
        DivisionByZero: If dividing by a zero element
    """
    if kind not in BINARY_KINDS:
        raise DomainError(f"unknown binary op '{kind}'")
    mode = _broadcast_mode(a, b)
    _check_finite_inputs(kind, a, b)
    a_data = a.data
    b_data = b.data.reshape(()) if mode == "scalar" else b.data
    b_shape = b.shape

    if kind == "add":
        out = a_data + b_data
        backward_fn = lambda grad: (grad, _unbroadcast(grad, mode, b_shape))
    elif kind == "sub":
        out = a_data - b_data
        backward_fn = lambda grad: (grad, _unbroadcast(-grad, mode, b_shape))
    elif kind == "mul":
        out = a_data * b_data
        backward_fn = lambda grad: (
            grad * b_data,
            _unbroadcast(grad * a_data, mode, b_shape),
        )
    else:
        if np.any(b_data == 0):
            raise DivisionByZero("div: divisor holds a zero element")
        out = a_data / b_data
        backward_fn = lambda grad: (
            grad / b_data,
            _unbroadcast(-grad * a_data / (b_data * b_data), mode, b_shape),
        )

    return _emit(kind, (a, b), out, backward_fn)


def _check_axis(x: Tensor, axis: Optional[int]) -> None:
    if axis is None:
        return
    if not isinstance(axis, (int, np.integer)) or axis < 0 or axis >= x.ndim:
        raise InvalidAxis(f"axis {axis} is invalid for a rank-{x.ndim} tensor")


def _expand(grad: np.ndarray, axis: Optional[int], shape: Tuple[int, ...]) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape)
    return np.broadcast_to(np.expand_dims(grad, axis), shape)


def reduce(kind: str, x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Reduce along one axis, or over all values when axis is None.

    Args:
        kind (str): One of sum, mean, max
        x (Tensor): Input
        axis (int, optional): Axis to reduce; removed from the output shape

    Returns:
        Tensor: Reduced tensor

    Raises:
        InvalidAxis: If axis is not below the rank
    """
    if kind not in REDUCE_KINDS:
        raise DomainError(f"unknown reduction '{kind}'")
    _check_axis(x, axis)
    if x.size == 0:
        raise ShapeMismatch(f"{kind}: cannot reduce an empty tensor")
    _check_finite_inputs(kind, x)
    x_data = x.data
    shape = x_data.shape

    if kind == "sum":
        out = x_data.sum(axis=axis)
        backward_fn = lambda grad: (_expand(grad, axis, shape).copy(),)
    elif kind == "mean":
        count = x_data.size if axis is None else shape[axis]
        out = x_data.mean(axis=axis)
        backward_fn = lambda grad: (_expand(grad, axis, shape) / count,)
    else:
        out = x_data.max(axis=axis)
        # np.argmax returns the first maximal index, i.e. the lowest flat index on ties
        if axis is None:
            flat_index = int(np.argmax(x_data))

            def backward_fn(grad):
                routed = np.zeros(x_data.size)
                routed[flat_index] = grad
                return (routed.reshape(shape),)

        else:
            winners = np.expand_dims(np.argmax(x_data, axis=axis), axis)

            def backward_fn(grad):
                routed = np.zeros(shape)
                np.put_along_axis(routed, winners, np.expand_dims(grad, axis), axis=axis)
                return (routed,)

    return _emit(kind, (x,), np.asarray(out), backward_fn)


def log_sum_exp(x: Tensor, axis: int) -> Tensor:
    """Shift-stabilized log Σ exp along an axis: m + log Σ exp(x − m).

    Args:
        x (Tensor): Input
        axis (int): Axis to reduce

    Returns:
        Tensor: Result with the axis removed

    Raises:
        InvalidAxis: If axis is not below the rank
    """
    if axis is None:
        raise InvalidAxis("log_sum_exp needs an explicit axis")
    _check_axis(x, axis)
    _check_finite_inputs("log_sum_exp", x)
    x_data = x.data
    shift = x_data.max(axis=axis, keepdims=True)
    out = np.squeeze(shift, axis=axis) + np.log(np.sum(np.exp(x_data - shift), axis=axis))

    def backward_fn(grad):
        softmax = np.exp(x_data - np.expand_dims(out, axis))
        return (np.expand_dims(grad, axis) * softmax,)

    return _emit("log_sum_exp", (x,), out, backward_fn)


def transpose(x: Tensor) -> Tensor:
    """Transpose a matrix."""
    if x.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got shape {x.shape}")
    return _emit("transpose", (x,), x.data.T, lambda grad: (grad.T,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors of equal rank along an existing axis."""
    if not tensors:
        raise ShapeMismatch("concat needs at least one tensor")
    first = tensors[0]
    _check_axis(first, axis)
    for tensor in tensors[1:]:
        other_dims = [d for i, d in enumerate(tensor.shape) if i != axis]
        first_dims = [d for i, d in enumerate(first.shape) if i != axis]
        if tensor.ndim != first.ndim or other_dims != first_dims:
            raise ShapeMismatch(f"concat: {tensor.shape} does not match {first.shape}")
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return _emit("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), backward_fn)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp values into [low, high]; gradient is zero outside the interval."""
    if low > high:
        raise DomainError(f"clip: low {low} exceeds high {high}")
    _check_finite_inputs("clip", x)
    x_data = x.data
    inside = (x_data >= low) & (x_data <= high)
    return _emit("clip", (x,), np.clip(x_data, low, high), lambda grad: (grad * inside,))


def backward(tape: Tape, loss: Tensor) -> None:
    """Backpropagate from a scalar loss through every node on the tape.

    Gradients are accumulated (+=) into the grad slot of every tensor that
    requires one. The tape is cleared afterwards.

    Args:
        tape (Tape): Tape the loss was recorded on
        loss (Tensor): Scalar loss

    Raises:
        NotScalar: If the loss holds more than one value
        DetachedLoss: If the loss was not produced on the tape
    """
    if loss.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise DetachedLoss("loss was not recorded on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for node in reversed(tape.nodes):
        upstream = grads.get(id(node.output))
        if upstream is None:
            continue
        for tensor, local in zip(node.inputs, node.backward_fn(upstream)):
            if local is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + local
            else:
                grads[key] = np.asarray(local, dtype=np.float64).reshape(tensor.data.shape)
                owners[key] = tensor

    for key, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteValue("backward: gradient holds NaN or Inf")
        tensor = owners[key]
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad

    logger.debug("Backward pass complete", extra={"nodes": len(tape.nodes)})
    tape.clear()


def grad_check_many(f: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float) -> float:
    """Compare backward gradients with central finite differences.

    Args:
        f (Callable[[], Tensor]): Deterministic scalar function reading the tensors
        tensors (Sequence[Tensor]): Inputs to perturb; must require grad
        eps (float): Finite-difference step

    Returns:
        float: Worst per-coordinate relative error |a−n| / max(1e-8, |a|+|n|)
    """
    if eps <= 0:
        raise DomainError("grad_check: eps must be positive")
    for tensor in tensors:
        tensor.zero_grad()
    with Tape() as tape:
        loss = f()
        backward(tape, loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    with no_grad():
        for tensor, exact in zip(tensors, analytic):
            flat = tensor.data.reshape(-1)
            exact_flat = exact.reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + eps
                upper = f().item()
                flat[k] = original - eps
                lower = f().item()
                flat[k] = original
                numeric = (upper - lower) / (2.0 * eps)
                denominator = max(GRADCHECK_DENOMINATOR_FLOOR, abs(exact_flat[k]) + abs(numeric))
                worst = max(worst, abs(exact_flat[k] - numeric) / denominator)
    for tensor in tensors:
        tensor.zero_grad()
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float) -> float:
    """Finite-difference check of a scalar function of one tensor.

    Args:
        f (Callable[[Tensor], Tensor]): Deterministic scalar-valued function
        x (Tensor): Point to check at
        eps (float): Finite-difference step

    Returns:
        float: Worst per-coordinate relative error
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    return grad_check_many(lambda: f(probe), [probe], eps)
