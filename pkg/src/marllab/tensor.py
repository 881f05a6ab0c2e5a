"""Dense float64 tensor core: reverse-mode tape and parameter containers.

Everything is a C-contiguous float64 ndarray wrapped in a Node.  Each op
computes its value eagerly and, when handed a Tape, records an explicit
backward closure for that op alone.  There is no general graph walk:
backprop just replays the tape in reverse.  Passing tape=None gives a
pure forward pass whose outputs are detached by construction, which is
how target and frozen networks are evaluated.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, UsageError

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle finite checks after every op (construction is always checked)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _require_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {context}")


def as_tensor(data, context: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    _require_finite(arr, context)
    return arr


def _debug_check(arr: np.ndarray, op_name: str) -> None:
    if _DEBUG_CHECKS:
        _require_finite(arr, f"output of {op_name}")


class Node:
    """A value in the computation, with an optional accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool = False):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Node:
    return Node(as_tensor(data), requires_grad=False)


class Tape:
    """Records backward closures in execution order."""

    def __init__(self):
        self._ops: list = []

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    @property
    def n_ops(self) -> int:
        return len(self._ops)


def _accum(node: Node, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad += grad


def backprop(tape: Tape, loss: Node, seed_grad: float = 1.0) -> None:
    """Replay the tape in reverse, accumulating gradients into inputs.

    Gradients accumulate additively into .grad; callers that want fresh
    gradients must zero parameter grads first (the optimizer does this
    after each step).
    """
    if tape is None or tape.n_ops == 0:
        raise UsageError("backprop called with an empty tape; run a forward pass first")
    _accum(loss, np.full_like(loss.value, seed_grad))
    for backward_fn in reversed(tape._ops):
        backward_fn()


def _should_record(tape: Tape | None, *inputs: Node) -> bool:
    return tape is not None and any(n.requires_grad for n in inputs)


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# ops


def linear(tape: Tape | None, x: Node, w: Node, b: Node) -> Node:
    """Affine map x @ w + b for x (M, in), w (in, out), b (out,)."""
    value = x.value @ w.value + b.value
    _debug_check(value, "linear")
    out = Node(value, _should_record(tape, x, w, b))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if x.requires_grad:
                _accum(x, out.grad @ w.value.T)
            if w.requires_grad:
                _accum(w, x.value.T @ out.grad)
            if b.requires_grad:
                _accum(b, out.grad.sum(axis=0))

        tape.record(backward)
    return out


def relu(tape: Tape | None, x: Node) -> Node:
    value = np.maximum(x.value, 0.0)
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        mask = x.value > 0.0

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)

        tape.record(backward)
    return out


def elu(tape: Tape | None, x: Node) -> Node:
    """Exponential linear unit, alpha = 1."""
    neg = x.value < 0.0
    value = np.where(neg, np.expm1(np.minimum(x.value, 0.0)), x.value)
    _debug_check(value, "elu")
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        # d/dx is 1 on the linear side and elu(x)+1 on the exponential side
        local = np.where(neg, value + 1.0, 1.0)

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * local)

        tape.record(backward)
    return out


def abs_op(tape: Tape | None, x: Node) -> Node:
    """Elementwise absolute value; subgradient 0 at exactly 0."""
    value = np.abs(x.value)
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        local = np.sign(x.value)

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * local)

        tape.record(backward)
    return out


def reshape(tape: Tape | None, x: Node, shape: tuple) -> Node:
    value = np.ascontiguousarray(x.value.reshape(shape))
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        orig = x.value.shape

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad.reshape(orig))

        tape.record(backward)
    return out


def bmm(tape: Tape | None, a: Node, b: Node) -> Node:
    """Batched matmul: (M, p, q) @ (M, q, r) -> (M, p, r)."""
    value = a.value @ b.value
    _debug_check(value, "bmm")
    out = Node(value, _should_record(tape, a, b))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accum(a, out.grad @ b.value.transpose(0, 2, 1))
            if b.requires_grad:
                _accum(b, a.value.transpose(0, 2, 1) @ out.grad)

        tape.record(backward)
    return out


def add(tape: Tape | None, a: Node, b: Node) -> Node:
    """Broadcasting addition."""
    value = a.value + b.value
    _debug_check(value, "add")
    out = Node(value, _should_record(tape, a, b))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accum(a, _reduce_to_shape(out.grad, a.value.shape))
            if b.requires_grad:
                _accum(b, _reduce_to_shape(out.grad, b.value.shape))

        tape.record(backward)
    return out


def subtract(tape: Tape | None, a: Node, b: Node) -> Node:
    value = a.value - b.value
    _debug_check(value, "subtract")
    out = Node(value, _should_record(tape, a, b))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accum(a, _reduce_to_shape(out.grad, a.value.shape))
            if b.requires_grad:
                _accum(b, -_reduce_to_shape(out.grad, b.value.shape))

        tape.record(backward)
    return out


def multiply(tape: Tape | None, x: Node, factor: np.ndarray | float) -> Node:
    """Multiply by a constant array or scalar (no gradient into factor)."""
    value = x.value * factor
    _debug_check(value, "multiply")
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            _accum(x, _reduce_to_shape(out.grad * factor, x.value.shape))

        tape.record(backward)
    return out


def square(tape: Tape | None, x: Node) -> Node:
    value = x.value * x.value
    _debug_check(value, "square")
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        local = 2.0 * x.value

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * local)

        tape.record(backward)
    return out


def sum_all(tape: Tape | None, x: Node) -> Node:
    value = np.asarray(x.value.sum())
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:
        shape = x.value.shape

        def backward():
            if out.grad is None:
                return
            _accum(x, np.broadcast_to(out.grad, shape).astype(np.float64))

        tape.record(backward)
    return out


def take_per_row(tape: Tape | None, x: Node, idx: np.ndarray) -> Node:
    """Select x[i, idx[i]] from a (M, A) node, giving (M,)."""
    rows = np.arange(x.value.shape[0])
    value = np.ascontiguousarray(x.value[rows, idx])
    out = Node(value, _should_record(tape, x))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.value)
            np.add.at(g, (rows, idx), out.grad)
            _accum(x, g)

        tape.record(backward)
    return out


def stack_columns(tape: Tape | None, parts: list) -> Node:
    """Stack K nodes of shape (M,) into a (M, K) node."""
    value = np.stack([p.value for p in parts], axis=1)
    out = Node(value, _should_record(tape, *parts))
    if out.requires_grad:

        def backward():
            if out.grad is None:
                return
            for k, p in enumerate(parts):
                if p.requires_grad:
                    _accum(p, out.grad[:, k])

        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# parameters


class ParamSet:
    """Named, insertion-ordered collection of trainable Nodes."""

    def __init__(self):
        self._entries: dict[str, Node] = {}

    def add(self, name: str, value) -> Node:
        if name in self._entries:
            raise UsageError(f"duplicate parameter name {name!r}")
        node = Node(as_tensor(value, f"param {name}"), requires_grad=True)
        self._entries[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def values_dict(self) -> dict:
        """Name -> copied value array, in insertion order."""
        return {name: node.value.copy() for name, node in self._entries.items()}

    def zero_grads(self) -> None:
        for node in self._entries.values():
            node.grad = None

    def load_values(self, values: dict) -> None:
        """Overwrite parameter values in place from a name -> array dict."""
        missing = set(self._entries) - set(values)
        extra = set(values) - set(self._entries)
        if missing or extra:
            raise UsageError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, node in self._entries.items():
            arr = as_tensor(values[name], f"param {name}")
            if arr.shape != node.value.shape:
                raise UsageError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {node.value.shape}"
                )
            node.value = arr

    def copy_values_from(self, other: "ParamSet") -> None:
        self.load_values(other.values_dict())

    def total_size(self) -> int:
        return sum(node.value.size for node in self._entries.values())
