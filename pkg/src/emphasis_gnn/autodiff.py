"""Dense float64 tensors with a dynamic reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` (one
stack per thread) whenever at least one input requires a gradient.  Outside
of a tape, or when no input requires a gradient, operations are plain numpy
computations and nothing is recorded.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(x * x)
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4.])

Broadcasting is limited to a row vector added to a matrix (bias addition)
and to Python scalars; every other shape mismatch raises :class:`ShapeError`.
"""

import threading
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "current_tape",
    "record",
    "backward",
    "grad_check",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "concat",
    "concat_rows",
    "gather_rows",
    "softmax_rows",
    "masked_softmax_rows",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "activate",
    "log",
    "sum_all",
    "mean_all",
]

class Tensor:
    """A float64 array of rank 0-3 with an optional gradient buffer.

    Rank 0 is reserved for scalar reductions (losses).
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"tensors have rank at most 3, got shape {arr.shape}")
        if any(s == 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class _Node(NamedTuple):
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; tapes nest and are private to the thread that
    entered them.
    """

    def __init__(self):
        self.nodes: list = []
        self._produced: set = set()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _push(self, inputs, output, backward_fn):
        self.nodes.append(_Node(tuple(inputs), output, backward_fn))
        self._produced.add(id(output))

    def backward(self, loss: Tensor):
        backward(self, loss)


_local = threading.local()


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def record(out_data, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out_data`` in a tensor and record it on the active tape.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per
    input, in order.  This is the extension point for fused operations.
    """
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._push(inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ContractError("loss was not produced on this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    # ids of gradient arrays already passed on; a leaf may adopt an array
    # without copying only if nothing else can hold a reference to it
    seen = set()
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        seen.add(id(g))
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in tape._produced:
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
            elif inp.grad is None:
                fresh = gi.flags.owndata and gi.flags.writeable and id(gi) not in seen
                inp.grad = gi if fresh else np.array(gi, dtype=np.float64, copy=True)
            else:
                inp.grad += gi
            seen.add(id(gi))


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (n,k)@(k,m), (k,)@(k,m) and (n,k)@(k,)."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or (a.ndim == 1 and b.ndim == 1):
        raise _shape_error("matmul", a, b)
    if a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, bd) if b.ndim == 1 else g @ bd.T
        if b.requires_grad:
            gb = np.outer(ad, g) if a.ndim == 1 else ad.T @ g
        return ga, gb

    return record(ad @ bd, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return record(a.data.T.copy(), (a,), lambda g: (g.T,))


def _binary_shapes(op, a: Tensor, b: Tensor, allow_bias: bool):
    if a.shape == b.shape:
        return None
    if allow_bias and a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return "bias_b"
    if allow_bias and b.ndim == 2 and a.ndim == 1 and a.shape[0] == b.shape[1]:
        return "bias_a"
    raise _shape_error(op, a, b)


def add(a, b) -> Tensor:
    """Elementwise sum; also matrix + row vector and tensor + scalar."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError("add needs at least one tensor operand")
    if not isinstance(b, Tensor):
        return record(a.data + float(b), (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return record(float(a) + b.data, (b,), lambda g: (g,))
    mode = _binary_shapes("add", a, b, allow_bias=True)

    def back(g):
        if mode == "bias_b":
            return g, g.sum(axis=0)
        if mode == "bias_a":
            return g.sum(axis=0), g
        return g, g

    return record(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError("sub needs at least one tensor operand")
    if not isinstance(b, Tensor):
        return record(a.data - float(b), (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return record(float(a) - b.data, (b,), lambda g: (-g,))
    mode = _binary_shapes("sub", a, b, allow_bias=True)

    def back(g):
        if mode == "bias_b":
            return g, -g.sum(axis=0)
        if mode == "bias_a":
            return g.sum(axis=0), -g
        return g, -g

    return record(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shape tensors, or tensor times scalar."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError("mul needs at least one tensor operand")
    if not isinstance(b, Tensor):
        a, b = b, a
    if not isinstance(a, Tensor):
        s = float(a)
        return record(b.data * s, (b,), lambda g: (g * s,))
    _binary_shapes("mul", a, b, allow_bias=False)
    ad, bd = a.data, b.data

    def back(g):
        return (g * bd if a.requires_grad else None,
                g * ad if b.requires_grad else None)

    return record(ad * bd, (a, b), back)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; leading dimensions must agree."""
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise _shape_error("concat", tensors[0], t)
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return record(np.concatenate([t.data for t in tensors], axis=-1), tensors, back)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack matrices vertically; column counts must agree."""
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat_rows of an empty sequence")
    for t in tensors:
        if t.ndim != 2 or t.shape[1] != tensors[0].shape[1]:
            raise _shape_error("concat_rows", tensors[0], t)
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return record(np.concatenate([t.data for t in tensors], axis=0), tensors, back)


def gather_rows(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]``; repeated indices accumulate gradient."""
    idx = np.asarray(index, dtype=np.intp)
    if table.ndim != 2 or idx.ndim != 1 or idx.size == 0:
        raise ShapeError(f"gather_rows needs a matrix and a nonempty index vector, "
                         f"got {table.shape} and {idx.shape}")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ContractError(f"gather_rows index out of range for {table.shape[0]} rows")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return record(table.data[idx], (table,), back)


def _softmax_back(y):
    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return back


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax_rows needs rank 1 or 2, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return record(y, (x,), _softmax_back(y))


def masked_softmax_rows(x: Tensor, mask) -> Tensor:
    """Softmax of each row over the positions where ``mask`` is true.

    Masked-out entries are exactly zero.  Every row needs at least one
    allowed position.
    """
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 2 or mask.shape != x.shape:
        raise ShapeError(f"masked_softmax_rows: scores {x.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        empty = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise ContractError(f"row {empty} has an empty mask")
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=1, keepdims=True)
    return record(y, (x,), _softmax_back(y))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x for x > 0, slope*x otherwise; the derivative at 0 is ``slope``."""
    if not 0.0 <= slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in [0, 1), got {slope}")
    pos = x.data > 0
    y = np.where(pos, x.data, slope * x.data)
    return record(y, (x,), lambda g: (np.where(pos, g, slope * g),))


def activate(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ContractError(f"unknown activation {kind!r}")


def log(x: Tensor, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` set, inputs below it are clamped first.

    Clamped entries get zero gradient.
    """
    xd = x.data
    if floor is None:
        if (xd <= 0).any():
            raise ContractError("log of a non-positive entry")
        return record(np.log(xd), (x,), lambda g: (g / xd,))
    keep = xd >= floor
    safe = np.where(keep, xd, floor)
    return record(np.log(safe), (x,), lambda g: (np.where(keep, g / safe, 0.0),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return record(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def grad_check(f, point, eps: float = 1e-5) -> float:
    """Largest relative error between tape gradients and central differences.

    ``point`` is a tensor or a sequence of tensors; ``f(*points)`` must
    return a scalar tensor.  The error of a coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 0.0 < eps <= 1e-3:
        raise ContractError(f"eps must lie in (0, 1e-3], got {eps}")
    points = [point] if isinstance(point, Tensor) else list(point)
    saved = [(p.requires_grad, p.grad) for p in points]
    try:
        for p in points:
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            p.requires_grad = True
            p.grad = None
        with Tape() as tape:
            out = f(*points)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        tape.backward(out)
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in points]

        def value():
            return float(np.asarray(f(*points).data).reshape(()))

        worst = 0.0
        for p, ga in zip(points, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                up = value()
                flat[k] = orig - eps
                down = value()
                flat[k] = orig
                numeric = (up - down) / (2.0 * eps)
                worst = max(worst, abs(gflat[k] - numeric) / max(1.0, abs(numeric)))
        return worst
    finally:
        for p, (rg, g) in zip(points, saved):
            p.requires_grad, p.grad = rg, g
