"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed, float64 by default (float32 is available for
training runs). Gradients are recorded on an explicit tape: run the
forward pass inside a ``with Tape():`` block and call :func:`backward`
on the scalar loss. The tape is append-only, so creation order is the
topological order and backward visits nodes in reverse append order
exactly once. A tape belongs to one forward pass and one thread; it is
consumed by backward.

Evaluation without gradients is the same code path with no tape active:
operations then return plain untracked tensors.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateMaskError, DimensionError, GraphError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "relu",
    "tanh",
    "reshape",
    "gather_cols",
    "concat_cols",
    "sum_all",
    "row_softmax",
    "layer_normalize",
    "mlp_forward",
    "backward",
    "finite_diff_grad",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Additive score offset for masked keys. Large enough that exp underflows
# to exactly 0.0 after the row-max shift, finite so gradients stay clean.
MASK_SENTINEL = -1e30


class Tensor:
    """A dense array plus autodiff bookkeeping.

    ``node_id`` is the slot index on ``tape`` and is only meaningful
    together with it; leaves are re-registered on each new tape they
    participate in.
    """

    __slots__ = ("data", "requires_grad", "node_id", "tape", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Append-only record of one forward pass.

    Slots index both leaves (parameters, inputs) and op outputs. Leaves
    get a slot when first used, outputs when recorded.
    """

    def __init__(self):
        self.nodes: list[tuple[int, Callable]] = []
        self.n_slots = 0
        self.leaf_slots: dict[int, tuple[tuple[int, ...], np.dtype]] = {}
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise GraphError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def watch(self, t: Tensor) -> int:
        """Assign ``t`` a slot on this tape, registering it as a leaf if new."""
        if t.tape is self and t.node_id is not None:
            return t.node_id
        if not t.is_leaf and t.tape is not None:
            raise GraphError(
                "tensor was recorded on a different tape; rebuild the forward pass"
            )
        t.tape = self
        t.node_id = self._slot()
        self.leaf_slots[t.node_id] = (t.data.shape, t.data.dtype)
        return t.node_id

    def _slot(self) -> int:
        i = self.n_slots
        self.n_slots += 1
        return i

    def _record(self, out_data: np.ndarray, grad_fn: Callable) -> Tensor:
        if self.consumed:
            raise GraphError("tape already consumed by backward")
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.requires_grad = True
        out.tape = self
        out.node_id = self._slot()
        out.is_leaf = False
        self.nodes.append((out.node_id, grad_fn))
        return out


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap raw operands as constants, matching the tensor operand's dtype."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, _as_tensor(b, dtype=a.data.dtype)
    if isinstance(b, Tensor):
        return _as_tensor(a, dtype=b.data.dtype), b
    return _as_tensor(a), _as_tensor(b)


def _tape_for(*tensors: Tensor) -> "Tape | None":
    if not _TAPE_STACK:
        return None
    for t in tensors:
        if t.requires_grad:
            return _TAPE_STACK[-1]
    return None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    tape = _tape_for(a, b)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a) if a.requires_grad else None
    ib = tape.watch(b) if b.requires_grad else None
    sa, sb = a.data.shape, b.data.shape

    def grad_fn(g, acc):
        if ia is not None:
            acc(ia, _unbroadcast(g, sa))
        if ib is not None:
            acc(ib, _unbroadcast(g, sb))

    return tape._record(out, grad_fn)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    tape = _tape_for(a, b)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a) if a.requires_grad else None
    ib = tape.watch(b) if b.requires_grad else None
    sa, sb = a.data.shape, b.data.shape

    def grad_fn(g, acc):
        if ia is not None:
            acc(ia, _unbroadcast(g, sa))
        if ib is not None:
            acc(ib, _unbroadcast(-g, sb))

    return tape._record(out, grad_fn)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    tape = _tape_for(a, b)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a) if a.requires_grad else None
    ib = tape.watch(b) if b.requires_grad else None
    A, B = a.data, b.data

    def grad_fn(g, acc):
        if ia is not None:
            acc(ia, _unbroadcast(g * B, A.shape))
        if ib is not None:
            acc(ib, _unbroadcast(g * A, B.shape))

    return tape._record(out, grad_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = -a.data
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)

    def grad_fn(g, acc):
        acc(ia, -g)

    return tape._record(out, grad_fn)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects two 2-d operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}"
        )
    out = a.data @ b.data
    tape = _tape_for(a, b)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a) if a.requires_grad else None
    ib = tape.watch(b) if b.requires_grad else None
    A, B = a.data, b.data

    def grad_fn(g, acc):
        if ia is not None:
            acc(ia, g @ B.T)
        if ib is not None:
            acc(ib, A.T @ g)

    return tape._record(out, grad_fn)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d operand, got shape {a.data.shape}")
    out = a.data.T
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)

    def grad_fn(g, acc):
        acc(ia, g.T)

    return tape._record(out, grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)
    X = a.data

    def grad_fn(g, acc):
        acc(ia, g * (X > 0))

    return tape._record(out, grad_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)
    Y = out

    def grad_fn(g, acc):
        acc(ia, g - g * Y * Y)

    return tape._record(out, grad_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {a.data.shape} -> {shape}: {exc}") from None
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)
    orig = a.data.shape

    def grad_fn(g, acc):
        acc(ia, g.reshape(orig))

    return tape._record(out, grad_fn)


def gather_cols(a, idx) -> Tensor:
    """Select columns of a 2-d tensor by integer index (duplicates allowed)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise DimensionError(
            f"gather_cols expects a 2-d tensor and 1-d index, got {a.data.shape} and {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[1]):
        raise DimensionError(
            f"gather_cols: index out of range for {a.data.shape[1]} columns"
        )
    out = a.data[:, idx]
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)
    n_rows, n_cols = a.data.shape
    dt = a.data.dtype

    def grad_fn(g, acc):
        gx = np.zeros((n_rows, n_cols), dtype=dt)
        np.add.at(gx.T, idx, g.T)  # scatter-add handles duplicate indices
        acc(ia, gx)

    return tape._record(out, grad_fn)


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate 2-d tensors with equal row counts along columns."""
    ts = [_as_tensor(p) for p in parts]
    if not ts:
        raise DimensionError("concat_cols needs at least one part")
    rows = ts[0].data.shape[0]
    for t in ts:
        if t.data.ndim != 2 or t.data.shape[0] != rows:
            raise DimensionError(
                f"concat_cols: incompatible part shapes {[t.data.shape for t in ts]}"
            )
    out = np.concatenate([t.data for t in ts], axis=1)
    tape = _tape_for(*ts)
    if tape is None:
        return Tensor(out)
    slots = [tape.watch(t) if t.requires_grad else None for t in ts]
    widths = [t.data.shape[1] for t in ts]

    def grad_fn(g, acc):
        offset = 0
        for slot, w in zip(slots, widths):
            if slot is not None:
                acc(slot, g[:, offset : offset + w])
            offset += w

    return tape._record(out, grad_fn)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    tape = _tape_for(a)
    if tape is None:
        return Tensor(out)
    ia = tape.watch(a)
    shape = a.data.shape
    dt = a.data.dtype

    def grad_fn(g, acc):
        acc(ia, np.broadcast_to(np.asarray(g, dtype=dt), shape))

    return tape._record(out, grad_fn)


def row_softmax(scores, mask=None) -> Tensor:
    """Softmax over the last axis of a 2-d score matrix.

    ``mask`` flags keys to exclude (True = masked); masked columns get
    weight exactly 0. Raises :class:`DegenerateMaskError` when every key
    is masked.
    """
    s = _as_tensor(scores)
    if s.data.ndim != 2:
        raise DimensionError(f"row_softmax expects [rows x keys], got shape {s.data.shape}")
    z = s.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (z.shape[1],):
            raise DimensionError(
                f"row_softmax: mask shape {mask.shape} does not match key count {z.shape[1]}"
            )
        if mask.all():
            raise DegenerateMaskError("row_softmax: every key is masked")
        z = z + MASK_SENTINEL * mask
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    w = e / e.sum(axis=1, keepdims=True)
    tape = _tape_for(s)
    if tape is None:
        return Tensor(w)
    ia = tape.watch(s)
    W = w

    def grad_fn(g, acc):
        dot = (g * W).sum(axis=1, keepdims=True)
        acc(ia, W * (g - dot))

    return tape._record(w, grad_fn)


def layer_normalize(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance, then
    apply the optional per-feature affine (gain, bias)."""
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise DimensionError("layer_normalize needs at least one axis")
    d = x.data.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.data.shape != (d,):
            raise DimensionError(
                f"layer_normalize: {name} shape {p.data.shape} does not match width {d}"
            )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    tape = _tape_for(x, *(p for p in (gain, bias) if p is not None))
    if tape is None:
        return Tensor(out)
    ix = tape.watch(x) if x.requires_grad else None
    ig = tape.watch(gain) if gain is not None and gain.requires_grad else None
    ib = tape.watch(bias) if bias is not None and bias.requires_grad else None
    G = gain.data if gain is not None else None
    lead = tuple(range(x.data.ndim - 1))

    def grad_fn(g, acc):
        if ib is not None:
            acc(ib, g.sum(axis=lead) if lead else g)
        if ig is not None:
            gg = g * xhat
            acc(ig, gg.sum(axis=lead) if lead else gg)
        if ix is not None:
            ghat = g * G if G is not None else g
            m1 = ghat.mean(axis=-1, keepdims=True)
            m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
            acc(ix, inv * (ghat - m1 - xhat * m2))

    return tape._record(out, grad_fn)


def mlp_forward(x, layers: Iterable[tuple]) -> Tensor:
    """Apply a stack of (weight, bias, activation) layers.

    Activation is one of ``"relu"``, ``"tanh"`` or ``None`` (identity),
    applied after the affine map of its layer.
    """
    h = _as_tensor(x)
    for w, b, act in layers:
        h = add(matmul(h, w), b)
        if act == "relu":
            h = relu(h)
        elif act == "tanh":
            h = tanh(h)
        elif act is not None:
            raise DimensionError(f"mlp_forward: unknown activation {act!r}")
    return h


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Reverse-mode gradients of a scalar loss.

    Returns a table mapping each leaf slot id to its gradient tensor
    (zeros for leaves the loss does not depend on). Consumes the tape.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects the loss Tensor")
    tape = loss.tape
    if tape is None:
        raise GraphError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    if loss.data.shape != ():
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if tape.consumed:
        raise GraphError("tape already consumed by backward")
    tape.consumed = True

    grads: list = [None] * tape.n_slots

    def acc(slot: int, g: np.ndarray):
        cur = grads[slot]
        grads[slot] = g if cur is None else cur + g

    grads[loss.node_id] = np.ones((), dtype=loss.data.dtype)
    for out_id, grad_fn in reversed(tape.nodes):
        g = grads[out_id]
        if g is None:
            continue  # not on the loss path
        grad_fn(g, acc)
        grads[out_id] = None

    table: dict[int, Tensor] = {}
    for slot, (shape, dtype) in tape.leaf_slots.items():
        g = grads[slot]
        if g is None:
            g = np.zeros(shape, dtype=dtype)
        table[slot] = Tensor(np.ascontiguousarray(g), dtype=dtype)
    tape.nodes = []  # release saved activations
    return table


def finite_diff_grad(f: Callable[[Tensor], float], theta: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of ``f`` at ``theta``.

    ``f`` is re-evaluated with each coordinate perturbed in place by
    plus/minus ``h``; the original values are restored exactly. This is
    the independent oracle the reverse-mode gradients are checked
    against.
    """
    base = theta.data
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(theta))
        flat[i] = orig - h
        fm = float(f(theta))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad, dtype=base.dtype)
