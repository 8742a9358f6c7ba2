"""Minimal dense-tensor autodiff: the operations the RUL model needs,
recorded on a define-by-run tape and differentiated in reverse.

Tensors wrap a numpy array (float32 by default, float64 for verification
work).  While a :class:`Tape` is active, every operation whose inputs
require gradients appends a node; ``Tape.backward`` replays the node list
in reverse, which is a valid topological order by construction.

Matrix products have two kernels.  The default delegates to BLAS.  The
"exact" kernel accumulates over the contraction index sequentially, in
index order, so its output is bit-identical to a scalar triple loop at the
same precision; enable it with :func:`exact_arithmetic` when comparing
against brute-force oracles.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericInputError, TapeError

DEFAULT_DTYPE = np.float32

_ACTIVE_TAPE: "Tape | None" = None
_EXACT_MATMUL = False


@contextlib.contextmanager
def exact_arithmetic():
    """Route matmul through the sequential, index-ordered kernel."""
    global _EXACT_MATMUL
    prev = _EXACT_MATMUL
    _EXACT_MATMUL = True
    try:
        yield
    finally:
        _EXACT_MATMUL = prev


class Tensor:
    """Dense numeric array plus an optional gradient buffer.

    ``data`` is always a C-contiguous-compatible ndarray; ``grad`` is either
    None or an ndarray of the same shape.  A tensor created by a recorded
    operation remembers the tape that produced it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
            arr = data  # hot path: ops hand in ready float arrays
        else:
            if isinstance(data, Tensor):
                raise ContractError("wrap raw array data, not another Tensor")
            arr = np.asarray(data)
            if dtype is not None:
                arr = arr.astype(dtype, copy=False)
            elif arr.dtype.kind != "f":
                arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: "Tape | None" = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the value buffer."""
        return self.data.reshape(-1)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        req = " grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{req}{tag})"

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Propagate d(self)=1 through the tape that recorded this tensor."""
        if self._tape is None:
            raise TapeError("tensor is not attached to a tape (detached loss)")
        self._tape.backward(self)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def transpose(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


class _Node:
    """One recorded operation: its outputs plus the gradient rule.

    ``backward`` receives one upstream gradient per output (None when an
    output never reached the loss) and returns (input, contribution)
    pairs.
    """

    __slots__ = ("outs", "backward")

    def __init__(
        self,
        outs: tuple[Tensor, ...],
        backward: Callable[[tuple["np.ndarray | None", ...]], list[tuple[Tensor, np.ndarray]]],
    ):
        self.outs = outs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Execution order is a topological order, so reverse iteration visits
    every consumer of a tensor before its producer.  Gradients propagate
    through per-call scratch buffers and are then added into each
    requiring tensor's persistent ``grad``, so calling backward twice
    accumulates additively.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, backward) -> None:
        out.requires_grad = True
        out._tape = self
        self._nodes.append(_Node((out,), lambda gs: backward(gs[0])))

    def _record_multi(self, outs: Sequence[Tensor], backward) -> None:
        for out in outs:
            out.requires_grad = True
            out._tape = self
        self._nodes.append(_Node(tuple(outs), backward))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")

        # Scratch gradients keyed by tensor identity.  Scratch buffers are
        # only mutated in place while exclusively owned, so contributions
        # may be views; flushing into .grad uses out-of-place adds, which
        # keeps repeated backward calls correct even when buffers alias.
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owned: dict[int, bool] = {id(loss): True}
        holders: dict[int, Tensor] = {id(loss): loss}

        def _flush(tensor: Tensor, g: np.ndarray) -> None:
            if tensor.requires_grad:
                tensor.grad = g if tensor.grad is None else tensor.grad + g

        for node in reversed(self._nodes):
            upstream = []
            any_grad = False
            for out in node.outs:
                g = grads.pop(id(out), None)
                owned.pop(id(out), None)
                upstream.append(g)
                if g is not None:
                    any_grad = True
                    _flush(out, g)
                    holders.pop(id(out), None)
            if not any_grad:
                continue
            for tensor, contrib in node.backward(tuple(upstream)):
                tkey = id(tensor)
                if tkey in grads:
                    if owned[tkey]:
                        grads[tkey] += contrib
                    else:
                        grads[tkey] = grads[tkey] + contrib
                        owned[tkey] = True
                else:
                    grads[tkey] = contrib
                    owned[tkey] = False
                    holders[tkey] = tensor

        # Whatever remains was produced outside this tape: the leaves.
        for tkey, g in grads.items():
            _flush(holders[tkey], g)


def _tape_for(*tensors: Tensor) -> "Tape | None":
    if _ACTIVE_TAPE is None:
        return None
    if any(t.requires_grad for t in tensors):
        return _ACTIVE_TAPE
    return None


# ---------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------

def _matmul_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulate over the contraction index in order; bit-identical to the
    # scalar triple loop at the same dtype.
    out_shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    out = np.zeros(out_shape, dtype=a.dtype)
    for k in range(a.shape[-1]):
        out += a[..., :, k : k + 1] * b[..., k : k + 1, :]
    return out


def _matmul_data(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _EXACT_MATMUL:
        return _matmul_exact(a, b)
    return np.matmul(a, b)


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supports (m,k)@(k,n), stacked (B,m,k)@(k,n) and (B,m,k)@(B,k,n).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.ndim > 3 or b.ndim > 3 or (a.ndim == 2 and b.ndim == 3):
        raise DimensionError(f"unsupported matmul ranks: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch dimensions differ: {a.shape} @ {b.shape}")
    _check_dtypes(a, b)

    out = Tensor(_matmul_data(a.data, b.data))
    tape = _tape_for(a, b)
    if tape is not None:

        def backward(g: np.ndarray):
            contribs = []
            if a.requires_grad:
                contribs.append((a, _matmul_data(g, _swap_last(b.data))))
            if b.requires_grad:
                if a.ndim == 3 and b.ndim == 2:
                    # Collapse the batch: dB = sum_i A_i^T g_i.
                    k = a.shape[-1]
                    n = g.shape[-1]
                    contribs.append(
                        (b, _matmul_data(a.data.reshape(-1, k).T, np.ascontiguousarray(g).reshape(-1, n)))
                    )
                else:
                    contribs.append((b, _matmul_data(_swap_last(a.data), g)))
            return contribs

        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------

def _check_dtypes(*tensors: Tensor) -> None:
    first = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != first:
            raise ContractError(
                f"mixed tensor dtypes: {sorted({str(x.data.dtype) for x in tensors})}"
            )


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shape_check(a: Tensor, b: Tensor, op: str) -> None:
    # Same shape, or a trailing-dims broadcast (bias add style).
    if a.shape == b.shape:
        return
    try:
        bshape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        bshape = None
    if bshape is None or (bshape != a.shape and bshape != b.shape):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check(a, b, "add")
    _check_dtypes(a, b)
    out = Tensor(a.data + b.data)
    tape = _tape_for(a, b)
    if tape is not None:

        def backward(g: np.ndarray):
            contribs = []
            if a.requires_grad:
                contribs.append((a, _sum_to_shape(g, a.shape)))
            if b.requires_grad:
                contribs.append((b, _sum_to_shape(g, b.shape)))
            return contribs

        tape._record(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check(a, b, "sub")
    _check_dtypes(a, b)
    out = Tensor(a.data - b.data)
    tape = _tape_for(a, b)
    if tape is not None:

        def backward(g: np.ndarray):
            contribs = []
            if a.requires_grad:
                contribs.append((a, _sum_to_shape(g, a.shape)))
            if b.requires_grad:
                contribs.append((b, _sum_to_shape(-g, b.shape)))
            return contribs

        tape._record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _binary_shape_check(a, b, "mul")
    _check_dtypes(a, b)
    out = Tensor(a.data * b.data)
    tape = _tape_for(a, b)
    if tape is not None:

        def backward(g: np.ndarray):
            contribs = []
            if a.requires_grad:
                contribs.append((a, _sum_to_shape(g * b.data, a.shape)))
            if b.requires_grad:
                contribs.append((b, _sum_to_shape(g * a.data, b.shape)))
            return contribs

        tape._record(out, backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant."""
    c = a.data.dtype.type(c)
    out = Tensor(a.data * c)
    tape = _tape_for(a)
    if tape is not None:
        tape._record(out, lambda g: [(a, g * c)])
    return out


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y.astype(a.data.dtype, copy=False))
    tape = _tape_for(a)
    if tape is not None:
        tape._record(out, lambda g: [(a, g * (out.data * (1.0 - out.data)))])
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    tape = _tape_for(a)
    if tape is not None:
        tape._record(out, lambda g: [(a, g * (1.0 - out.data * out.data))])
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    tape = _tape_for(a)
    if tape is not None:
        # Subgradient at exactly 0 is taken as 0.
        mask = a.data > 0
        tape._record(out, lambda g: [(a, g * mask)])
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    """Shift-stabilised softmax along one axis; slices sum to 1."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {a.shape}")
    if not np.isfinite(a.data).all():
        raise NumericInputError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y.astype(a.data.dtype, copy=False))
    tape = _tape_for(a)
    if tape is not None:

        def backward(g: np.ndarray):
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            return [(a, (g - dot) * out.data)]

        tape._record(out, backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; other dimensions must agree."""
    if not tensors:
        raise ContractError("concat of zero tensors")
    _check_dtypes(*tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % t.ndim
        ):
            raise DimensionError(f"concat shapes differ off-axis: {[t.shape for t in tensors]}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tape = _tape_for(*tensors)
    if tape is not None:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g: np.ndarray):
            parts = np.split(g, splits, axis=axis)
            return [(t, p) for t, p in zip(tensors, parts) if t.requires_grad]

        tape._record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got shape {a.shape}")
    out = Tensor(_swap_last(a.data))
    tape = _tape_for(a)
    if tape is not None:
        tape._record(out, lambda g: [(a, _swap_last(g))])
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    out = Tensor(a.data.reshape(shape))
    tape = _tape_for(a)
    if tape is not None:
        tape._record(out, lambda g: [(a, g.reshape(a.shape))])
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of shape {a.shape}"
        )
    index = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(a.ndim)
    )
    out = Tensor(a.data[index])
    tape = _tape_for(a)
    if tape is not None:

        def backward(g: np.ndarray):
            full = np.zeros_like(a.data)
            full[index] = g
            return [(a, full)]

        tape._record(out, backward)
    return out


def split(a: Tensor, axis: int, sizes: Sequence[int]) -> list[Tensor]:
    """Partition ``a`` along ``axis`` into consecutive blocks of ``sizes``.

    One recorded node for all outputs, so the backward pass rebuilds the
    input gradient with a single concatenate instead of zero-padding each
    piece.
    """
    axis = axis % a.ndim
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} != axis {axis} of shape {a.shape}")
    outs = []
    start = 0
    bounds = []
    for size in sizes:
        index = tuple(
            slice(start, start + size) if i == axis else slice(None) for i in range(a.ndim)
        )
        outs.append(Tensor(a.data[index]))
        bounds.append((start, size))
        start += size
    tape = _tape_for(a)
    if tape is not None:

        def backward(gs):
            parts = []
            for g, (off, size), out in zip(gs, bounds, outs):
                parts.append(g if g is not None else np.zeros_like(out.data))
            return [(a, np.concatenate(parts, axis=axis))]

        tape._record_multi(outs, backward)
    return outs


def unstack(a: Tensor, axis: int) -> list[Tensor]:
    """Split ``a`` into its slices along ``axis``, dropping that axis.

    Like :func:`split` with unit sizes, but each output loses the axis;
    a single node serves every slice.
    """
    axis = axis % a.ndim
    moved = np.moveaxis(a.data, axis, 0)
    outs = [Tensor(moved[i]) for i in range(a.shape[axis])]
    tape = _tape_for(a)
    if tape is not None:

        def backward(gs):
            parts = [
                g if g is not None else np.zeros_like(outs[i].data) for i, g in enumerate(gs)
            ]
            return [(a, np.moveaxis(np.stack(parts, axis=0), 0, axis))]

        tape._record_multi(outs, backward)
    return outs


def mean(a: Tensor) -> Tensor:
    """Mean over all elements; returns a scalar tensor."""
    out = Tensor(np.asarray(a.data.mean(), dtype=a.data.dtype))
    tape = _tape_for(a)
    if tape is not None:
        inv = 1.0 / a.size

        def backward(g: np.ndarray):
            return [(a, np.full(a.shape, g * inv, dtype=a.data.dtype))]

        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------

def numeric_gradient(
    f: Callable[[], float], param: Tensor, eps: float = 1e-5
) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one tensor.

    ``f`` must re-evaluate the quantity of interest from current tensor
    contents.  Purely forward evaluations; independent of the tape.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros(param.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(param.shape)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
) -> float:
    """Compare tape gradients of ``loss_fn`` against central differences.

    Returns the worst relative error (denominator max(|a|, |b|, 1e-8));
    raises AssertionError when it exceeds ``rtol``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape, dtype=np.float64) if p.grad is None else p.grad.astype(np.float64)
        numeric = numeric_gradient(lambda: loss_fn().item(), p, eps=eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
        if rel.max() > rtol:
            idx = np.unravel_index(int(rel.argmax()), rel.shape)
            raise AssertionError(
                f"gradient mismatch for {p.name or 'tensor'}{list(idx)}: "
                f"analytic={analytic[idx]:.8g} numeric={numeric[idx]:.8g} rel={rel.max():.3g}"
            )
    return worst
