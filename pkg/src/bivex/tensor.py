"""Dense tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small. A :class:`Tensor` wraps a numpy array;
every differentiable operation appends one backward closure to the active
:class:`Tape`. ``Tape.backward`` replays the closures in exact reverse
execution order, accumulating partials additively into ``Tensor.grad``.

All forward math is plain numpy; the heavy kernels (conv2d, maxpool2d) are
expressed as im2col reshapes feeding BLAS matmuls so they stay fast on CPU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bivex import _kernels as K

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes cannot be combined by the requested operation."""


class TapeReuseError(RuntimeError):
    """A tape that already ran backward was asked to run it again."""


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-dimensional array of reals, row-major, optionally graded.

    ``data`` is treated as immutable while it participates in a live tape;
    the optimizer mutates parameter data only between forward/backward
    passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_grad_shared")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._grad_shared = False

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_shared = False

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; backward replays it in reverse.

    Use as a context manager::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)

    A tape is single-owner: it must not be shared across concurrent
    contexts. Gradient accumulation is additive, so a tensor consumed by
    k ops receives the sum of the k partials.
    """

    __slots__ = ("_nodes", "_consumed")

    def __init__(self):
        self._nodes: list = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def record(self, backward_fn) -> None:
        self._nodes.append(backward_fn)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, output: Tensor, seed=None) -> None:
        if self._consumed:
            raise TapeReuseError("tape already ran backward")
        if not output.requires_grad:
            raise ValueError("output does not require grad; nothing to backpropagate")
        if seed is None:
            if output.size != 1:
                raise DimensionError(
                    f"backward needs an explicit seed for non-scalar output of shape {output.shape}"
                )
            seed = np.ones_like(output.data)
        else:
            seed = np.asarray(seed, dtype=output.data.dtype)
            if seed.shape != output.shape:
                raise DimensionError(f"seed shape {seed.shape} != output shape {output.shape}")
            seed = seed.copy()
        _accum(output, seed)
        for fn in reversed(self._nodes):
            fn()
        self._consumed = True


def _accum(t: Tensor, partial: np.ndarray, shared: bool = False) -> None:
    """Add a partial derivative into ``t.grad``.

    ``shared=True`` marks partials that alias memory also handed to another
    tensor (or a live view); the first further accumulation then reallocates
    instead of mutating in place.
    """
    if not t.requires_grad:
        return
    if not partial.flags.writeable:
        partial = partial.copy()
        shared = False
    if t.grad is None:
        t.grad = partial
        t._grad_shared = shared
    elif t._grad_shared:
        t.grad = t.grad + partial
        t._grad_shared = False
    else:
        t.grad += partial


def _record(out: Tensor, backward_fn) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, requires_grad=_requires(a, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            pa = _unbroadcast(g, a.shape)
            _accum(a, pa, shared=pa is g)
        if b.requires_grad:
            pb = _unbroadcast(g, b.shape)
            _accum(b, pb, shared=pb is g)

    _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, requires_grad=_requires(a, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            pa = _unbroadcast(g, a.shape)
            _accum(a, pa, shared=pa is g)
        if b.requires_grad:
            _accum(b, -_unbroadcast(g, b.shape))

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, requires_grad=_requires(a, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    _record(out, bwd)
    return out


def add_scalar(a: Tensor, c) -> Tensor:
    out = Tensor(a.data + float(c), requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(a, g, shared=True)

    _record(out, bwd)
    return out


def scale(a: Tensor, c) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad * c)

    _record(out, bwd)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad.reshape(a.shape), shared=True)

    _record(out, bwd)
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad.transpose(inv), shared=True)

    _record(out, bwd)
    return out


def slice_last(a: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous slice along the last axis (used to split LSTM gates)."""
    out = Tensor(a.data[..., lo:hi], requires_grad=a.requires_grad)

    def bwd():
        if out.grad is None:
            return
        buf = np.zeros_like(a.data)
        buf[..., lo:hi] = out.grad
        _accum(a, buf)

    _record(out, bwd)
    return out


def take_rows(w: Tensor, indices) -> Tensor:
    """Row gather ``w[indices]`` — the matrix × one-hot product."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= w.shape[0]):
        raise IndexError(f"row index out of range for {w.shape[0]} rows")
    out = Tensor(w.data[idx], requires_grad=w.requires_grad)

    def bwd():
        if out.grad is None:
            return
        buf = np.zeros_like(w.data)
        np.add.at(buf, idx, out.grad)
        _accum(w, buf)

    _record(out, bwd)
    return out


def where_mask(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise selection by a constant boolean mask (not differentiable
    in the mask). Selection, not blending: the unselected branch's values
    never enter the output."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data), requires_grad=_requires(a, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(mask, 0.0, g), b.shape))

    _record(out, bwd)
    return out


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    _record(out, bwd)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.shape))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad * (a.data > 0))

    _record(out, bwd)
    return out


def _sigmoid_stable(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) <= 1, so neither branch can overflow
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_stable(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad * (y * (1.0 - y)))

    _record(out, bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bwd():
        if out.grad is not None:
            _accum(a, out.grad * (1.0 - y * y))

    _record(out, bwd)
    return out


def additive_score(proj: Tensor, q: Tensor, v: Tensor) -> Tensor:
    """Fused additive-attention energies: v . tanh(proj + q) per grid cell.

    ``proj`` is (B,N,A), ``q`` is (B,A) broadcast over cells, ``v`` is (A,).
    Returns (B,N). One op instead of the add/tanh/matmul chain.
    """
    if proj.ndim != 3 or q.ndim != 2 or v.ndim != 1:
        raise DimensionError(f"additive_score shapes: {proj.shape}, {q.shape}, {v.shape}")
    b, n, a = proj.shape
    if q.shape != (b, a) or v.shape != (a,):
        raise DimensionError(f"additive_score shapes: {proj.shape}, {q.shape}, {v.shape}")
    t = np.tanh(proj.data + q.data[:, None, :])
    e = (t.reshape(b * n, a) @ v.data).reshape(b, n)
    out = Tensor(e, requires_grad=_requires(proj, q, v))

    def bwd():
        g = out.grad
        if g is None:
            return
        d = (1.0 - t * t) * (g[:, :, None] * v.data)
        if proj.requires_grad:
            _accum(proj, d)
        if q.requires_grad:
            _accum(q, d.sum(axis=1))
        if v.requires_grad:
            _accum(v, t.reshape(b * n, a).T @ g.reshape(b * n))

    _record(out, bwd)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands give the classic product; equal-rank
    stacked operands (e.g. B×m×k @ B×k×n) multiply batchwise."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.ndim != b.ndim:
        raise DimensionError(f"matmul rank mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_requires(a, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            _accum(b, a.data.swapaxes(-1, -2) @ g)

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise DimensionError(f"expected scalar or pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _filters_fwd_mat(f: np.ndarray) -> np.ndarray:
    """(Co,Ci,kh,kw) -> (kh*kw*Ci, Co), matching the im2col column order."""
    return f.transpose(2, 3, 1, 0).reshape(-1, f.shape[0])


def _raw_corr_nhwc(x: np.ndarray, fmat: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int):
    cols = K.im2col_pad(np.ascontiguousarray(x), kh, kw, sh, sw, ph, pw)
    ho = (x.shape[1] + 2 * ph - kh) // sh + 1
    wo = (x.shape[2] + 2 * pw - kw) // sw + 1
    out = cols @ fmat
    return out.reshape(x.shape[0], ho, wo, fmat.shape[1])


def _col2im_nhwc(dcols: np.ndarray, padded_shape, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Scatter-add im2col gradients back onto the padded (B,Hp,Wp,C) input."""
    bsz, hp, wp, c = padded_shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    bi = np.arange(bsz).reshape(bsz, 1, 1, 1, 1, 1)
    ii = np.arange(ho).reshape(1, ho, 1, 1, 1, 1) * sh
    jj = np.arange(wo).reshape(1, 1, wo, 1, 1, 1) * sw
    uu = np.arange(kh).reshape(1, 1, 1, kh, 1, 1)
    vv = np.arange(kw).reshape(1, 1, 1, 1, kw, 1)
    cc = np.arange(c).reshape(1, 1, 1, 1, 1, c)
    flat = (((bi * hp + (ii + uu)) * wp + (jj + vv)) * c + cc).ravel()
    acc = np.bincount(flat, weights=dcols.astype(np.float64, copy=False).ravel(), minlength=bsz * hp * wp * c)
    return acc.reshape(bsz, hp, wp, c).astype(dcols.dtype, copy=False)


def conv2d_nhwc(x: Tensor, filters: Tensor, stride=1, padding=0) -> Tensor:
    """Channels-last convolution core: (B,H,W,C_in) -> (B,H',W',C_out).

    ``filters`` stay in (C_out,C_in,kh,kw) order. Same contract as
    :func:`conv2d`, which is a layout wrapper around this op.
    """
    if x.ndim != 4 or filters.ndim != 4:
        raise DimensionError(f"conv2d_nhwc needs (B,H,W,C) and (Co,Ci,kh,kw), got {x.shape}, {filters.shape}")
    bsz, h, w, ci = x.shape
    co, fci, kh, kw = filters.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if fci != ci:
        raise DimensionError(f"conv2d channel mismatch: input {ci} vs filters {fci}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
        raise DimensionError(
            f"non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, stride {sh}x{sw}, pad {ph}x{pw}"
        )

    fmat = _filters_fwd_mat(filters.data)
    cols = K.im2col_pad(np.ascontiguousarray(x.data), kh, kw, sh, sw, ph, pw)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    y = (cols @ fmat).reshape(bsz, ho, wo, co)
    out = Tensor(y, requires_grad=_requires(x, filters))

    def bwd():
        g = out.grad
        if g is None:
            return
        gmat = g.reshape(bsz * ho * wo, co)
        if filters.requires_grad:
            dw = (cols.T @ gmat).reshape(kh, kw, ci, co).transpose(3, 2, 0, 1)
            _accum(filters, dw)
        if x.requires_grad:
            if sh == 1 and sw == 1 and ph <= kh - 1 and pw <= kw - 1:
                # full correlation with the rotated, channel-swapped filters
                fr = filters.data.transpose(2, 3, 0, 1)[::-1, ::-1].reshape(-1, ci)
                dx = _raw_corr_nhwc(g, np.ascontiguousarray(fr), kh, kw, 1, 1, kh - 1 - ph, kw - 1 - pw)
            else:
                dcols = gmat @ fmat.T
                padded = (bsz, h + 2 * ph, w + 2 * pw, ci)
                dx = _col2im_nhwc(dcols, padded, kh, kw, sh, sw)[:, ph : ph + h, pw : pw + w]
            _accum(x, dx)

    _record(out, bwd)
    return out


def bias_relu(x: Tensor, b: Tensor) -> Tensor:
    """Fused channel bias + rectifier: one memory pass instead of two."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"bias shape {b.shape} does not match channels {x.shape[-1]}")
    c = b.shape[0]
    x2 = np.ascontiguousarray(x.data).reshape(-1, c)
    y2 = K.bias_relu_fwd(x2, b.data)
    out = Tensor(y2.reshape(x.shape), requires_grad=_requires(x, b))

    def bwd():
        g = out.grad
        if g is None:
            return
        dx2, db = K.bias_relu_bwd(np.ascontiguousarray(g).reshape(-1, c), y2)
        if x.requires_grad:
            _accum(x, dx2.reshape(x.shape))
        if b.requires_grad:
            _accum(b, db)

    _record(out, bwd)
    return out


def conv2d(x: Tensor, filters: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation with zero padding.

    ``x`` may be (C,H,W) or batched (B,C,H,W); ``filters`` is
    (C_out,C_in,kh,kw). Output extents must be integral: a stride that does
    not evenly tile the padded input is a dimension error, not a floor.
    """
    single = x.ndim == 3
    x4 = reshape(x, (1,) + tuple(x.shape)) if single else x
    if x4.ndim != 4:
        raise DimensionError(f"conv2d needs (C,H,W) or (B,C,H,W), got {x.shape}")
    y = conv2d_nhwc(transpose(x4, (0, 2, 3, 1)), filters, stride=stride, padding=padding)
    out = transpose(y, (0, 3, 1, 2))
    return reshape(out, tuple(out.shape[1:])) if single else out


def _maxpool_fast(x: Tensor, kh: int, kw: int) -> Tensor:
    """Non-overlapping pooling on (B,H,W,C), single fused pass each way.

    Backward re-finds each window's maximum in row-major order, so ties
    route to the first occurrence."""
    xd = np.ascontiguousarray(x.data)
    y = K.maxpool_fwd(xd, kh, kw)
    out = Tensor(y, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accum(x, K.maxpool_bwd(xd, y, np.ascontiguousarray(g), kh, kw))

    _record(out, bwd)
    return out


def maxpool2d_nhwc(x: Tensor, kh: int, kw: int, stride=None) -> Tensor:
    """Channels-last max pooling core; see :func:`maxpool2d`."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d_nhwc needs (B,H,W,C), got {x.shape}")
    sh, sw = _pair(stride) if stride is not None else (kh, kw)
    bsz, h, w, c = x.shape
    if kh > h or kw > w:
        raise DimensionError(f"pool window {kh}x{kw} larger than input {h}x{w}")
    if sh == kh and sw == kw:
        return _maxpool_fast(x, kh, kw)

    v = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    ho, wo = v.shape[1], v.shape[2]
    win = v.reshape(bsz, ho, wo, c, kh * kw)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = Tensor(y, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        rows = (np.arange(ho) * sh).reshape(1, ho, 1, 1) + idx // kw
        colp = (np.arange(wo) * sw).reshape(1, 1, wo, 1) + idx % kw
        bi = np.arange(bsz).reshape(bsz, 1, 1, 1)
        cc = np.arange(c).reshape(1, 1, 1, c)
        flat = ((bi * h + rows) * w + colp) * c + cc
        dx = np.zeros(bsz * h * w * c, dtype=x.dtype)
        if sh >= kh and sw >= kw:
            dx[flat.ravel()] = g.ravel()  # windows disjoint: indices unique
        else:
            np.add.at(dx, flat.ravel(), g.ravel())
        _accum(x, dx.reshape(bsz, h, w, c))

    _record(out, bwd)
    return out


def maxpool2d(x: Tensor, kh: int, kw: int, stride=None) -> Tensor:
    """Windowed maximum with floor-division output extents.

    Backward routes each window's gradient only to its argmax position
    (first in row-major window order on ties). Accepts (C,H,W) or (B,C,H,W).
    """
    single = x.ndim == 3
    x4 = reshape(x, (1,) + tuple(x.shape)) if single else x
    if x4.ndim != 4:
        raise DimensionError(f"maxpool2d needs (C,H,W) or (B,C,H,W), got {x.shape}")
    y = maxpool2d_nhwc(transpose(x4, (0, 2, 3, 1)), kh, kw, stride=stride)
    out = transpose(y, (0, 3, 1, 2))
    return reshape(out, tuple(out.shape[1:])) if single else out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted-mean negative log-likelihood over rows of ``logits``.

    ``targets`` holds one class index per row; ``weights`` (optional)
    re-weights rows, e.g. zeroing padded timesteps. The default is the
    plain mean over rows.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (T,V) logits, got {logits.shape}")
    t = np.asarray(targets)
    rows, v = logits.shape
    if t.shape != (rows,):
        raise DimensionError(f"targets shape {t.shape} != ({rows},)")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise IndexError(f"target index out of range for {v} classes")
    if weights is None:
        w = np.ones(rows, dtype=logits.data.dtype)
    else:
        w = np.asarray(weights, dtype=logits.data.dtype)
        if w.shape != (rows,):
            raise DimensionError(f"weights shape {w.shape} != ({rows},)")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("cross_entropy weights sum to zero")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    se = e.sum(axis=1)
    logp = z[np.arange(rows), t] - np.log(se)
    loss = -(w * logp).sum() / wsum
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype), requires_grad=logits.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        sm = e / se[:, None]
        sm[np.arange(rows), t] -= 1.0
        sm *= (w / wsum)[:, None]
        _accum(logits, sm * g)

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    """Fused-gate LSTM cell parameters, gate order (input, forget, cell, output).

    ``w_x``: (4*d_h, d_in), ``w_h``: (4*d_h, d_h), ``b``: (4*d_h,).
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def d_h(self) -> int:
        return self.w_h.shape[1]

    @property
    def d_in(self) -> int:
        return self.w_x.shape[1]


def lstm_pointwise(pre: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Fused gate nonlinearities: (B,4n) preactivations + previous cell ->
    (new hidden, new cell). Gate order (input, forget, cell, output)."""
    h_d, c_d, i, f, g, o, tc = K.lstm_point_fwd(np.ascontiguousarray(pre.data), np.ascontiguousarray(c_prev.data))
    req = _requires(pre, c_prev)
    h_out = Tensor(h_d, requires_grad=req)
    c_out = Tensor(c_d, requires_grad=req)

    def bwd():
        dh = h_out.grad
        dc = c_out.grad
        if dh is None and dc is None:
            return
        if dh is None:
            dh = np.zeros_like(h_d)
        if dc is None:
            dc = np.zeros_like(c_d)
        dpre, dc_prev = K.lstm_point_bwd(
            np.ascontiguousarray(dh), np.ascontiguousarray(dc), c_prev.data, i, f, g, o, tc
        )
        if pre.requires_grad:
            _accum(pre, dpre)
        if c_prev.requires_grad:
            _accum(c_prev, dc_prev)

    tape = _active_tape()
    if tape is not None and req:
        tape.record(bwd)
    return h_out, c_out


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], params: LstmParams):
    """One LSTM cell step; returns ``(y, (h', c'))`` with ``y`` the new hidden.

    ``x`` may be a vector (d_in,) or a batch (B,d_in); the state follows suit.
    """
    h, c = state
    single = x.ndim == 1
    x2 = reshape(x, (1, -1)) if single else x
    h2 = reshape(h, (1, -1)) if single else h
    c2 = reshape(c, (1, -1)) if single else c
    if x2.shape[1] != params.d_in or h2.shape[1] != params.d_h:
        raise DimensionError(
            f"lstm_step shapes: x {x.shape}, h {h.shape} vs params d_in={params.d_in}, d_h={params.d_h}"
        )
    pre = add(add(matmul(x2, transpose(params.w_x)), matmul(h2, transpose(params.w_h))), params.b)
    h_new, c_new = lstm_pointwise(pre, c2)
    if single:
        h_new = reshape(h_new, (-1,))
        c_new = reshape(c_new, (-1,))
    return h_new, (h_new, c_new)
