"""Minimal reverse-mode automatic differentiation on dense numpy arrays.

Define-by-run: while a Tape is active (``with Tape() as tape:``), every
operation that touches a gradient-requiring tensor appends a record with a
backward closure; ``tape.backward(loss)`` replays the records in reverse and
accumulates gradients into ``Tensor.grad``. Without an active tape the same
functions run as plain forward math and their outputs never require grad.

Storage is dense row-major. Training runs in float32; ``precision("float64")``
switches newly created tensors to float64 for gradient verification.
Broadcasting is limited to scalar-with-tensor and per-channel bias patterns.
"""

from __future__ import annotations

import contextlib
import ctypes
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_TAPE_STACK: list["Tape"] = []


def _tune_allocator() -> None:
    """Keep large numpy temporaries on the reusable heap. glibc serves big
    allocations via mmap/munmap by default; with a tape keeping buffers
    alive, every training step then pays a page-fault storm."""
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 256 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_BLAS_LIMIT = None


def _tune_threads() -> None:
    """Pin BLAS to one thread: the models here run batches of small GEMMs,
    where thread synchronization costs more than it buys (measured ~1.6x)."""
    global _BLAS_LIMIT
    try:
        import threadpoolctl
        _BLAS_LIMIT = threadpoolctl.threadpool_limits(limits=1, user_api="blas")
    except Exception:
        pass


_tune_allocator()
_tune_threads()

_CONV_KERNELS = (1, 3, 4)
_CONV_STRIDES = (1, 2)
BN_EPS = 1e-5


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    """N-dimensional float array, optionally tracked on the active tape.

    ``data`` is owned by the tensor and treated as immutable after creation;
    the only sanctioned in-place mutations are optimizer updates on leaf
    parameters and gradient accumulation into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=_DEFAULT_DTYPE)
        if arr.size == 0:
            raise ShapeError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.tape_id: Optional[int] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.tape_id = None
        return t

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
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators delegate to the module-level primitives.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def abs(self):
        return abs_(self)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward", "node_id")

    def __init__(self, op, inputs, output, backward, node_id):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.node_id = node_id


class Tape:
    """Ordered record of operations; inputs of every node precede it."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.next_id = 0
        self._by_id: dict[int, _Node] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def clear(self) -> None:
        """Drop all records. Node ids keep counting, so tensors produced
        before the clear can no longer be differentiated on this tape."""
        self.nodes.clear()
        self._by_id.clear()

    def _append(self, node: _Node) -> None:
        self.nodes.append(node)
        self._by_id[node.node_id] = node

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

        Gradients accumulate additively, both across multiple uses inside the
        graph and across repeated backward calls.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None:
            if loss.requires_grad:
                _accumulate_into(loss, np.ones(loss.shape, dtype=loss.dtype))
            return
        if loss.tape_id not in self._by_id:
            raise ContractError("loss was not produced on this tape (already cleared?)")

        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            input_grads = node.backward(g)
            for inp, gi in zip(node.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise AssertionError(
                        f"backward of {node.op!r} produced shape {gi.shape} for input {inp.shape}"
                    )
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    holders[key] = inp
        for key, tensor in holders.items():
            if tensor.requires_grad:
                _accumulate_into(tensor, grads[key])


def _accumulate_into(tensor: Tensor, g: np.ndarray) -> None:
    # gradient buffers are never mutated in place, so sharing is safe
    if tensor.grad is None:
        tensor.grad = g if g.dtype == tensor.dtype else g.astype(tensor.dtype)
    else:
        tensor.grad = tensor.grad + g


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap ``out_data`` in a Tensor and register the backward rule on the
    active tape. Other modules use this hook to add their own primitives."""
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires_grad=tracked)
    if tracked:
        node = _Node(op, tuple(inputs), out, backward, tape.next_id)
        tape.next_id += 1
        out.tape_id = node.node_id
        tape._append(node)
    return out


# ---------------------------------------------------------------------------
# broadcast helpers (scalar and per-channel bias only)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _operand_view(t: Tensor, other: Tensor) -> np.ndarray:
    """Return ``t.data`` reshaped so numpy broadcasting realizes the allowed
    patterns against ``other``; raises ShapeError for anything richer."""
    if t.shape == other.shape:
        return t.data
    if t.size == 1 and t.ndim <= other.ndim:
        return t.data
    if other.size == 1 and other.ndim <= t.ndim:
        return t.data
    # per-channel bias: (C,) against (B,C,H,W) or (B,C)
    if t.ndim == 1 and other.ndim == 4 and t.shape[0] == other.shape[1]:
        return t.data.reshape(1, -1, 1, 1)
    if t.ndim == 1 and other.ndim == 2 and t.shape[0] == other.shape[1]:
        return t.data
    if other.ndim == 1 and t.ndim in (2, 4) and other.shape[0] == t.shape[1]:
        return t.data
    raise ShapeError(f"cannot broadcast shapes {t.shape} and {other.shape}")


def _unbroadcast(g: np.ndarray, view_shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(view_shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(view_shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op: str, a, b, fwd, dfa, dfb) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    av = _operand_view(a, b)
    bv = _operand_view(b, a)
    out_data = fwd(av, bv)
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(dfa(g, av, bv), av.shape).reshape(a.shape)
        if need_b:
            gb = _unbroadcast(dfb(g, av, bv), bv.shape).reshape(b.shape)
        return ga, gb

    return record(op, (a, b), out_data, backward)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return record("neg", (x,), -x.data, lambda g: (-g,))


def abs_(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    sign = np.sign(x.data)  # subgradient 0 at 0
    return record("abs", (x,), np.abs(x.data), lambda g: (g * sign,))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # subgradient 0 at 0
    return record("relu", (x,), np.maximum(x.data, 0), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    one, slope_t = x.dtype.type(1), x.dtype.type(slope)
    out = np.where(mask, x.data, x.data * slope_t)
    return record("leaky_relu", (x,), out,
                  lambda g: (g * np.where(mask, one, slope_t),))


def tanh_(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g * (1 - out * out),))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a plain constant (no gradient w.r.t. the constant)."""
    x = _as_tensor(x)
    c = x.dtype.type(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


# ---------------------------------------------------------------------------
# matmul and convolution


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = g @ bd.T if need_a else None
        gb = ad.T @ g if need_b else None
        return ga, gb

    return record("matmul", (a, b), ad @ bd, backward)


def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"convolution output size is not integral: input {n}, kernel {k}, "
            f"stride {stride}, pad {pad}"
        )
    return span // stride + 1


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:-pad, pad:-pad] = x
    return out


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw))
    return np.ascontiguousarray(view).reshape(b, c * k * k, ho * wo)


def _col2im(gcols: np.ndarray, padded_shape, k: int, stride: int, ho: int, wo: int,
            pad: int) -> np.ndarray:
    b, c, hp, wp = padded_shape
    gx = np.zeros((b, c, hp, wp), dtype=gcols.dtype)
    # one big transpose beats k*k strided reads of a (b,c,k,k,ho,wo) view
    gc = np.ascontiguousarray(
        gcols.reshape(b, c, k, k, ho, wo).transpose(2, 3, 0, 1, 4, 5))
    if stride == 1:
        for ki in range(k):
            for kj in range(k):
                gx[:, :, ki:ki + ho, kj:kj + wo] += gc[ki, kj]
    else:
        # group kernel taps by output parity: all accumulation happens in
        # contiguous buffers, the strided interleave writes each cell once
        for pi in range(stride):
            hi = (hp - pi + stride - 1) // stride
            for pj in range(stride):
                wj = (wp - pj + stride - 1) // stride
                taps = [(ki, kj) for ki in range(pi, k, stride)
                        for kj in range(pj, k, stride)]
                if not taps:
                    continue
                plane = np.zeros((b, c, hi, wj), dtype=gcols.dtype)
                for ki, kj in taps:
                    oi, oj = ki // stride, kj // stride
                    plane[:, :, oi:oi + ho, oj:oj + wo] += gc[ki, kj]
                gx[:, :, pi::stride, pj::stride] = plane
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return gx


def _conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    b, _, h, wd = x.shape
    cout, cin, k, _ = w.shape
    ho = _conv_out_size(h, k, stride, pad)
    wo = _conv_out_size(wd, k, stride, pad)
    cols = _im2col(_pad2d(x, pad), k, stride, ho, wo)
    y = np.matmul(w.reshape(cout, -1), cols)
    return y.reshape(b, cout, ho, wo)


def _conv2d_gx(g: np.ndarray, w: np.ndarray, stride: int, pad: int, x_shape) -> np.ndarray:
    b, cout, ho, wo = g.shape
    _, _, k, _ = w.shape
    if stride == 1 and pad <= k - 1:
        # gather form: correlate the output gradient with the spatially
        # flipped, channel-transposed kernel (GEMM-friendly, no scatter)
        w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return _conv2d_fwd(g, w_flip, 1, k - 1 - pad)
    hp = x_shape[2] + 2 * pad
    wp = x_shape[3] + 2 * pad
    gcols = np.matmul(w.reshape(cout, -1).T, g.reshape(b, cout, ho * wo))
    return _col2im(gcols, (b, x_shape[1], hp, wp), k, stride, ho, wo, pad)


def _conv2d_gw(g: np.ndarray, x: np.ndarray, stride: int, pad: int, w_shape) -> np.ndarray:
    b, cout, ho, wo = g.shape
    k = w_shape[2]
    cols = _im2col(_pad2d(x, pad), k, stride, ho, wo)
    gw = np.tensordot(g.reshape(b, cout, ho * wo), cols, axes=([0, 2], [0, 2]))
    return gw.reshape(w_shape)


def _check_conv_args(k: int, stride: int) -> None:
    if k not in _CONV_KERNELS:
        raise ShapeError(f"kernel size {k} unsupported (allowed: {_CONV_KERNELS})")
    if stride not in _CONV_STRIDES:
        raise ShapeError(f"stride {stride} unsupported (allowed: {_CONV_STRIDES})")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (B,Cin,H,W) with weights (Cout,Cin,k,k)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    _check_conv_args(w.shape[2], stride)
    xd, wd = x.data, w.data
    out = _conv2d_fwd(xd, wd, stride, pad)
    need_x, need_w = x.requires_grad, w.requires_grad

    def backward(g):
        gx = _conv2d_gx(g, wd, stride, pad, xd.shape) if need_x else None
        gw = _conv2d_gw(g, xd, stride, pad, wd.shape) if need_w else None
        return gx, gw

    return record("conv2d", (x, w), out, backward)


def conv2d_transpose(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution of (B,Cin,H,W) with weights (Cin,Cout,k,k);
    output spatial size is (H-1)*stride - 2*pad + k (mirror of conv2d)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-d input and weight, got {x.shape}, {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d_transpose kernel must be square, got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d_transpose channel mismatch: input {x.shape}, weight {w.shape}")
    k = w.shape[2]
    _check_conv_args(k, stride)
    b, _, h, wd_ = x.shape
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wd_ - 1) * stride - 2 * pad + k
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose output size {ho}x{wo} is not positive")
    xd, wdat = x.data, w.data
    out_shape = (b, w.shape[1], ho, wo)
    out = _conv2d_gx(xd, wdat, stride, pad, out_shape)
    need_x, need_w = x.requires_grad, w.requires_grad

    def backward(g):
        gx = _conv2d_fwd(g, wdat, stride, pad) if need_x else None
        gw = _conv2d_gw(xd, g, stride, pad, wdat.shape) if need_w else None
        return gx, gw

    return record("conv2d_transpose", (x, w), out, backward)


# ---------------------------------------------------------------------------
# normalization, pooling, shape ops


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                train: bool, momentum: float = 0.1, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over (B,C,H,W). In train mode the
    running buffers are updated in place with the given momentum."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects a 4-d input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine parameters must have shape ({c},)")
    xd = x.data
    need = (x.requires_grad, gamma.requires_grad, beta.requires_grad)

    if train:
        b, _, h, w = x.shape
        m = b * h * w
        if m == 1:
            raise DomainError("batchnorm2d train mode needs more than one value per channel")
        mean = xd.mean(axis=(0, 2, 3))
        xhat = xd - mean.reshape(1, c, 1, 1)
        var = (xhat * xhat).mean(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
        inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
        xhat *= inv.reshape(1, c, 1, 1)
        out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
        gd = gamma.data

        def backward(g):
            gx = ggamma = gbeta = None
            if need[1]:
                ggamma = (g * xhat).sum(axis=(0, 2, 3))
            if need[2]:
                gbeta = g.sum(axis=(0, 2, 3))
            if need[0]:
                gm = g.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gxm = (g * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gx = (gd * inv).reshape(1, c, 1, 1) * (g - gm - xhat * gxm)
            return gx, ggamma, gbeta

        return record("batchnorm2d", (x, gamma, beta), out, backward)

    # eval mode is a per-channel affine map; fold it into scale and shift
    inv = 1.0 / np.sqrt(running_var + xd.dtype.type(eps))
    scale_c = (gamma.data * inv).reshape(1, c, 1, 1)
    shift_c = (beta.data - gamma.data * inv * running_mean).reshape(1, c, 1, 1)
    out = xd * scale_c
    out += shift_c
    rm, inv_saved = running_mean, inv

    def backward_eval(g):
        gx = ggamma = gbeta = None
        if need[0]:
            gx = g * scale_c
        if need[1]:
            xhat = (xd - rm.reshape(1, c, 1, 1)) * inv_saved.reshape(1, c, 1, 1)
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if need[2]:
            gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return record("batchnorm2d", (x, gamma, beta), out, backward_eval)


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avgpool2d expects a 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avgpool2d window {k} does not divide spatial size {h}x{w}")
    out = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))
    inv = 1.0 / (k * k)

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) * g.dtype.type(inv)
        return (gx,)

    return record("avgpool2d", (x,), out, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old_shape = x.shape
    return record("reshape", (x,), x.data.reshape(shape),
                  lambda g: (g.reshape(old_shape),))


def flatten(x: Tensor) -> Tensor:
    """Flatten everything but the leading batch dimension."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"flatten expects a batched input, got {x.shape}")
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


# ---------------------------------------------------------------------------
# reductions


def _check_nonempty(x: Tensor, op: str) -> None:
    if x.size == 0:
        raise DomainError(f"{op} of an empty tensor")


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def _spread(g: np.ndarray, axes: Optional[tuple[int, ...]], shape) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def sum_(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    _check_nonempty(x, "sum")
    norm = None if axes is None else _normalize_axes(axes, x.ndim)
    out = x.data.sum(axis=norm)
    shape = x.shape
    return record("sum", (x,), np.asarray(out),
                  lambda g: (np.ascontiguousarray(_spread(g, norm, shape)),))


def mean(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    _check_nonempty(x, "mean")
    norm = None if axes is None else _normalize_axes(axes, x.ndim)
    out = x.data.mean(axis=norm)
    count = x.size if norm is None else int(np.prod([x.shape[a] for a in norm]))
    inv = x.dtype.type(1.0 / count)
    shape = x.shape
    return record("mean", (x,), np.asarray(out),
                  lambda g: (np.ascontiguousarray(_spread(g * inv, norm, shape)),))


def l1_norm(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_nonempty(x, "l1_norm")
    sign = np.sign(x.data)
    return record("l1_norm", (x,), np.asarray(np.abs(x.data).sum()),
                  lambda g: (g * sign,))


def l2_norm(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _check_nonempty(x, "l2_norm")
    out = float(np.sqrt((x.data.astype(np.float64) ** 2).sum()))
    xd = x.data
    safe = max(out, 1e-30)
    return record("l2_norm", (x,), np.asarray(out, dtype=x.dtype),
                  lambda g: (g * (xd / xd.dtype.type(safe)),))


def max_abs(x: Tensor) -> float:
    """Largest absolute value; participates in no gradient."""
    x = _as_tensor(x)
    _check_nonempty(x, "max_abs")
    return float(np.abs(x.data).max())
