"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly what the fusion and decoding stacks need: elementwise
arithmetic, 2-D convolutions, batched matrix products, softmax, layer
norm, a few shape movers, and a taped backward pass. Storage is always
row-major contiguous float64; there are no strided views. Gradients
accumulate additively and are zeroed explicitly by the caller.

The recorded graph doubles as the computation tape: every op result
remembers its parents and a backward rule, and ``backward`` replays the
rules once each in reverse topological order.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, FormatError, NumericError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A numpy-backed node in the autodiff graph.

    Leaves are created directly (optionally with ``requires_grad=True``);
    op results carry the backward rule that distributes an incoming
    gradient to their parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def numpy(self):
        """Copy of the underlying array, detached from the graph."""
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

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
        return mul(self, -1.0)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward):
    """Wrap an op result; record the rule only when a parent tracks grads."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericError("operation produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcastable"
        ) from None


# -- elementwise ops ---------------------------------------------------


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _broadcast_check(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), rule)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _broadcast_check(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), rule)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _broadcast_check(a, b, "mul")

    def rule(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, (a, b), rule)


def relu(a):
    a = _coerce(a)
    mask = a.data > 0.0

    def rule(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), rule)


def gelu(a):
    """Exact (erf-based) GELU."""
    a = _coerce(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def rule(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), rule)


def absolute(a):
    a = _coerce(a)

    def rule(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), rule)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes through the interior (inclusive)."""
    a = _coerce(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def rule(g):
        return (g * mask,)

    return _make(np.clip(a.data, lo, hi), (a,), rule)


# -- reductions --------------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _make(out, (a,), rule)


def mean(a, axis=None, keepdims=False):
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra ----------------------------------------------------


def matmul(a, b):
    """Batched matrix product.

    Either ``b`` is an unbatched matrix applied to every leading slice of
    ``a``, or both operands carry identical leading batch extents.
    """
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires at least 2-D operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    if b.ndim == 2:

        def rule(g):
            ga = g @ b.data.T
            k, n = b.data.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

        return _make(a.data @ b.data, (a, b), rule)
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise DimensionError(
            f"matmul batch extents differ: {a.data.shape} x {b.data.shape}"
        )

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), rule)


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    x = _coerce(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (x,), rule)


def layer_norm(x, gamma, beta, axis, eps=1e-5):
    """Normalize to zero mean / unit variance along ``axis``, then affine."""
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    n = x.data.shape[axis]
    if gamma.size != n or beta.size != n:
        raise DimensionError(
            f"layer_norm affine extents {gamma.size}/{beta.size} != axis extent {n}"
        )
    bshape = [1] * x.ndim
    bshape[axis] = n
    gb = gamma.data.reshape(bshape)

    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gb + beta.data.reshape(bshape)

    def rule(g):
        dxhat = g * gb
        t1 = dxhat.sum(axis=axis, keepdims=True)
        t2 = (dxhat * xhat).sum(axis=axis, keepdims=True)
        dx = (inv / n) * (n * dxhat - t1 - xhat * t2)
        reduce_axes = tuple(i for i in range(x.ndim) if i != (axis % x.ndim))
        dgamma = (g * xhat).sum(axis=reduce_axes).reshape(gamma.data.shape)
        dbeta = g.sum(axis=reduce_axes).reshape(beta.data.shape)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), rule)


# -- convolutions ------------------------------------------------------


def _conv_windows(xp, k, stride):
    """Sliding k x k windows of a padded (C, H, W) array -> (C, H', W', k, k)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    return win


def conv2d(x, w, b=None, padding=0, stride=1):
    """2-D cross-correlation of a (C_in, H, W) input with (C_out, C_in, k, k).

    Zero padding; odd kernel; output spatial size (H + 2p - k)//stride + 1.
    """
    x, w = _coerce(x), _coerce(w)
    b = _coerce(b) if b is not None else None
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError("conv2d expects input (C,H,W) and kernel (O,C,k,k)")
    cout, cin, k, k2 = w.data.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd size, got {k}x{k2}")
    if x.data.shape[0] != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.data.shape[0]} vs kernel {cin}"
        )
    if padding < 0 or stride < 1:
        raise DimensionError("conv2d: padding must be >= 0 and stride >= 1")
    _, h, wd = x.data.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d output size {ho}x{wo} is not positive")
    if b is not None and b.data.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {b.data.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = _conv_windows(xp, k, stride)  # (C_in, ho, wo, k, k)
    # im2col + BLAS: (ho*wo, C_in*k*k) @ (C_in*k*k, C_out)
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(
        ho * wo, cin * k * k
    )
    wmat = w.data.reshape(cout, cin * k * k)
    out = (cols @ wmat.T).T.reshape(cout, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def rule(g):
        gmat = g.reshape(cout, ho * wo)
        dw = (gmat @ cols).reshape(w.data.shape)
        gw = np.tensordot(w.data, g, axes=([0], [0]))  # (C_in, k, k, ho, wo)
        dxp = np.zeros_like(xp)
        for a in range(k):
            for bb in range(k):
                dxp[:, a : a + stride * ho : stride, bb : bb + stride * wo : stride] += gw[
                    :, a, bb
                ]
        dx = dxp[:, padding : padding + h, padding : padding + wd]
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, rule)


def depthwise_conv2d(x, w, b=None, padding=0):
    """Per-channel 2-D cross-correlation: (C,H,W) with (C,k,k) kernels."""
    x, w = _coerce(x), _coerce(w)
    b = _coerce(b) if b is not None else None
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError("depthwise_conv2d expects (C,H,W) and (C,k,k)")
    c, k, k2 = w.data.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError("depthwise_conv2d kernel must be square with odd size")
    if x.data.shape[0] != c:
        raise DimensionError(
            f"depthwise_conv2d channel mismatch: {x.data.shape[0]} vs {c}"
        )
    _, h, wd = x.data.shape
    ho = h + 2 * padding - k + 1
    wo = wd + 2 * padding - k + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError("depthwise_conv2d output size is not positive")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = _conv_windows(xp, k, 1)
    # batched per-channel matmul: (C, ho*wo, k*k) @ (C, k*k, 1)
    cols = np.ascontiguousarray(win).reshape(c, ho * wo, k * k)
    out = (cols @ w.data.reshape(c, k * k, 1)).reshape(c, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def rule(g):
        dw = (g.reshape(c, 1, ho * wo) @ cols).reshape(c, k, k)
        dxp = np.zeros_like(xp)
        for a in range(k):
            for bb in range(k):
                dxp[:, a : a + ho, bb : bb + wo] += g * w.data[:, a : a + 1, bb : bb + 1]
        dx = dxp[:, padding : padding + h, padding : padding + wd]
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, rule)


def conv_transpose2d(x, w, b=None, stride=2):
    """Sub-pixel transposed convolution with kernel size == stride.

    Each input pixel expands into a non-overlapping stride x stride block:
    y[o, s*i+a, s*j+b] = sum_c w[c, o, a, b] * x[c, i, j].
    """
    x, w = _coerce(x), _coerce(w)
    b = _coerce(b) if b is not None else None
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError("conv_transpose2d expects (C,H,W) and (C,O,s,s)")
    cin, cout, k, k2 = w.data.shape
    if k != stride or k2 != stride:
        raise DimensionError("conv_transpose2d requires kernel size == stride")
    if x.data.shape[0] != cin:
        raise DimensionError(
            f"conv_transpose2d channel mismatch: {x.data.shape[0]} vs {cin}"
        )
    _, h, wd = x.data.shape
    out = np.einsum("coab,chw->ohawb", w.data, x.data, optimize=True).reshape(
        cout, h * stride, wd * stride
    )
    if b is not None:
        out = out + b.data[:, None, None]

    def rule(g):
        gr = g.reshape(cout, h, stride, wd, stride)
        dx = np.einsum("coab,ohawb->chw", w.data, gr, optimize=True)
        dw = np.einsum("chw,ohawb->coab", x.data, gr, optimize=True)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, rule)


# -- shape movers ------------------------------------------------------


def reshape(a, shape):
    a = _coerce(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"cannot reshape {a.data.shape} to {shape}")

    def rule(g):
        return (g.reshape(a.data.shape),)

    return _make(a.data.reshape(shape), (a,), rule)


def transpose(a, axes):
    a = _coerce(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for ndim {a.ndim}")
    inv = np.argsort(axes)

    def rule(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), rule)


def forward_diff(a, axis):
    """Forward difference along ``axis``; the trailing slot is zero."""
    a = _coerce(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"forward_diff axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    out = np.zeros_like(a.data)
    head = [slice(None)] * a.ndim
    tail = [slice(None)] * a.ndim
    head[axis] = slice(None, -1)
    tail[axis] = slice(1, None)
    head, tail = tuple(head), tuple(tail)
    out[head] = a.data[tail] - a.data[head]

    def rule(g):
        dx = np.zeros_like(a.data)
        dx[tail] += g[head]
        dx[head] -= g[head]
        return (dx,)

    return _make(out, (a,), rule)


# -- backward pass -----------------------------------------------------


def _topo_order(root):
    """Post-order over the recorded graph (parents before children)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``grad`` on every tracked leaf reachable from ``loss``.

    Applies each recorded backward rule exactly once, in reverse
    topological order. Leaf gradients accumulate additively across calls.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    if not loss.requires_grad:
        raise ContractError("loss does not track gradients")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise ContractError(
                    f"backward rule produced shape {pg.shape} for parent {parent.data.shape}"
                )
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# -- binary tensor format ---------------------------------------------

_BFT_MAGIC = b"BFT1"
_BFT_F64 = 0


def write_bft(path, array):
    """Write an array in the .bft format (f64, little-endian, row-major)."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    if arr.ndim > 255:
        raise FormatError("bft supports rank <= 255")
    with open(path, "wb") as fh:
        fh.write(_BFT_MAGIC)
        fh.write(struct.pack("<BB", _BFT_F64, arr.ndim))
        for extent in arr.shape:
            fh.write(struct.pack("<I", extent))
        fh.write(arr.tobytes())


def read_bft(path):
    """Read a .bft file back into a float64 array (bit-exact round trip)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6 or raw[:4] != _BFT_MAGIC:
        raise FormatError(f"{path}: not a bft file")
    dtype_tag, rank = struct.unpack_from("<BB", raw, 4)
    if dtype_tag != _BFT_F64:
        raise FormatError(f"{path}: unsupported dtype tag {dtype_tag}")
    header_end = 6 + 4 * rank
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, 6) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    if len(raw) != header_end + 8 * count:
        raise FormatError(f"{path}: payload size mismatch")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=header_end)
    # copy out of the (possibly unaligned) buffer view: keeps arrays
    # writeable and alignment-consistent so BLAS results stay bit-stable
    out = np.empty(shape, dtype=np.float64)
    out[...] = data.reshape(shape)
    return out
