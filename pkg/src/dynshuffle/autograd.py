"""Dense tensors with taped reverse-mode differentiation.

The engine is deliberately small: float32 numpy buffers, a Wengert-list
``Tape`` that records one node per primitive application, and closure-based
vector-Jacobian products. Recording only happens while a tape is active
(``with Tape() as t:``), so inference runs with zero bookkeeping. Primitives
cover exactly what the shuffle networks need: matmul (batched), grouped 2-D /
1-D convolution via patch gathering, batch norm, relu, pooling, row softmax,
cross entropy, Kronecker products, and straight-through binarization.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_DEFAULT_DTYPE = np.float32

_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape():
    """The innermost open Tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense n-d array with an optional gradient slot.

    Values are float32 unless constructed from a float64 array (the
    finite-difference checker promotes its probes to float64 so the same
    backward rules can be verified in double precision).
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, (np.ndarray, np.generic)) and \
                data.dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic conveniences; python scalars are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


class _Node:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, out, inputs, vjp, op):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered record of primitive applications (a Wengert list).

    Nodes are appended in forward order, so the list is topologically sorted
    by construction; ``backward`` replays the rules in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)


def _record(out: Tensor, inputs, vjp, op: str):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.nodes.append(_Node(out, tuple(inputs), vjp, op))
    return out


def backward(loss: Tensor, tape: Tape):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    Adjoints of intermediates live only for the duration of the call; leaf
    .grad buffers persist, so calling twice without zero_grad doubles them.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
                holders[key] = inp
    for key, g in adjoint.items():
        t = holders[key]
        if t.requires_grad and t.is_leaf:
            t.accumulate_grad(g)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp, "sub")


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), vjp, "mul")


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = Tensor(np.sqrt(a.data))
    y = out.data

    def vjp(g):
        # subgradient 0 at exactly zero, like relu at its kink
        inv = np.where(y > 0, 0.5 / np.where(y > 0, y, 1.0), 0.0)
        return (g * inv,)

    return _record(out, (a,), vjp, "sqrt")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), vjp, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(a.data[idx]))

    def vjp(g):
        buf = np.zeros(a.shape, dtype=g.dtype)
        buf[idx] = g
        return (buf,)

    return _record(out, (a,), vjp, "narrow")


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor(np.asarray(a.data.mean(), dtype=a.dtype))
    return _record(out, (a,), lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype),), "mean")


def sum_axis(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    axis = tuple(axis) if isinstance(axis, (tuple, list)) else (axis,)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _record(out, (a,), vjp, "sum_axis")


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * a.dtype.type(s))
    return _record(out, (a,), lambda g: (g * s,), "scale")


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """out[..., r, :] = a[..., index[r], :] — row selection along axis -2.

    index must be a permutation of the row range; the backward scatters
    each gradient row back to its source.
    """
    index = np.asarray(index)
    out = Tensor(np.ascontiguousarray(np.take(a.data, index, axis=a.ndim - 2)))

    def vjp(g):
        buf = np.zeros(a.shape, dtype=g.dtype)
        sl = [slice(None)] * a.ndim
        sl[a.ndim - 2] = index
        buf[tuple(sl)] = g
        return (buf,)

    return _record(out, (a,), vjp, "gather_rows")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics (2-D, or batched on leading axes).

    The backward is dA = G·Bᵀ, dB = Aᵀ·G, with broadcast batch axes summed out.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), vjp, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = xW + b for x (N×in), W (in×out), b (out,)."""
    return add(matmul(x, w), b)


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Kronecker product of two matrices: out[i·p+s, j·q+t] = a[i,j]·b[s,t]."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"kron needs rank-2 inputs, got {a.shape} and {b.shape}")
    return _kron_impl(a, b)


def kron_batched(a: Tensor, b: Tensor) -> Tensor:
    """kron applied per batch entry; either side may be an unbatched matrix."""
    return _kron_impl(a, b)


def _kron_impl(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    batched = ad.ndim == 3 or bd.ndim == 3
    if batched:
        if ad.ndim == 2:
            ad = ad[None]
        if bd.ndim == 2:
            bd = bd[None]
        n = max(ad.shape[0], bd.shape[0])
        ad = np.broadcast_to(ad, (n,) + ad.shape[1:])
        bd = np.broadcast_to(bd, (n,) + bd.shape[1:])
        blocks = np.einsum("nij,nst->nisjt", ad, bd)
        out = Tensor(np.ascontiguousarray(
            blocks.reshape(n, ad.shape[1] * bd.shape[1], ad.shape[2] * bd.shape[2])))
    else:
        blocks = np.einsum("ij,st->isjt", ad, bd)
        out = Tensor(np.ascontiguousarray(blocks.reshape(ad.shape[0] * bd.shape[0],
                                                         ad.shape[1] * bd.shape[1])))

    def vjp(g):
        if batched:
            g5 = g.reshape(g.shape[0], ad.shape[1], bd.shape[1], ad.shape[2], bd.shape[2])
            ga = _unbroadcast(np.einsum("nisjt,nst->nij", g5, bd), a.shape)
            gb = _unbroadcast(np.einsum("nisjt,nij->nst", g5, ad), b.shape)
        else:
            g4 = g.reshape(ad.shape[0], bd.shape[0], ad.shape[1], bd.shape[1])
            ga = np.einsum("isjt,st->ij", g4, bd)
            gb = np.einsum("isjt,ij->st", g4, ad)
        return ga, gb

    return _record(out, (a, b), vjp, "kron")


# ---------------------------------------------------------------------------
# activation / normalization / pooling
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0  # gradient at exactly 0 is defined as 0
    return _record(out, (a,), lambda g: (g * mask,), "relu")


def global_avg_pool(a: Tensor) -> Tensor:
    """N×C×H×W → N×C spatial mean."""
    if a.ndim != 4:
        raise DimensionError(f"global_avg_pool expects N×C×H×W, got {a.shape}")
    n, c, h, w = a.shape
    out = Tensor(a.data.mean(axis=(2, 3)))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), a.shape).astype(a.dtype),)

    return _record(out, (a,), vjp, "global_avg_pool")


def row_softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), vjp, "row_softmax")


def binarize_ste(a: Tensor) -> Tensor:
    """Per-row argmax → 1, rest 0 (last axis); ties go to the lowest index.

    Straight-through backward: upstream gradient masked by the binary output,
    so only elements binarized to one propagate gradient.
    """
    idx = a.data.argmax(axis=-1)
    y = np.zeros_like(a.data)
    np.put_along_axis(y, idx[..., None], 1.0, axis=-1)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,), "binarize_ste")


class BatchNormState:
    """Running statistics for one batch-norm layer (channel axis 1)."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, dtype=_DEFAULT_DTYPE)
        self.running_var = np.ones(channels, dtype=_DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x: Tensor, scale_t: Tensor, offset: Tensor, state: BatchNormState,
              training: bool) -> Tensor:
    """Normalize over all axes but the channel axis (axis 1).

    Train mode uses batch statistics and updates the running buffers with
    momentum 0.9; eval mode uses the running buffers.
    """
    if x.ndim < 2:
        raise DimensionError(f"batchnorm expects a channel axis, got {x.shape}")
    c = x.shape[1]
    if scale_t.size != c or offset.size != c:
        raise DimensionError(f"batchnorm params sized {scale_t.size} for {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        # in place so external aliases of the buffers stay valid
        state.running_mean *= m
        state.running_mean += (1 - m) * mean.astype(_DEFAULT_DTYPE)
        state.running_var *= m
        state.running_var += (1 - m) * var.astype(_DEFAULT_DTYPE)
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = Tensor(xhat * scale_t.data.reshape(bshape) + offset.data.reshape(bshape))
    m_count = x.size // c

    def vjp(g):
        gs = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        dxhat = g * scale_t.data.reshape(bshape)
        if training:
            # full batch-statistics backward
            t1 = dxhat.sum(axis=axes, keepdims=True)
            t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = (dxhat - t1 / m_count - xhat * t2 / m_count) * inv.reshape(bshape)
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, gs.reshape(scale_t.shape), gb.reshape(offset.shape)

    return _record(out, (x, scale_t, offset), vjp, "batchnorm")


# ---------------------------------------------------------------------------
# convolution via patch gathering
# ---------------------------------------------------------------------------


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v), int(v))


def pad2d(a: Tensor, pad) -> Tensor:
    ph, pw = _pair(pad)
    if ph == 0 and pw == 0:
        return a
    out = Tensor(np.pad(a.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))))

    def vjp(g):
        h, w = a.shape[2], a.shape[3]
        return (g[:, :, ph:ph + h, pw:pw + w],)

    return _record(out, (a,), vjp, "pad2d")


def unfold(a: Tensor, kh: int, kw: int, stride) -> Tensor:
    """Gather conv patches: N×C×H×W → N×C×kh×kw×Ho×Wo.

    Backward is the col2im scatter-add over the kh·kw offsets.
    """
    sh, sw = _pair(stride)
    n, c, h, w = a.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(a.data, (kh, kw), axis=(2, 3))
    # win: N×C×Ho'×Wo'×kh×kw with unit stride; apply stride then reorder
    win = win[:, :, ::sh, ::sw]
    out = Tensor(np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)))

    def vjp(g):
        buf = np.zeros(a.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                buf[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += g[:, :, i, j]
        return (buf,)

    return _record(out, (a,), vjp, "unfold")


def conv2d_grouped(x: Tensor, w: Tensor, groups: int = 1, stride=1, pad=0) -> Tensor:
    """Grouped 2-D convolution (cross-correlation) via im2col + matmul.

    x: N×C×H×W, w: Cout×(C/groups)×kh×kw. groups=C with Cout=C is depthwise;
    1×1 kernels with groups=1 are pointwise.
    """
    from .errors import ConfigurationError

    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input/weight, got {x.shape}, {w.shape}")
    n, c, h, wdt = x.shape
    cout, cg, kh, kw = w.shape
    if c % groups != 0 or cout % groups != 0:
        raise ConfigurationError(f"groups={groups} must divide channels {c} and {cout}")
    if cg != c // groups:
        raise DimensionError(f"weight expects {cg} channels/group, input gives {c // groups}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wdt + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"kernel {kh}x{kw} stride {sh}x{sw} does not fit padded input {h + 2 * ph}x{wdt + 2 * pw}")
    cols = unfold(pad2d(x, (ph, pw)), kh, kw, (sh, sw))
    # N×C×kh×kw×Ho×Wo → N×g×(Cg·kh·kw)×P, contiguity makes this a pure reshape
    cols = reshape(cols, (n, groups, cg * kh * kw, ho * wo))
    wmat = reshape(w, (groups, cout // groups, cg * kh * kw))
    out = matmul(wmat, cols)  # broadcast over N → N×g×(Cout/g)×P
    return reshape(out, (n, cout, ho, wo))


def conv1d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """1-D convolution: x N×Cin×L, w Cout×Cin×k → N×Cout×Lout."""
    from .errors import ConfigurationError

    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects 3-d input/weight, got {x.shape}, {w.shape}")
    k = w.shape[2]
    if k > x.shape[2] + 2 * pad:
        raise ConfigurationError(f"kernel {k} longer than padded input {x.shape[2] + 2 * pad}")
    x4 = reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2]))
    w4 = reshape(w, (w.shape[0], w.shape[1], 1, k))
    y = conv2d_grouped(x4, w4, groups=1, stride=(1, stride), pad=(0, pad))
    return reshape(y, (y.shape[0], y.shape[1], y.shape[3]))


def avg_pool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Mean pooling, zero-padded (count includes padding, torch-style)."""
    cols = unfold(pad2d(x, pad), k, k, stride)
    return scale(sum_axis(cols, axis=(2, 3)), 1.0 / (k * k))


def max_axis(a: Tensor, axis: int) -> Tensor:
    idx = a.data.argmax(axis=axis)
    out = Tensor(np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis))

    def vjp(g):
        buf = np.zeros(a.shape, dtype=g.dtype)
        np.put_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (buf,)

    return _record(out, (a,), vjp, "max_axis")


def max_pool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    n, c = x.shape[0], x.shape[1]
    cols = unfold(pad2d(x, pad), k, k, stride)
    ho, wo = cols.shape[4], cols.shape[5]
    cols = reshape(transpose(cols, (0, 1, 4, 5, 2, 3)), (n, c, ho, wo, k * k))
    return max_axis(cols, 4)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy_mean(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of −log softmax(logits)[label]."""
    from .errors import InputError

    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    out = Tensor(np.asarray((lse - picked).mean(), dtype=logits.dtype))
    probs = np.exp(z - lse[:, None])

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (g / n),)

    return _record(out, (logits,), vjp, "cross_entropy_mean")


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------


def finite_diff_check(f, x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between taped gradients and central differences.

    The probe is promoted to float64 so both sides are evaluated in double
    precision; the backward rules themselves are dtype-agnostic. Returns
    max_i |analytic_i − numeric_i| / max(1, |analytic_i|).
    """
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        y = f(x64)
    if not np.all(np.isfinite(y.data)):
        raise NumericError("function produced non-finite output")
    backward(y, tape)
    analytic = x64.grad if x64.grad is not None else np.zeros_like(x64.data)

    flat = x64.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        fp = float(f(Tensor(x64.data)).data)
        flat[i] = keep - eps
        fm = float(f(Tensor(x64.data)).data)
        flat[i] = keep
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("finite differencing hit non-finite output")
        numeric[i] = (fp - fm) / (2 * eps)
    numeric = numeric.reshape(x64.data.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
