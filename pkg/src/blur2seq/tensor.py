"""Dense tensors with reverse-mode automatic differentiation.

Deliberately small: numpy arrays for storage, one backward closure per
operation, and exactly the ops the frame-prediction networks and their
losses need (2D convolution, space/depth resampling, elementwise math,
mean reductions). No broadcasting beyond scalar-tensor, no GPU, no
higher-order gradients.

Values are float32 by default; call ``set_default_dtype(64)`` to build
float64 graphs (used by the gradient-check harness for tight tolerances).
A tensor's value array is treated as immutable after creation. Leaf
tensors (parameters) are updated by rebinding through ``Tensor.assign``,
never by writing into the array a graph has already seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}
_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(bits):
    """Select 32- or 64-bit reals for newly created leaf tensors."""
    global _default_dtype
    if bits not in _DTYPES:
        raise ValueError(f"bits must be 32 or 64, got {bits!r}")
    _default_dtype = _DTYPES[bits]


def default_dtype():
    return _default_dtype


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _check_same_shape(a_shape, b_shape, what):
    if tuple(a_shape) == tuple(b_shape):
        return
    for d, (x, y) in enumerate(zip(a_shape, b_shape)):
        if x != y:
            raise ValueError(f"{what}: shapes {tuple(a_shape)} vs {tuple(b_shape)} differ at dim {d} ({x} vs {y})")
    raise ValueError(f"{what}: rank mismatch {tuple(a_shape)} vs {tuple(b_shape)}")


class Tensor:
    """Autodiff node: value array, gradient slot, and producing-op record."""

    __slots__ = ("values", "requires_grad", "op", "parents", "_bwd", "_grad")

    def __init__(self, values, requires_grad=False, dtype=None):
        self.values = np.asarray(values, dtype=dtype if dtype is not None else _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.op = None          # name of producing op, None for leaves
        self.parents = ()       # parent tensors, empty for leaves
        self._bwd = None        # closure(out_grad) accumulating into parents
        self._grad = None       # lazily allocated, same shape as values

    @classmethod
    def _from_op(cls, values, op, parents, bwd):
        """Internal: wrap an op result, keeping the computed dtype."""
        t = cls.__new__(cls)
        t.values = values
        t.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        t._grad = None
        if t.requires_grad:
            t.op = op
            t.parents = tuple(parents)
            t._bwd = bwd
        else:
            t.op = None
            t.parents = ()
            t._bwd = None
        return t

    @property
    def shape(self):
        return self.values.shape

    @property
    def grad(self):
        """Accumulated gradient, zero until a backward pass reaches this tensor."""
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def is_leaf(self):
        return self._bwd is None

    def assign(self, values):
        """Rebind a leaf's value array (parameter update between steps)."""
        if not self.is_leaf():
            raise ValueError("assign is only valid on leaf tensors")
        values = np.asarray(values)
        _check_same_shape(values.shape, self.values.shape, "assign")
        self.values = values

    def zero_grad(self):
        self._grad = None

    def _accumulate(self, g):
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += g

    def __repr__(self):
        tag = self.op or "leaf"
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}, {tag}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad=False, dtype=None):
    return Tensor(values, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise ops

def _unary(a, op, values, local_grad_fn):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(local_grad_fn() * g)

    return Tensor._from_op(values, op, (a,), bwd)


def add(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
        return Tensor._from_op(a.values + b, "add", (a,), bwd)
    b = _as_tensor(b)
    _check_same_shape(a.shape, b.shape, "add")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor._from_op(a.values + b.values, "add", (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g)
        return Tensor._from_op(a.values - b, "sub", (a,), bwd)
    b = _as_tensor(b)
    _check_same_shape(a.shape, b.shape, "sub")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor._from_op(a.values - b.values, "sub", (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a)
    if np.isscalar(b):
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * b)
        return Tensor._from_op(a.values * b, "mul", (a,), bwd)
    b = _as_tensor(b)
    _check_same_shape(a.shape, b.shape, "mul")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.values)
        if b.requires_grad:
            b._accumulate(g * a.values)

    return Tensor._from_op(a.values * b.values, "mul", (a, b), bwd)


def scale(a, s):
    return mul(a, float(s))


def neg(a):
    return mul(a, -1.0)


def abs_(a):
    # subgradient at exactly 0 is 0, keeps pair-loss gradients bounded
    a = _as_tensor(a)
    return _unary(a, "abs", np.abs(a.values), lambda: np.sign(a.values))


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.values, 0)
    return _unary(a, "relu", out, lambda: (a.values > 0).astype(a.values.dtype))


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    out = np.where(a.values > 0, a.values, a.values * slope)

    def local():
        d = np.full_like(a.values, slope)
        d[a.values > 0] = 1.0
        return d

    return _unary(a, "leaky_relu", out, local)


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a):
    a = _as_tensor(a)
    out = _stable_sigmoid(a.values)
    return _unary(a, "sigmoid", out, lambda: out * (1.0 - out))


def softplus(a):
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.values)
    return _unary(a, "softplus", out, lambda: _stable_sigmoid(a.values))


def clamp01(a):
    a = _as_tensor(a)
    out = np.clip(a.values, 0.0, 1.0)

    def local():
        return ((a.values >= 0.0) & (a.values <= 1.0)).astype(a.values.dtype)

    return _unary(a, "clamp01", out, local)


_EWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "scale": scale}
_EWISE_UNARY = {"abs": abs_, "relu": relu, "leaky_relu": leaky_relu,
                "sigmoid": sigmoid, "clamp01": clamp01, "softplus": softplus}


def ewise(kind, a, b=None):
    """Dispatch an elementwise op by name; binary kinds require ``b``."""
    if kind in _EWISE_BINARY:
        if b is None:
            raise ValueError(f"ewise kind {kind!r} needs a second operand")
        return _EWISE_BINARY[kind](a, b)
    if kind in _EWISE_UNARY:
        if b is not None:
            raise ValueError(f"ewise kind {kind!r} takes one operand")
        return _EWISE_UNARY[kind](a)
    raise ValueError(f"unknown ewise kind {kind!r}")


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.values.shape
    out = a.values.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return Tensor._from_op(out, "reshape", (a,), bwd)


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.values.transpose(axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return Tensor._from_op(out, "permute", (a,), bwd)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    ax = axis if axis >= 0 else out.ndim + axis
    sizes = [t.values.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._from_op(out, "concat", tuple(tensors), bwd)


def cast(a, dtype):
    """Change a tensor's floating dtype; gradients are cast back on the way down.

    Summing float32 values after a float64 cast makes small sums exact,
    which is what keeps the order-invariant losses bitwise permutation
    invariant.
    """
    a = _as_tensor(a)
    orig = a.values.dtype
    out = a.values.astype(dtype)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.astype(orig))

    return Tensor._from_op(out, "cast", (a,), bwd)


def detach(a):
    """Constant copy of a tensor's value; blocks gradient flow."""
    a = _as_tensor(a)
    t = Tensor.__new__(Tensor)
    t.values = a.values
    t.requires_grad = False
    t.op = None
    t.parents = ()
    t._bwd = None
    t._grad = None
    return t


# ---------------------------------------------------------------------------
# resampling

def _lift4d(v):
    if v.ndim == 3:
        return v[None], True
    if v.ndim == 4:
        return v, False
    raise ValueError(f"expected rank 3 or 4 input, got rank {v.ndim}")


def _s2d_values(v, s):
    n, h, w, c = v.shape
    return v.reshape(n, h // s, s, w // s, s, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h // s, w // s, s * s * c)


def _d2s_values(v, s):
    n, h, w, c = v.shape
    c0 = c // (s * s)
    return v.reshape(n, h, w, s, s, c0).transpose(0, 1, 3, 2, 4, 5).reshape(n, h * s, w * s, c0)


def space_to_depth(a, s):
    """Fold s x s spatial blocks into channels; exact inverse of depth_to_space."""
    a = _as_tensor(a)
    s = int(s)
    if s < 1:
        raise ValueError(f"factor must be >= 1, got {s}")
    v, squeezed = _lift4d(a.values)
    n, h, w, c = v.shape
    if h % s or w % s:
        raise ValueError(f"spatial dims ({h}, {w}) not divisible by factor {s}")
    out = np.ascontiguousarray(_s2d_values(v, s))
    if squeezed:
        out = out[0]

    def bwd(g):
        if a.requires_grad:
            gv = g[None] if squeezed else g
            gx = _d2s_values(gv, s)
            a._accumulate(gx[0] if squeezed else gx)

    return Tensor._from_op(out, "space_to_depth", (a,), bwd)


def depth_to_space(a, s):
    a = _as_tensor(a)
    s = int(s)
    if s < 1:
        raise ValueError(f"factor must be >= 1, got {s}")
    v, squeezed = _lift4d(a.values)
    n, h, w, c = v.shape
    if c % (s * s):
        raise ValueError(f"channel dim {c} not divisible by factor^2 = {s * s}")
    out = np.ascontiguousarray(_d2s_values(v, s))
    if squeezed:
        out = out[0]

    def bwd(g):
        if a.requires_grad:
            gv = g[None] if squeezed else g
            gx = _s2d_values(gv, s)
            a._accumulate(gx[0] if squeezed else gx)

    return Tensor._from_op(out, "depth_to_space", (a,), bwd)


# ---------------------------------------------------------------------------
# convolution (cross-correlation, the learned-filter convention)

@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    padding: int | None = None  # None: "same" output when stride == 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def pad(self):
        if self.padding is not None:
            return self.padding
        return self.dilation * (self.kernel - 1) // 2

    def out_size(self, h, w):
        keff = self.dilation * (self.kernel - 1) + 1
        p = self.pad
        return (h + 2 * p - keff) // self.stride + 1, (w + 2 * p - keff) // self.stride + 1

    def weight_shape(self):
        return (self.kernel, self.kernel, self.in_channels, self.out_channels)


def _im2col(v, spec):
    n, h, w, c = v.shape
    k, st, dil, p = spec.kernel, spec.stride, spec.dilation, spec.pad
    if p:
        v = np.pad(v, ((0, 0), (p, p), (p, p), (0, 0)))
    keff = dil * (k - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(v, (keff, keff), axis=(1, 2))
    win = win[:, ::st, ::st][..., ::dil, ::dil]           # [n, ho, wo, c, k, k]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    return cols, ho, wo


def conv2d(a, spec, weights, bias):
    """2D cross-correlation with stride/dilation, differentiable in all inputs.

    Input is [H, W, Cin] or [N, H, W, Cin]; weights [k, k, Cin, Cout];
    bias [Cout]. Output spatial size follows the usual floor formula.
    """
    a = _as_tensor(a)
    weights = _as_tensor(weights)
    bias = _as_tensor(bias)
    v, squeezed = _lift4d(a.values)
    n, h, w, cin = v.shape
    if cin != spec.in_channels:
        raise ValueError(f"input channel dim is {cin}, spec expects {spec.in_channels}")
    if weights.values.shape != spec.weight_shape():
        _check_same_shape(weights.values.shape, spec.weight_shape(), "conv2d weights")
    if bias.values.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.values.shape} does not match out_channels {spec.out_channels}")

    k, st, dil, p, cout = spec.kernel, spec.stride, spec.dilation, spec.pad, spec.out_channels
    cols, ho, wo = _im2col(v, spec)
    w2 = weights.values.reshape(k * k * cin, cout)
    out2 = cols @ w2
    out2 += bias.values
    out = out2.reshape(n, ho, wo, cout)
    if squeezed:
        out = out[0]

    def bwd(g):
        g2 = (g[None] if squeezed else g).reshape(n * ho * wo, cout)
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if weights.requires_grad:
            # im2col is recomputed here, trading a repack for graph memory
            c2, _, _ = _im2col(v, spec)
            weights._accumulate((c2.T @ g2).reshape(k, k, cin, cout))
        if a.requires_grad:
            dcols = (g2 @ w2.T).reshape(n, ho, wo, k, k, cin)
            dxp = np.zeros((n, h + 2 * p, w + 2 * p, cin), dtype=dcols.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i * dil:i * dil + ho * st:st, j * dil:j * dil + wo * st:st, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, p:p + h, p:p + w, :]
            a._accumulate(gx[0] if squeezed else gx)

    return Tensor._from_op(out, "conv2d", (a, weights, bias), bwd)


# ---------------------------------------------------------------------------
# reductions

def reduce_mean(a):
    a = _as_tensor(a)
    n = a.values.size
    out = np.asarray(a.values.mean())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.values, g / n))

    return Tensor._from_op(out, "reduce_mean", (a,), bwd)


def reduce_mean_axes(a, axes):
    """Mean over a subset of axes (used for per-sample spatial pooling)."""
    a = _as_tensor(a)
    axes = tuple(sorted(ax % a.values.ndim for ax in axes))
    count = 1
    for ax in axes:
        count *= a.values.shape[ax]
    out = a.values.mean(axis=axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.expand_dims(g, axes) / count)

    return Tensor._from_op(out, "reduce_mean_axes", (a,), bwd)


def reduce_loss(kind, pred, target):
    """Mean L1 or squared-L2 distance between a prediction and a constant target."""
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if target.requires_grad:
        raise ValueError("reduce_loss target must not require gradients")
    _check_same_shape(pred.shape, target.shape, "reduce_loss")
    d = sub(pred, target)
    if kind == "l1_mean":
        return reduce_mean(abs_(d))
    if kind == "l2_mean":
        return reduce_mean(mul(d, d))
    raise ValueError(f"unknown reduce_loss kind {kind!r}")


# ---------------------------------------------------------------------------
# backward pass

def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Reverse-mode sweep from a scalar; returns {leaf: gradient array}.

    Gradients accumulate additively into each reachable requires_grad
    tensor; intermediate grads are freed once consumed to bound memory.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {loss.values.shape}")
    order = _topo_order(loss)
    loss._accumulate(np.ones_like(loss.values))
    grads = {}
    for node in reversed(order):
        if node._bwd is not None and node.requires_grad and node._grad is not None:
            node._bwd(node._grad)
            node._grad = None  # intermediate, no longer needed
        elif node.is_leaf() and node.requires_grad:
            grads[node] = node.grad
    return grads


def zero_grad(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(builder, leaves, eps=1e-3):
    """Compare backward gradients against central differences.

    ``builder()`` must rebuild the same scalar loss from the current values
    of ``leaves`` (deterministically). The numeric side is evaluated in
    float64 regardless of the build dtype, so the returned max relative
    error measures the analytic backward pass. Relative error uses
    max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if not (1e-6 <= eps <= 1e-2):
        raise ValueError(f"eps must lie in [1e-6, 1e-2], got {eps}")
    leaves = list(leaves)
    loss = builder()
    if not np.isfinite(loss.values).all():
        raise ValueError("grad_check: loss is non-finite")
    zero_grad(leaves)
    backward(loss)
    analytic = [l.grad.copy() for l in leaves]
    if any(not np.isfinite(g).all() for g in analytic):
        raise ValueError("grad_check: analytic gradient is non-finite")

    saved = [l.values for l in leaves]
    base = [v.astype(np.float64) for v in saved]
    max_rel = 0.0
    try:
        for li, leaf in enumerate(leaves):
            for idx in np.ndindex(base[li].shape):
                for sign in (+1.0, -1.0):
                    pert = base[li].copy()
                    pert[idx] += sign * eps
                    leaf.assign(pert)
                    val = float(builder().values)
                    if not np.isfinite(val):
                        raise ValueError(f"grad_check: non-finite loss at leaf {li}, index {idx}")
                    if sign > 0:
                        fp = val
                    else:
                        fm = val
                leaf.assign(base[li])
                num = (fp - fm) / (2.0 * eps)
                ana = float(analytic[li][idx])
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                max_rel = max(max_rel, rel)
    finally:
        for leaf, v in zip(leaves, saved):
            leaf.assign(v)
    return max_rel
