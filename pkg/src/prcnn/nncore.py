"""Minimal reverse-mode differentiable kernels on numpy arrays.

Everything the detection and regression networks need: affine maps, 3D
convolution, activations, reductions, losses, and Adam, recorded on an
explicit tape and replayed in exact reverse execution order. Storage is
float32 by default; explicit reductions accumulate in float64. Gradient
correctness is checked against central finite differences (run the checks
in float64).
"""

from __future__ import annotations

import numpy as np

_TAPE_STACK: list = []


class Tensor:
    """N-d numeric array with an optional gradient buffer.

    grad is allocated lazily during backward. requires_grad marks leaves
    that should receive gradients; derived tensors inherit it from their
    parents.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


class Tape:
    """Ordered record of executed differentiable ops.

    backward() replays the record in reverse execution order, so every
    node's output gradient is fully accumulated before that node runs.
    """

    def __init__(self):
        self._nodes = []  # (out Tensor, backward closure)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, root: Tensor):
        """Seed d(root)/d(root) = 1 and propagate through the record."""
        if root.data.size != 1:
            raise ValueError("backward root must be a scalar")
        root.grad = np.ones_like(root.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, backward) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append((out, backward))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
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


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, _sum_to(g, a.data.shape))
        _accumulate(b, _sum_to(g, b.data.shape))

    _record(out, backward)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a constant scalar or array."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, _sum_to(g * b.data, a.data.shape))
        _accumulate(b, _sum_to(g * a.data, b.data.shape))

    _record(out, backward)
    return out


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0), x.requires_grad)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    _record(out, backward)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y.astype(d.dtype), x.requires_grad)

    def backward(g):
        _accumulate(x, g * out.data * (1.0 - out.data))

    _record(out, backward)
    return out


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape), x.requires_grad)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    _record(out, backward)
    return out


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)), x.requires_grad)

    def backward(g):
        _accumulate(x, g.transpose(inv))

    _record(out, backward)
    return out


def concat(xs, axis=0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis),
                 any(x.requires_grad for x in xs))
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(x, g[tuple(sl)])

    _record(out, backward)
    return out


def repeat_axis(x, n, axis) -> Tensor:
    """Stack n copies of x along a new axis; backward sums the copies."""
    x = _as_tensor(x)
    axis = axis % (x.data.ndim + 1)
    data = np.broadcast_to(np.expand_dims(x.data, axis),
                           x.data.shape[:axis] + (n,) + x.data.shape[axis:])
    out = Tensor(np.ascontiguousarray(data), x.requires_grad)

    def backward(g):
        _accumulate(x, g.sum(axis=axis, dtype=np.float64).astype(x.data.dtype))

    _record(out, backward)
    return out


def max_over_axis(x, axis) -> Tensor:
    """Max reduction; gradient routes to the first maximal slot (deterministic)."""
    x = _as_tensor(x)
    arg = np.argmax(x.data, axis=axis)
    out = Tensor(np.max(x.data, axis=axis), x.requires_grad)

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(arg, axis),
                          np.expand_dims(g, axis), axis=axis)
        _accumulate(x, dx)

    _record(out, backward)
    return out


def gather(x, idx, axis) -> Tensor:
    """Select indices along an axis; backward scatter-adds into place."""
    x = _as_tensor(x)
    idx = np.asarray(idx, np.int64)
    out = Tensor(np.take(x.data, idx, axis=axis), x.requires_grad)

    def backward(g):
        dx = np.zeros_like(x.data)
        mv = np.moveaxis(dx, axis, 0)
        np.add.at(mv, idx, np.moveaxis(g, axis, 0))
        _accumulate(x, dx)

    _record(out, backward)
    return out


def scatter_rows(x, idx, n_rows) -> Tensor:
    """Place rows of x (k, ...) at positions idx of a zero (n_rows, ...) array.

    idx entries must be unique. Backward gathers the output gradient rows.
    """
    x = _as_tensor(x)
    idx = np.asarray(idx, np.int64)
    out_data = np.zeros((n_rows,) + x.data.shape[1:], x.data.dtype)
    out_data[idx] = x.data
    out = Tensor(out_data, x.requires_grad)

    def backward(g):
        _accumulate(x, g[idx])

    _record(out, backward)
    return out


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype),
                 x.requires_grad)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# dense layers


def affine(x, w, b=None) -> Tensor:
    """y = x @ w + b over the last axis. x: (..., c_in), w: (c_in, c_out)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"affine: inner dims {x.data.shape[-1]} vs {w.data.shape[0]}")
    y = np.matmul(x.data, w.data)
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (w.data.shape[1],):
            raise ValueError("affine: bias shape must be (c_out,)")
        y = y + b.data
    out = Tensor(y, x.requires_grad or w.requires_grad or (b is not None and b.requires_grad))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        _accumulate(x, np.matmul(g, w.data.T))
        _accumulate(w, np.matmul(x2.T, g2))
        if b is not None:
            _accumulate(b, g2.sum(axis=0, dtype=np.float64).astype(b.data.dtype))

    _record(out, backward)
    return out


def _triple(v):
    return (v, v, v) if np.isscalar(v) else tuple(v)


_COL_CACHE = {}  # (padded spatial, kernel spatial, stride) -> (K, L) gather indices


def _im2col_indices(padded, ksz, st, out_sp):
    key = (padded, ksz, st)
    idx = _COL_CACHE.get(key)
    if idx is None:
        dp, hp, wp = padded
        d0 = np.arange(out_sp[0]) * st[0]
        h0 = np.arange(out_sp[1]) * st[1]
        w0 = np.arange(out_sp[2]) * st[2]
        base = ((d0[:, None, None] * hp + h0[None, :, None]) * wp
                + w0[None, None, :]).ravel()                       # (L,)
        kd_i, kh_i, kw_i = np.meshgrid(*(np.arange(kk) for kk in ksz), indexing="ij")
        koff = ((kd_i * hp + kh_i) * wp + kw_i).ravel()            # (K,)
        idx = koff[:, None] + base[None, :]                        # (K, L)
        _COL_CACHE[key] = idx
    return idx


def conv3d(x, k, b=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of x (c_in, D, H, W) with k (c_out, c_in, kd, kh, kw).

    Output spatial size per axis is (N + 2p - k)/s + 1, which must be a
    positive integer. Gather-to-columns keeps both passes in single matmuls;
    1x1x1 stride-1 kernels skip the gather entirely.
    """
    x, k = _as_tensor(x), _as_tensor(k)
    st, pad = _triple(stride), _triple(padding)
    co, ci, kd, kh, kw = k.data.shape
    ksz = (kd, kh, kw)
    if x.data.shape[0] != ci:
        raise ValueError(f"conv3d: input channels {x.data.shape[0]} != kernel {ci}")
    spatial = x.data.shape[1:]
    out_sp = []
    for n, kk, s, p in zip(spatial, ksz, st, pad):
        num = n + 2 * p - kk
        if num < 0 or num % s != 0:
            raise ValueError(f"conv3d: size {n} with kernel {kk}, stride {s}, padding {p} "
                             "gives a non-integral output size")
        out_sp.append(num // s + 1)
    od, oh, ow = out_sp
    L = od * oh * ow
    nk = kd * kh * kw
    pointwise = ksz == (1, 1, 1) and st == (1, 1, 1) and not any(pad)

    xp = np.pad(x.data, ((0, 0),) + tuple((p, p) for p in pad)) if any(pad) else x.data
    padded = xp.shape[1:]
    xpf = xp.reshape(ci, -1)
    kmat = k.data.reshape(co, ci * nk)
    if pointwise:
        idx = None
        y2 = kmat @ xpf
    else:
        idx = _im2col_indices(padded, ksz, st, tuple(out_sp))
        cols = xpf[:, idx]                         # (ci, K, L)
        y2 = kmat @ cols.reshape(ci * nk, L)
    y = y2.reshape(co, od, oh, ow)
    if b is not None:
        b = _as_tensor(b)
        y = y + b.data.reshape(co, 1, 1, 1)
    out = Tensor(y, x.requires_grad or k.requires_grad or (b is not None and b.requires_grad))

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(co, L))
        if pointwise:
            if k.requires_grad:
                _accumulate(k, (g2 @ xpf.T).reshape(k.data.shape))
            if x.requires_grad:
                _accumulate(x, (kmat.T @ g2).reshape(x.data.shape))
        else:
            cols2 = xpf[:, idx].reshape(ci * nk, L)
            if k.requires_grad:
                _accumulate(k, (g2 @ cols2.T).reshape(k.data.shape))
            if x.requires_grad:
                dcols = (kmat.T @ g2).reshape(ci, nk * L)
                flat = idx.ravel()
                n_flat = xpf.shape[1]
                dxp = np.empty_like(xpf)
                for c in range(ci):
                    dxp[c] = np.bincount(flat, weights=dcols[c], minlength=n_flat)
                dxp = dxp.reshape(xp.shape)
                if any(pad):
                    core = tuple([slice(None)] + [slice(p, dim - p) for p, dim
                                                  in zip(pad, dxp.shape[1:])])
                    dxp = np.ascontiguousarray(dxp[core])
                _accumulate(x, dxp)
        if b is not None:
            _accumulate(b, g2.sum(axis=1, dtype=np.float64).astype(b.data.dtype))

    _record(out, backward)
    return out


def upsample_nearest3d(x, factor) -> Tensor:
    """Nearest-neighbor upsampling of (c, D, H, W) by an integer factor per axis."""
    x = _as_tensor(x)
    fd, fh, fw = _triple(factor)
    c, d, h, w = x.data.shape
    data = x.data[:, :, None, :, None, :, None]
    data = np.broadcast_to(data, (c, d, fd, h, fh, w, fw))
    out = Tensor(np.ascontiguousarray(data).reshape(c, d * fd, h * fh, w * fw),
                 x.requires_grad)

    def backward(g):
        g6 = g.reshape(c, d, fd, h, fh, w, fw)
        _accumulate(x, g6.sum(axis=(2, 4, 6), dtype=np.float64).astype(x.data.dtype))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over rows. logits: (N, C), labels: (N,)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=-1, keepdims=True)
    n = len(labels)
    ll = z[np.arange(n), labels] - np.log(ez.sum(axis=-1))
    out = Tensor(np.asarray(-ll.sum(dtype=np.float64) / n, dtype=logits.data.dtype),
                 logits.requires_grad)

    def backward(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        _accumulate(logits, (g * d / n).astype(logits.data.dtype))

    _record(out, backward)
    return out


def smooth_l1(pred, target) -> Tensor:
    """Sum of the robust residual: 0.5 d^2 for |d| < 1 else |d| - 0.5."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError("smooth_l1: shape mismatch")
    d = pred.data - target.data
    small = np.abs(d) < 1.0
    r = np.where(small, 0.5 * d * d, np.abs(d) - 0.5)
    out = Tensor(np.asarray(r.sum(dtype=np.float64), dtype=pred.data.dtype),
                 pred.requires_grad or target.requires_grad)

    def backward(g):
        dd = np.where(small, d, np.sign(d))
        _accumulate(pred, (g * dd).astype(pred.data.dtype))
        _accumulate(target, (-g * dd).astype(target.data.dtype))

    _record(out, backward)
    return out


def mse(pred, target) -> Tensor:
    """Mean squared difference over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError("mse: shape mismatch")
    d = pred.data - target.data
    n = d.size
    out = Tensor(np.asarray((d * d).sum(dtype=np.float64) / n, dtype=pred.data.dtype),
                 pred.requires_grad or target.requires_grad)

    def backward(g):
        _accumulate(pred, (g * 2.0 * d / n).astype(pred.data.dtype))
        _accumulate(target, (-g * 2.0 * d / n).astype(target.data.dtype))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction, updating Tensor.data in place."""

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        zero_grads(self.params.values())

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """Functional single Adam update on raw arrays.

    state is a dict {"t": int, "m": [arrays], "v": [arrays]}; a fresh state
    is created when empty. Returns (new_params, state).
    """
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** state["t"]
    c2 = 1.0 - b2 ** state["t"]
    new = []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        new.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
    return new, state


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference_check(f, inputs, eps=1e-5, n_directions=10, seed=0) -> float:
    """Compare tape gradients of a scalar-valued f against central differences.

    f takes the given Tensors and returns a scalar Tensor. For each random
    unit direction u over all inputs jointly, the directional derivative
    <grad, u> from backward is compared with (f(x+eps*u) - f(x-eps*u)) / 2eps.
    Returns the max relative error. Run with float64 inputs.
    """
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        us = [rng.standard_normal(x.data.shape) for x in inputs]
        norm = np.sqrt(sum(float((u * u).sum()) for u in us)) or 1.0
        us = [u / norm for u in us]

        zero_grads(inputs)
        with Tape() as tape:
            out = f(*inputs)
        tape.backward(out)
        analytic = sum(float((x.grad * u).sum()) for x, u in zip(inputs, us)
                       if x.grad is not None)

        for x, u in zip(inputs, us):
            x.data = x.data + eps * u
        fp = float(f(*inputs).data)
        for x, u in zip(inputs, us):
            x.data = x.data - 2.0 * eps * u
        fm = float(f(*inputs).data)
        for x, u in zip(inputs, us):
            x.data = x.data + eps * u

        numeric = (fp - fm) / (2.0 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
