"""Reverse-mode automatic differentiation over mixed real/complex numpy graphs.

Gradient convention
-------------------
For a real-valued scalar loss f, the cotangent carried backwards through a
complex-valued node z is the conjugate-coordinate gradient

    g(z) = df/d(conj z) = (df/dz_R + i df/dz_I) / 2,

so gradient descent reads w <- w - rho * g(w). Through a real-valued node the
cotangent is the plain partial df/dx. The chain rule this induces:

  * complex out -> complex in, holomorphic op:   g_in += g_out * conj(dy/dx)
  * complex out -> real in:                      g_in += 2 Re(g_out * conj(dy/dx))
  * real out    -> complex in:                   g_in += g_out * conj(dy/dx)
    (valid because dy/d(conj x) = conj(dy/dx) whenever y is real)
  * real out    -> real in:                      g_in += g_out * dy/dx

The only primitives that do not fit the conj(dy/dx) template are conj() and the
real/imag extractors, which carry their own rules. Every rule here is covered by
the finite-difference checker `grad_check`.

Recording is implicit: primitives return a `Node` when any argument is a `Node`
and a plain ndarray otherwise, so the same model code serves traced training,
untraced evaluation, and the finite-difference reference path.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError
from . import tensor as T

_counter = itertools.count()


class Node:
    """One recorded value in the computation tape.

    `parents` and `vjps` line up: vjps[i](g) returns the cotangent contribution
    for parents[i], already converted to that parent's real/complex convention
    and unbroadcast to its shape. Leaves have no parents and may carry a name.
    """

    __slots__ = ("value", "parents", "vjps", "name", "order")

    def __init__(self, value, parents=(), vjps=(), name=None):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjps = vjps
        self.name = name
        self.order = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    # arithmetic sugar so composite ops read like numpy code
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

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype}, name={self.name})"


def value_of(x):
    """Underlying value; python scalars stay python so numpy's weak scalar
    promotion keeps 32-bit graphs at 32 bits."""
    if isinstance(x, Node):
        return x.value
    if isinstance(x, (bool, int, float, complex)):
        return x
    return np.asarray(x)


def _tracing(*args) -> bool:
    return any(isinstance(a, Node) for a in args)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _convert(contrib: np.ndarray, parent_val: np.ndarray, out_is_complex: bool) -> np.ndarray:
    """Map a conj(dy/dx)-template contribution onto the parent's convention."""
    if not np.iscomplexobj(parent_val) and out_is_complex:
        contrib = 2.0 * contrib.real
    return _unbroadcast(np.asarray(contrib), parent_val.shape)


def _ew_vjp(parent, dydx, out_is_complex):
    """Standard elementwise rule; dydx is conj-template d(out)/d(parent).

    Scalar dydx stays a python scalar so it never widens the gradient dtype;
    array dydx is conjugated lazily inside the vjp so the traced forward does
    not allocate derivative copies it may only need much later (or, for real
    arrays, not at all)."""
    pval = value_of(parent)
    if isinstance(dydx, (bool, int, float)):
        conj_scalar = float(dydx)
    elif isinstance(dydx, complex):
        conj_scalar = dydx.conjugate()
    else:
        conj_scalar = None

    def vjp(g):
        if conj_scalar is not None:
            d = conj_scalar
        elif np.iscomplexobj(dydx):
            d = np.conjugate(dydx)
        else:
            d = dydx
        return _convert(g * d, pval, out_is_complex)

    return vjp


def _make(value, pairs, name=None):
    """Assemble a Node from (arg, vjp) pairs, keeping only traced parents."""
    parents = []
    vjps = []
    for a, v in pairs:
        if isinstance(a, Node):
            parents.append(a)
            vjps.append(v)
    return Node(value, tuple(parents), tuple(vjps), name=name)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a_node = isinstance(a, Node)
    b_node = isinstance(b, Node)
    av = a.value if a_node else value_of(a)
    bv = b.value if b_node else value_of(b)
    out = av + bv
    if not (a_node or b_node):
        return out
    oc = np.iscomplexobj(out)
    pairs = []
    if a_node:
        pairs.append((a, _ew_vjp(a, 1.0, oc)))
    if b_node:
        pairs.append((b, _ew_vjp(b, 1.0, oc)))
    return _make(out, pairs)


def sub(a, b):
    a_node = isinstance(a, Node)
    b_node = isinstance(b, Node)
    av = a.value if a_node else value_of(a)
    bv = b.value if b_node else value_of(b)
    out = av - bv
    if not (a_node or b_node):
        return out
    oc = np.iscomplexobj(out)
    pairs = []
    if a_node:
        pairs.append((a, _ew_vjp(a, 1.0, oc)))
    if b_node:
        pairs.append((b, _ew_vjp(b, -1.0, oc)))
    return _make(out, pairs)


def mul(a, b):
    a_node = isinstance(a, Node)
    b_node = isinstance(b, Node)
    av = a.value if a_node else value_of(a)
    bv = b.value if b_node else value_of(b)
    out = av * bv
    if not (a_node or b_node):
        return out
    oc = np.iscomplexobj(out)
    pairs = []
    if a_node:
        pairs.append((a, _ew_vjp(a, bv, oc)))
    if b_node:
        pairs.append((b, _ew_vjp(b, av, oc)))
    return _make(out, pairs)


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not _tracing(a, b):
        return out
    oc = np.iscomplexobj(out)
    pairs = []
    if isinstance(a, Node):
        def vjp_a(g):
            d = np.conjugate(bv) if np.iscomplexobj(bv) else bv
            return _convert(g / d, av, oc)

        pairs.append((a, vjp_a))
    if isinstance(b, Node):
        def vjp_b(g):
            d = -av / (bv * bv)
            if np.iscomplexobj(d):
                d = np.conjugate(d)
            return _convert(g * d, bv, oc)

        pairs.append((b, vjp_b))
    return _make(out, pairs)


def neg(a):
    av = value_of(a)
    if not _tracing(a):
        return -av
    return _make(-av, [(a, _ew_vjp(a, -1.0, np.iscomplexobj(av)))])


# ---------------------------------------------------------------------------
# complex structure


def conj(a):
    av = value_of(a)
    out = np.conjugate(av)
    if not _tracing(a):
        return out
    if np.iscomplexobj(av):
        return _make(out, [(a, lambda g: np.conjugate(g))])
    return _make(out, [(a, lambda g: _unbroadcast(np.asarray(g), av.shape))])


def real(a):
    av = value_of(a)
    out = av.real.copy() if np.iscomplexobj(av) else av
    if not _tracing(a):
        return out
    if np.iscomplexobj(av):
        return _make(out, [(a, lambda g: 0.5 * np.asarray(g, dtype=av.dtype))])
    return _make(out, [(a, lambda g: np.asarray(g))])


def imag(a):
    av = value_of(a)
    out = av.imag.copy() if np.iscomplexobj(av) else np.zeros_like(av)
    if not _tracing(a):
        return out
    if np.iscomplexobj(av):
        return _make(out, [(a, lambda g: 0.5j * np.asarray(g, dtype=av.dtype))])
    return _make(out, [(a, lambda g: np.zeros_like(av))])


def as_complex(re, im):
    """re + i*im from two real tensors."""
    rv, iv = value_of(re), value_of(im)
    out = rv + 1j * iv  # python scalar 1j keeps float32 inputs at complex64
    if not _tracing(re, im):
        return out
    pairs = []
    if isinstance(re, Node):
        pairs.append((re, _ew_vjp(re, 1.0, True)))
    if isinstance(im, Node):
        pairs.append((im, _ew_vjp(im, 1j, True)))
    return _make(out, pairs)


def magnitude(a, guard=0.0):
    """|a|; at |a| <= guard the backward contribution is 0 (subgradient choice)."""
    av = value_of(a)
    out = np.abs(av)
    if not _tracing(a):
        return out
    if np.iscomplexobj(av):
        def vjp(g):
            safe = np.where(out > guard, out, np.inf)
            return _unbroadcast(g * (av / (2.0 * safe)), av.shape)  # conj(d|a|/da)

        return _make(out, [(a, vjp)])

    # real |x|: sign subgradient, 0 at x == 0
    def vjp_real(g):
        return _unbroadcast(g * np.sign(av), av.shape)

    return _make(out, [(a, vjp_real)])


def phase(a, guard=0.0):
    """Angle in (-pi, pi]; backward is 0 where |a| <= guard."""
    av = value_of(a)
    out = T.phase(av)
    if not _tracing(a):
        return out

    def vjp(g):
        r2 = av.real * av.real + av.imag * av.imag
        safe = np.where(r2 > guard * guard, r2, np.inf)
        return _unbroadcast(g * (0.5j * av / safe), av.shape)

    return _make(out, [(a, vjp)])


# ---------------------------------------------------------------------------
# real elementwise nonlinearities


def _real_unary(a, out, deriv_fn):
    """deriv_fn is evaluated lazily at backward time (runs at most once)."""
    if not _tracing(a):
        return out
    av = value_of(a)

    def vjp(g):
        return _unbroadcast(g * deriv_fn(), av.shape)

    return _make(out, [(a, vjp)])


def sqrt(a):
    av = value_of(a)
    out = np.sqrt(av)
    return _real_unary(a, out, lambda: 0.5 / out)


def exp(a):
    av = value_of(a)
    out = np.exp(av)
    return _real_unary(a, out, lambda: out)


def cos(a):
    av = value_of(a)
    return _real_unary(a, np.cos(av), lambda: -np.sin(av))


def sin(a):
    av = value_of(a)
    return _real_unary(a, np.sin(av), lambda: np.cos(av))


def tanh(a):
    av = value_of(a)
    out = np.tanh(av)
    return _real_unary(a, out, lambda: 1.0 - out * out)


def relu(a):
    av = value_of(a)
    mask = (av > 0).astype(av.dtype)
    return _real_unary(a, av * mask, lambda: mask)


def square(a):
    return mul(a, a)


# ---------------------------------------------------------------------------
# reductions / shape ops


def _expand_reduced(g, shape, axis, keepdims):
    g = np.asarray(g)
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def total_sum(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _tracing(a):
        return out

    def vjp(g):
        return _expand_reduced(g, av.shape, axis, keepdims).copy()

    return _make(out, [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    if not _tracing(a):
        return out
    n = av.size / out.size

    def vjp(g):
        return _expand_reduced(np.asarray(g) / n, av.shape, axis, keepdims).copy()

    return _make(out, [(a, vjp)])


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not _tracing(a):
        return out
    return _make(out, [(a, lambda g: np.asarray(g).reshape(av.shape))])


def concat(items, axis=0):
    vals = [value_of(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    if not _tracing(*items):
        return out
    offsets = np.cumsum([0] + [v.shape[axis] for v in vals])
    pairs = []
    for i, x in enumerate(items):
        if not isinstance(x, Node):
            continue
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * out.ndim
            index[axis] = slice(lo, hi)
            return np.ascontiguousarray(np.asarray(g)[tuple(index)])

        pairs.append((x, vjp))
    parents = tuple(x for x, _ in pairs)
    vjps = tuple(v for _, v in pairs)
    return Node(out, parents, vjps)


def pick(a, key):
    """Basic-indexing slice a[key] with a zero-scatter adjoint."""
    av = value_of(a)
    out = av[key]
    if not _tracing(a):
        return out

    def vjp(g):
        buf = np.zeros_like(av)
        buf[key] = g
        return buf

    return _make(out, [(a, vjp)])


# ---------------------------------------------------------------------------
# structured linear ops


def apply_rowcol(x, mr, mc):
    """mr @ x @ mc.T over the last two axes; mr/mc are constant real matrices."""
    xv = value_of(x)
    out = T.apply_rowcol(xv, mr, mc)
    if not _tracing(x):
        return out
    rdt = np.float32 if out.dtype in (np.complex64, np.float32) else np.float64
    mrt, mct = mr.T.astype(rdt), mc.astype(rdt)

    def vjp(g):
        return np.matmul(np.matmul(mrt, np.asarray(g)), mct)

    return _make(out, [(x, vjp)])


def avg_pool2(x, factor):
    xv = value_of(x)
    h, w = xv.shape[-2], xv.shape[-1]
    from .errors import DimensionError
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2: dims {(h, w)} not divisible by {factor}")
    return apply_rowcol(x, T.pool_matrix(h, factor), T.pool_matrix(w, factor))


def upsample_bilinear(x, factor):
    xv = value_of(x)
    return apply_rowcol(x, T.bilinear_matrix(xv.shape[-2], factor),
                        T.bilinear_matrix(xv.shape[-1], factor))


def _same_pads(size, stride, k):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


def _im2col(xp, k, stride, ho, wo):
    b, c = xp.shape[0], xp.shape[1]
    sb, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, (b, c, ho, wo, k, k), (sb, sc, sh * stride, sw * stride, sh, sw))
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)


def conv2d(x, kernel, bias=None, stride=1):
    """Cross-correlation with "same" zero padding over (B, C, H, W) inputs.

    kernel is (O, C, k, k); complex inputs follow the four-real-convolution
    decomposition implicitly through complex matmul.
    """
    xv, kv = value_of(x), value_of(kernel)
    bv = value_of(bias) if bias is not None else None
    from .errors import DimensionError
    if xv.shape[1] != kv.shape[1]:
        raise DimensionError(f"conv2d: {xv.shape[1]} input channels vs kernel {kv.shape[1]}")
    k = kv.shape[2]
    b, _, h, w = xv.shape
    o = kv.shape[0]
    pt, pb, ho = _same_pads(h, stride, k)
    pl, pr, wo = _same_pads(w, stride, k)
    xp = np.pad(xv, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, k, stride, ho, wo)
    kf = kv.reshape(o, -1)
    y = cols @ kf.T
    if bv is not None:
        y = y + bv
    out = y.transpose(0, 2, 1).reshape(b, o, ho, wo)
    if not _tracing(x, kernel, bias):
        return out
    oc = np.iscomplexobj(out)
    pairs = []
    if isinstance(x, Node):
        def vjp_x(g):
            gp = np.asarray(g).reshape(b, o, ho * wo).transpose(0, 2, 1)
            gcols = gp @ np.conjugate(kf)
            g6 = gcols.reshape(b, ho, wo, xv.shape[1], k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((b, xv.shape[1], h + pt + pb, w + pl + pr), dtype=g6.dtype)
            for ki in range(k):
                for kj in range(k):
                    gxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                        g6[:, :, :, :, ki, kj]
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
            return _convert(gx, xv, oc)

        pairs.append((x, vjp_x))
    if isinstance(kernel, Node):
        def vjp_k(g):
            # conj(g)^T @ cols, conjugated back: avoids conjugating the big
            # patch matrix (kept alive by this closure, built once in forward)
            g2 = np.asarray(g).reshape(b, o, ho * wo).transpose(0, 2, 1) \
                .reshape(b * ho * wo, o)
            c2 = cols.reshape(b * ho * wo, -1)
            if oc:
                gk = np.conjugate(np.conjugate(g2).T @ c2).reshape(kv.shape)
            else:
                gk = (g2.T @ c2).reshape(kv.shape)
            return _convert(gk, kv, oc)

        pairs.append((kernel, vjp_k))
    if bias is not None and isinstance(bias, Node):
        def vjp_b(g):
            gb = np.asarray(g).sum(axis=(0, 2, 3))
            return _convert(gb, bv, oc)

        pairs.append((bias, vjp_b))
    return _make(out, pairs)


def unfold(x, size, stride):
    """Sliding windows over (B, H, W): returns (B, P, size*size) patches."""
    xv = value_of(x)
    b, h, w = xv.shape
    ph = (h - size) // stride + 1
    pw = (w - size) // stride + 1
    sb, sh, sw = xv.strides
    windows = np.lib.stride_tricks.as_strided(
        xv, (b, ph, pw, size, size), (sb, sh * stride, sw * stride, sh, sw))
    out = windows.reshape(b, ph * pw, size * size)  # reshape copies the strided view
    if not _tracing(x):
        return out

    def vjp(g):
        g5 = np.asarray(g).reshape(b, ph, pw, size, size)
        gx = np.zeros_like(xv)
        for ki in range(size):
            for kj in range(size):
                gx[:, ki:ki + stride * ph:stride, kj:kj + stride * pw:stride] += \
                    g5[:, :, :, ki, kj]
        return gx

    return _make(out, [(x, vjp)])


# ---------------------------------------------------------------------------
# forward / backward / checking


def check_scalar_loss(node):
    val = np.asarray(value_of(node))
    if np.iscomplexobj(val):
        raise ContractError("loss must be real-valued, got complex output")
    if val.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {val.shape}")
    return float(val)


def forward(fn, params: dict):
    """Run fn over leaf Nodes built from params; returns (loss value, tape).

    The tape handle is the loss Node itself: the recorded graph hangs off its
    parents in creation (topological) order.
    """
    leaves = {k: Node(v, name=k) for k, v in params.items()}
    out = fn(leaves)
    loss = check_scalar_loss(out)
    return loss, out


def backward(loss_node, wrt=None):
    """Cotangents for every leaf reachable from loss_node.

    Returns {leaf_name: grad}; unreachable leaves from `wrt` get zeros.
    """
    check_scalar_loss(loss_node)
    seen = {id(loss_node)}
    order = []
    stack = [loss_node]
    while stack:
        node = stack.pop()
        order.append(node)
        for p in node.parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    order.sort(key=lambda n: n.order, reverse=True)
    rdt = np.float64 if value_of(loss_node).dtype == np.float64 else np.float32
    grads = {id(loss_node): np.asarray(1.0, dtype=rdt)}
    leaf_grads = {}
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None and not node.parents:
            leaf_grads[node.name] = g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    if wrt is not None:
        for name, val in wrt.items():
            if name not in leaf_grads:
                leaf_grads[name] = np.zeros_like(np.asarray(val))
    return leaf_grads


def value_and_grad(fn, params: dict):
    loss, node = forward(fn, params)
    return loss, backward(node, wrt=params)


def _promote64(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        v = np.asarray(v)
        out[k] = v.astype(np.complex128 if np.iscomplexobj(v) else np.float64)
    return out


def grad_check(fn, params: dict, h: float = 1e-5, seed: int = 0,
               max_components: int = 1000, rel_floor: float = 1e-8) -> float:
    """Max relative error of backward() against central finite differences.

    Promotes everything to 64-bit; checks every real/imag component, or a
    seeded random subsample when the total exceeds max_components.
    """
    params = _promote64(params)
    _, grads = value_and_grad(fn, params)

    components = []
    for name, v in params.items():
        reals = 2 if np.iscomplexobj(v) else 1
        for flat in range(v.size):
            for part in range(reals):
                components.append((name, flat, part))
    rng = np.random.default_rng(seed)
    if len(components) > max_components:
        idx = rng.choice(len(components), size=max_components, replace=False)
        components = [components[i] for i in sorted(idx)]

    def eval_loss(p):
        return float(value_of(fn(p)))

    worst = 0.0
    for name, flat, part in components:
        base = params[name]
        view = base.reshape(-1).view(np.float64)
        pos = flat * (2 if np.iscomplexobj(base) else 1) + part
        orig = view[pos]
        view[pos] = orig + h
        fp = eval_loss(params)
        view[pos] = orig - h
        fm = eval_loss(params)
        view[pos] = orig
        fd = (fp - fm) / (2 * h)
        g = grads[name].reshape(-1)[flat]
        if np.iscomplexobj(base):
            analytic = 2 * (g.real if part == 0 else g.imag)
        else:
            analytic = float(g)
        err = abs(fd - analytic) / max(abs(fd), abs(analytic), rel_floor)
        worst = max(worst, err)
    return worst
