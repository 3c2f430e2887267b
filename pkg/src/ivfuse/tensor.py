"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a C-contiguous float64 ndarray. Operations record a
dynamic tape (parent links plus a VJP closure) whenever any input requires
gradients and grad mode is enabled; ``Tensor.backward()`` walks the tape in
reverse topological order, accumulates gradients additively into leaves, and
frees the tape. The op set is the minimum the fusion network and its losses
need; image tensors use NCHW layout and kernels OIHW.

Concurrency: tensors are treated as immutable once built, so inference over
a frozen parameter set is safe from many workers; anything that mutates
parameters (optimizer steps, grad zeroing) needs exclusive access. No
interior locking is provided.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Operands have shapes the op cannot accept."""


class NonFiniteError(FloatingPointError):
    """A value became NaN or infinite."""


class GraphError(RuntimeError):
    """Backward called on an unsuitable tensor or a freed graph."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: produced or received non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"

    # -- construction of op results ------------------------------------

    @staticmethod
    def _result(op: str, data: np.ndarray, parents, vjp, check: bool = True):
        if check:
            _check_finite(data, op)
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = track
        out.grad = None
        out._parents = tuple(parents) if track else ()
        out._vjp = vjp if track else None
        out._op = op
        return out

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward --------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable leaf that requires grad.

        The loss must be a scalar with a retained graph. Gradients
        accumulate additively across backward calls on different graphs;
        this graph is freed afterwards and cannot be replayed.
        """
        if self.data.size != 1:
            raise GraphError(f"backward: tensor has {self.data.size} elements, expected a scalar")
        if self._op == "freed":
            raise GraphError("backward: graph already freed by a previous backward")
        if self._vjp is None and not self.requires_grad:
            raise GraphError("backward: no retained computation graph")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p._vjp is not None or p.requires_grad):
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not (parent._vjp is not None or parent.requires_grad):
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
                node._vjp = None
                node._parents = ()
                node._op = "freed"
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
        self._op = "freed"

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result("mul", out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return Tensor._result("neg", -a.data, (a,), lambda g: (-g,), check=False)


def pow_(a: Tensor, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._result("pow", out, (a,), vjp)


def abs_(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (g * np.sign(a.data),)

    return Tensor._result("abs", np.abs(a.data), (a,), vjp, check=False)


def max_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum. Exact ties split the gradient evenly."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.maximum(a.data, b.data)

    def vjp(g):
        wa = np.where(a.data > b.data, 1.0, np.where(a.data == b.data, 0.5, 0.0))
        return _unbroadcast(g * wa, a.shape), _unbroadcast(g * (1.0 - wa), b.shape)

    return Tensor._result("max_elementwise", out, (a, b), vjp, check=False)


# -- activations / normalization --------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return Tensor._result("relu", np.maximum(a.data, 0.0), (a,), vjp, check=False)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._result("sigmoid", out, (a,), vjp, check=False)


def gelu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return Tensor._result("gelu", out, (a,), vjp, check=False)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def vjp(g):
        tmp = g * out
        inner = tmp.sum(axis=axis, keepdims=True)
        np.subtract(g, inner, out=tmp)
        tmp *= out
        return (tmp,)

    return Tensor._result("softmax", out, (a,), vjp, check=False)


def layer_norm(x: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, scale, bias = _as_tensor(x), _as_tensor(scale), _as_tensor(bias)
    d = x.shape[-1]
    if scale.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: scale/bias must have shape ({d},), got {scale.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gscale = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gh = g * scale.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gscale, gbias

    return Tensor._result("layer_norm", out, (x, scale, bias), vjp)


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from e

    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor._result("reshape", np.ascontiguousarray(out), (a,), vjp, check=False)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return Tensor._result(
        "transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), vjp, check=False
    )


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with ints, slices, and tuples thereof."""
    a = _as_tensor(a)
    out = a.data[key]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return Tensor._result("slice", np.ascontiguousarray(out), (a,), vjp, check=False)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        same = list(t.shape)
        want = list(ref)
        if len(same) != len(want):
            raise ShapeError(f"concat: rank mismatch {ref} vs {t.shape}")
        same[axis] = want[axis] = 0
        if same != want:
            raise ShapeError(f"concat: non-axis dims differ, {ref} vs {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return Tensor._result("concat", out, tensors, vjp, check=False)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result("reduce_sum", np.asarray(out), (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = float(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1.0
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return Tensor._result("reduce_mean", np.asarray(out), (a,), vjp)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking rules on leading batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result("matmul", out, (a, b), vjp)


# -- padding and convolution --------------------------------------------------


def _pair(v):
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def pad2d(a: Tensor, pad, mode: str = "zero") -> Tensor:
    """Pad the last two axes by (ph, pw) per side with zeros or reflection."""
    a = _as_tensor(a)
    ph, pw = _pair(pad)
    if ph == 0 and pw == 0:
        return a
    h, w = a.shape[-2], a.shape[-1]
    if mode == "zero":
        spec = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
        out = np.pad(a.data, spec)

        def vjp(g):
            sl = (Ellipsis, slice(ph, ph + h), slice(pw, pw + w))
            return (np.ascontiguousarray(g[sl]),)

    elif mode == "reflect":
        if ph >= h or pw >= w:
            raise ShapeError(f"pad2d: reflect pad ({ph},{pw}) too large for ({h},{w})")
        iy = np.concatenate([np.arange(ph, 0, -1), np.arange(h), np.arange(h - 2, h - 2 - ph, -1)])
        ix = np.concatenate([np.arange(pw, 0, -1), np.arange(w), np.arange(w - 2, w - 2 - pw, -1)])
        out = a.data[..., iy[:, None], ix[None, :]]

        def vjp(g):
            ga = np.zeros_like(a.data)
            flat_g = g.reshape(-1, g.shape[-2], g.shape[-1])
            flat = ga.reshape(-1, h, w)
            for i in range(flat.shape[0]):
                np.add.at(flat[i], (iy[:, None], ix[None, :]), flat_g[i])
            return (flat.reshape(a.shape),)

    else:
        raise ValueError(f"pad2d: unknown mode {mode!r}")
    return Tensor._result("pad2d", np.ascontiguousarray(out), (a,), vjp, check=False)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2-D cross-correlation: NCHW input, OIHW kernel, zero padding."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need NCHW input and OIHW kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    hp, wp = h + 2 * ph, wd + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")

    xp = np.pad(x.data, [(0, 0), (0, 0), (ph, ph), (pw, pw)]) if (ph or pw) else x.data
    acc = np.zeros((n, ho, wo, o))
    for i in range(kh):
        for j in range(kw):
            view = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
            acc += np.tensordot(view, w.data[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(np.moveaxis(acc, -1, 1))
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                view = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
                gw[:, :, i, j] = np.tensordot(g, view, axes=([0, 2, 3], [0, 2, 3]))
                spread = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += np.moveaxis(spread, -1, 1)
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        if bias is None:
            return np.ascontiguousarray(gx), gw
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 2, 3))

    return Tensor._result("conv2d", out, parents, vjp)


# -- generic dispatch ---------------------------------------------------------

_OPS = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "concat": concat,
    "softmax": softmax,
    "sigmoid": sigmoid,
    "relu": relu,
    "gelu": gelu,
    "layer_norm": layer_norm,
    "reshape": reshape,
    "transpose": transpose,
    "slice": slice_,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "max_elementwise": max_elementwise,
    "abs": abs_,
    "pow": pow_,
    "pad2d": pad2d,
}


def forward_op(op_kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch ``op_kind`` over ``inputs`` with op-specific ``attrs``.

    ``concat`` takes its tensors as the input list; every other op takes
    positional tensors followed by keyword attributes.
    """
    if op_kind not in _OPS:
        raise KeyError(f"forward_op: unknown op kind {op_kind!r}")
    fn = _OPS[op_kind]
    attrs = attrs or {}
    if op_kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


OP_KINDS = tuple(_OPS)
