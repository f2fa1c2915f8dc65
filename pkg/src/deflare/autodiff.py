"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is recorded implicitly: every tensor produced by an
operation keeps references to its parent tensors together with one
vector-Jacobian callback per parent.  ``backward`` replays the recording in
reverse topological order and accumulates gradients on every tensor in the
chain, so after a call every ``requires_grad`` leaf reachable from the loss
carries a ``.grad`` of matching shape.

Conventions used throughout the package:

* feature maps are ``(H, W, C)``, sequences ``(..., L, C)``;
* everything is float64, row-major;
* broadcasting is restricted on purpose: binary elementwise ops accept
  equal shapes or one scalar operand, nothing else.  Ops with a documented
  broadcast (``linear`` bias, ``layer_norm`` affine) handle it explicitly.

Tensors are treated as immutable once built.  Optimizers rebind ``.data``
between steps instead of writing through it, which keeps recorded graphs
valid for the duration of a forward/backward pair.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DomainError, EvaluationError, ShapeError

_grad_enabled = True
_debug_finite = os.environ.get("DEFLARE_DEBUG", "") == "1"


def set_debug_finite(flag: bool) -> None:
    """Toggle per-op finiteness assertions (slow; for tests and debugging)."""
    global _debug_finite
    _debug_finite = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 ndarray plus its position in the recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars are accepted, full broadcast is not.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    return _wrap(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable]) -> Tensor:
    if _debug_finite and not np.all(np.isfinite(data)):
        raise EvaluationError("primitive op produced non-finite values")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d tensor over the recorded graph.

    The loss must be a scalar.  The traversed portion of the graph is
    consumed: parent links are cleared so buffers captured by callbacks are
    released and a second call on the same loss is a no-op seed.
    """
    if loss.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for p, vjp in zip(node._parents, node._vjps):
            if not p.requires_grad:
                continue
            contrib = vjp(g)
            p.grad = contrib if p.grad is None else p.grad + contrib
        node._parents = ()
        node._vjps = ()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def _binary_out_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(
        f"{name}: operand shapes {a.shape} and {b.shape} differ and neither is scalar"
    )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo the scalar broadcast in a binary op's backward pass.
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        (lambda g: _reduce_to(g, a.shape), lambda g: _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        (lambda g: _reduce_to(g, a.shape), lambda g: _reduce_to(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_out_shape(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        (
            lambda g: _reduce_to(g * b.data, a.shape),
            lambda g: _reduce_to(g * a.data, b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), (lambda g: -g,))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a plain (non-learnable) python scalar."""
    s = float(s)
    return _make(a.data * s, (a,), (lambda g: g * s,))


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), (lambda g: g * out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Overflow-safe logistic: exp of a non-positive argument only.
    t = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), (lambda g: g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), (lambda g: g * _sigmoid(a.data),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise."""
    s = _sigmoid(a.data)
    out = a.data * s
    return _make(out, (a,), (lambda g: g * (s + a.data * s * (1.0 - s)),))


def clip01(a: Tensor) -> Tensor:
    """Clamp into [0, 1].

    The gradient is the subgradient: 1 inside the interval (endpoints
    included), 0 outside.
    """
    out = np.clip(a.data, 0.0, 1.0)
    mask = (a.data >= 0.0) & (a.data <= 1.0)
    return _make(out, (a,), (lambda g: g * mask,))


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Name-dispatched elementwise op; thin front over the functions above."""
    unary = {"exp": texp, "sigmoid": sigmoid, "softplus": softplus, "clip01": clip01, "abs": tabs}
    binary = {"add": add, "sub": sub, "mul": mul}
    if op in unary:
        if b is not None:
            raise ContractError(f"elementwise {op!r} is unary")
        return unary[op](a)
    if op in binary:
        if b is None:
            raise ContractError(f"elementwise {op!r} needs two operands")
        return binary[op](a, b)
    raise ConfigError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _make(out, (a,), (vjp,))


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), (lambda g: g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), (lambda g: g.transpose(inv),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)
    vjps = [
        (lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(tensors))
    ]
    return _make(data, tuple(tensors), tuple(vjps))


def take_index(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (inverse of ``stack`` per element)."""
    out = np.take(a.data, index, axis=axis)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return full

    return _make(out, (a,), (vjp,))


def tile_leading(a: Tensor, reps: int) -> Tensor:
    """Repeat the whole tensor ``reps`` times along a new leading axis."""
    out = np.broadcast_to(a.data[None], (reps,) + a.shape).copy()
    return _make(out, (a,), (lambda g: g.sum(axis=0),))


def permute_rows(a: Tensor, perm: np.ndarray, inv: np.ndarray) -> Tensor:
    """Reorder the second-to-last axis: ``out[..., p, :] = a[..., perm[p], :]``.

    ``perm`` must be a permutation and ``inv`` its inverse; both are plain
    index arrays, not differentiated.
    """
    L = a.shape[-2]
    if perm.shape != (L,):
        raise ShapeError(f"permute_rows: permutation of length {perm.shape} on axis of {L}")
    out = a.data[..., perm, :]
    return _make(out, (a,), (lambda g: g[..., inv, :],))


def gather_pad(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``a`` (shape ``(L, C)``) into ``(S, Ls, C)``.

    ``index`` is int64 of shape ``(S, Ls)``; entries of ``-1`` produce zero
    rows and receive no gradient.
    """
    if a.data.ndim != 2:
        raise ShapeError(f"gather_pad expects (L, C), got {a.shape}")
    safe = np.where(index >= 0, index, 0)
    out = a.data[safe]
    out[index < 0] = 0.0
    L = a.shape[0]

    def vjp(g):
        gx = np.zeros((L, a.shape[1]), dtype=np.float64)
        valid = index >= 0
        np.add.at(gx, index[valid], g[valid])
        return gx

    return _make(out, (a,), (vjp,))


def scatter_cover(a: Tensor, index: np.ndarray, length: int) -> Tensor:
    """Inverse of :func:`gather_pad` for an exact disjoint cover.

    Every row index in ``0..length-1`` must appear exactly once among the
    non-negative entries of ``index``; ``-1`` rows are discarded.
    """
    valid = index >= 0
    targets = index[valid]
    if targets.size != length or np.unique(targets).size != length:
        raise ContractError(
            f"scatter_cover: indices cover {np.unique(targets).size} of {length} rows"
        )
    out = np.empty((length, a.shape[-1]), dtype=np.float64)
    out[targets] = a.data[valid]

    def vjp(g):
        gs = np.zeros(a.shape, dtype=np.float64)
        gs[valid] = g[targets]
        return gs

    return _make(out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# affine and normalization layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``y[..., o] = x[..., i] w[i, o] + b[o]``."""
    if w.data.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {w.shape}")
    cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"linear: input last axis {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"linear: bias shape {b.shape}, expected ({cout},)")

    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, cin)
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data
    out = y2.reshape(lead + (cout,))

    def vjp_x(g):
        return (g.reshape(-1, cout) @ w.data.T).reshape(x.shape)

    def vjp_w(g):
        return x2.T @ g.reshape(-1, cout)

    def vjp_b(g):
        return g.reshape(-1, cout).sum(axis=0)

    if b is None:
        return _make(out, (x, w), (vjp_x, vjp_w))
    return _make(out, (x, w, b), (vjp_x, vjp_w, vjp_b))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel (last) axis with population variance."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must both be ({c},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp_x(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    def vjp_gamma(g):
        return (g * xhat).reshape(-1, c).sum(axis=0)

    def vjp_beta(g):
        return g.reshape(-1, c).sum(axis=0)

    return _make(out, (x, gamma, beta), (vjp_x, vjp_gamma, vjp_beta))


# ---------------------------------------------------------------------------
# 2-D spatial ops on (H, W, C) maps
# ---------------------------------------------------------------------------

def _same_pads(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)  # ceil
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation) on an ``(H, W, C)`` map.

    A 4-D weight ``(kh, kw, Cin, Cout)`` selects the dense mode, a 3-D
    weight ``(kh, kw, C)`` the depthwise mode (one filter per channel, so
    Cout = Cin by construction).  ``padding`` is ``"same"`` (zero padding,
    output extent ``ceil(extent / stride)``) or ``"valid"``.
    """
    if padding not in ("same", "valid"):
        raise ConfigError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d expects an (H, W, C) input, got {x.shape}")
    depthwise = w.data.ndim == 3
    if depthwise:
        kh, kw, cin = w.shape
        cout = cin
    elif w.data.ndim == 4:
        kh, kw, cin, cout = w.shape
    else:
        raise ShapeError(f"conv2d: weight must be 3-D or 4-D, got {w.shape}")
    h, ww_, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match weight {w.shape}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape}, expected ({cout},)")

    if padding == "same":
        pt, pb = _same_pads(h, kh, stride)
        pl, pr = _same_pads(ww_, kw, stride)
    else:
        pt = pb = pl = pr = 0
        if h < kh or ww_ < kw:
            raise ShapeError(f"conv2d: kernel ({kh}, {kw}) larger than input ({h}, {ww_})")
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)))
    hp, wp = xp.shape[0], xp.shape[1]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if depthwise:
        out = np.zeros((ho, wo, cout), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                out += xp[i:i + stride * ho:stride, j:j + stride * wo:stride] * w.data[i, j]
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
        win = win[::stride, ::stride]  # (ho, wo, Cin, kh, kw)
        out = np.tensordot(win, w.data, axes=([3, 4, 2], [0, 1, 2]))
    if b is not None:
        out = out + b.data

    def vjp_x(g):
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                tap = gxp[i:i + stride * ho:stride, j:j + stride * wo:stride]
                if depthwise:
                    tap += g * w.data[i, j]
                else:
                    tap += g @ w.data[i, j].T
        return gxp[pt:pt + h, pl:pl + ww_]

    def vjp_w(g):
        gw = np.zeros(w.shape, dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                patch = xp[i:i + stride * ho:stride, j:j + stride * wo:stride]
                if depthwise:
                    gw[i, j] = (patch * g).sum(axis=(0, 1))
                else:
                    gw[i, j] = np.tensordot(patch, g, axes=([0, 1], [0, 1]))
        return gw

    def vjp_b(g):
        return g.sum(axis=(0, 1))

    if b is None:
        return _make(out, (x, w), (vjp_x, vjp_w))
    return _make(out, (x, w, b), (vjp_x, vjp_w, vjp_b))


def nearest_upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling of an (H, W, C) map."""
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)
    return _make(out, (x,), (lambda g: g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)),))


def subsample2(x: Tensor) -> Tensor:
    """Keep every second row/column (used by the loss pyramid)."""
    h, w, c = x.shape
    out = x.data[::2, ::2].copy()

    def vjp(g):
        gx = np.zeros((h, w, c), dtype=np.float64)
        gx[::2, ::2] = g
        return gx

    return _make(out, (x,), (vjp,))


def pad_edge2d(x: Tensor, p: int) -> Tensor:
    """Replicate-pad the two spatial axes by ``p`` pixels on each side."""
    h, w, _ = x.shape
    out = np.pad(x.data, ((p, p), (p, p), (0, 0)), mode="edge")
    ih = np.clip(np.arange(-p, h + p), 0, h - 1)
    iw = np.clip(np.arange(-p, w + p), 0, w - 1)

    def vjp(g):
        rows = np.zeros((h, w + 2 * p, x.shape[2]), dtype=np.float64)
        np.add.at(rows, ih, g)
        cols = np.zeros((w, h, x.shape[2]), dtype=np.float64)
        np.add.at(cols, iw, rows.transpose(1, 0, 2))
        return cols.transpose(1, 0, 2)

    return _make(out, (x,), (vjp,))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Compare the recorded gradient of ``f`` at ``x`` with central differences.

    Returns ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|)``.
    ``f`` must be deterministic and produce a finite scalar.
    """
    if not (0.0 < step <= 1e-2):
        raise DomainError(f"grad_check step must be in (0, 1e-2], got {step}")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    y = f(leaf)
    if y.shape != ():
        raise ContractError(f"grad_check expects a scalar-valued f, got shape {y.shape}")
    if not np.isfinite(y.data):
        raise EvaluationError("grad_check: f(x) is not finite")
    backward(y)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            probe = leaf.data.copy().reshape(-1)
            probe[i] = orig + step
            hi = f(Tensor(probe.reshape(x.shape))).item()
            probe[i] = orig - step
            lo = f(Tensor(probe.reshape(x.shape))).item()
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise EvaluationError("grad_check: perturbed evaluation is not finite")
            nflat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
