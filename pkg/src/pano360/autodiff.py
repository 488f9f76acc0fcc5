"""Reverse-mode autodiff over float32 numpy arrays.

A small tape: every op computes its value eagerly and, when any input
requires gradients, registers a closure that scatters the output gradient
back to its inputs. Convolutions run as im2col plus batched BLAS matmul,
which is what keeps CPU training inside its time budget.

Two properties the rest of the package leans on:

* determinism: identical inputs give bit-identical outputs run to run;
* column-shift equivariance: with circular horizontal padding, rolling the
  width axis of every input commutes bit-exactly with every op here. The
  per-channel norm achieves this by reducing per-column partial sums in
  sorted order, which is invariant under column permutations.
"""

from __future__ import annotations

import enum
import math
from contextlib import contextmanager

import numpy as np


class PadMode(enum.Enum):
    """Horizontal padding behavior for spatial convs. Vertical is always zeros."""

    ZEROS = "zeros"
    CIRCULAR = "circular"


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording (sampling and finite-difference evals)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones((), np.float32)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # release the graph as we go so training steps do not leak
                node._backward = None
                node._parents = ()

    # arithmetic sugar; everything routes through the op functions below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TypeError("only division by a python scalar is supported")
        return mul(self, 1.0 / float(s))

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named leaf tensor that always wants gradients."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True  # unaffected by no_grad at creation time
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float32))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def silu(x: Tensor) -> Tensor:
    s = np.negative(x.data)
    with np.errstate(over="ignore"):
        np.exp(s, out=s)
    s += 1.0
    np.reciprocal(s, out=s)

    def bwd(g):
        t = 1.0 - s
        t *= x.data
        t += 1.0
        t *= s
        t *= g
        _acc(x, t)

    return _make(x.data * s, (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bwd(g):
        _acc(x, g.reshape(x.data.shape))

    return _make(x.data.reshape(shape), (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    def bwd(g):
        _acc(x, np.full(x.data.shape, np.float32(g), np.float32))

    return _make(np.float32(x.data.sum(dtype=np.float64)), (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size

    def bwd(g):
        _acc(x, np.full(x.data.shape, np.float32(g / n), np.float32))

    return _make(np.float32(x.data.mean(dtype=np.float64)), (x,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """(batch, d) @ (d, m) + (m,)."""
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bwd(g):
        if b is not None and b.requires_grad:
            _acc(b, g.sum(axis=0))
        if w.requires_grad:
            _acc(w, x.data.T @ g)
        if x.requires_grad:
            _acc(x, g @ w.data.T)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


# -- spatial convolution ------------------------------------------------------

def _pad_hw(x5: np.ndarray, ph: int, pw: int, pad: PadMode) -> np.ndarray:
    if pad is PadMode.CIRCULAR and pw:
        x5 = np.concatenate([x5[..., -pw:], x5, x5[..., :pw]], axis=4)
        return np.pad(x5, ((0, 0), (0, 0), (0, 0), (ph, ph), (0, 0)))
    return np.pad(x5, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw)))


def _unpad_hw(gxp: np.ndarray, ph: int, pw: int, pad: PadMode, H: int, W: int) -> np.ndarray:
    core = gxp[:, :, :, ph:ph + H, pw:pw + W]
    if pad is PadMode.CIRCULAR and pw:
        core = core.copy()
        core[..., :pw] += gxp[:, :, :, ph:ph + H, W + pw:W + 2 * pw]
        core[..., W - pw:] += gxp[:, :, :, ph:ph + H, :pw]
    return core


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    B, C, F, _, _ = xp.shape
    cols = np.empty((B, C, kh * kw, F, Ho, Wo), xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[:, :, :, i:i + s * (Ho - 1) + 1:s,
                                        j:j + s * (Wo - 1) + 1:s]
    return cols.reshape(B, C * kh * kw, F * Ho * Wo)


def _batched_outer(g3: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """sum_b g3[b] @ cols[b].T without tensordot's full-size transpose copies."""
    acc = g3[0] @ cols[0].T
    for b in range(1, g3.shape[0]):
        acc += g3[b] @ cols[b].T
    return acc


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    B, C, F, _, _ = xp_shape
    g = gcols.reshape(B, C, kh * kw, F, Ho, Wo)
    gxp = np.zeros(xp_shape, np.float32)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, :, i:i + s * (Ho - 1) + 1:s,
                j:j + s * (Wo - 1) + 1:s] += g[:, :, i * kw + j]
    return gxp


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: PadMode = PadMode.ZEROS) -> Tensor:
    """Same-padded 2D conv applied per frame.

    x: (B, C, F, H, W); kernel: (C_out, C_in, 1, kh, kw) with kh, kw odd;
    output: (B, C_out, F, ceil(H/stride), ceil(W/stride)). Frames ride along
    as extra GEMM columns, so no layout shuffling is needed.
    """
    B, C, F, H, W = x.data.shape
    O, Ck, kf, kh, kw = kernel.data.shape
    if kf != 1:
        raise ValueError(f"conv2d kernel frames extent must be 1, got {kf}")
    if Ck != C:
        raise ValueError(f"kernel expects {Ck} input channels, input has {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")

    ph, pw = kh // 2, kw // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    M = F * Ho * Wo
    xp = _pad_hw(x.data, ph, pw, pad)
    cols = _im2col(xp, kh, kw, stride, Ho, Wo)
    k2 = kernel.data.reshape(O, C * kh * kw)
    if pad is PadMode.CIRCULAR:
        # one GEMM per image column: a column shift of the input then only
        # permutes independent identical-shape GEMM calls, which keeps
        # conv(shift(x)) == shift(conv(x)) bit-exact. (A single flat GEMM is
        # faster but its SIMD edge kernels round tail columns differently.)
        ct = cols.reshape(B, C * kh * kw, F * Ho, Wo).transpose(0, 3, 1, 2)
        out = np.matmul(k2, np.ascontiguousarray(ct))        # (B, Wo, O, F*Ho)
        out = np.ascontiguousarray(out.transpose(0, 2, 3, 1)).reshape(B, O, M)
    else:
        out = np.matmul(k2, cols)  # (B, O, F*Ho*Wo)
    if bias is not None:
        out += bias.data.reshape(1, O, 1)
    out5 = out.reshape(B, O, F, Ho, Wo)
    xp_shape = xp.shape

    def bwd(g):
        g3 = g.reshape(B, O, M)
        if bias is not None and bias.requires_grad:
            _acc(bias, g3.sum(axis=(0, 2)))
        if kernel.requires_grad:
            _acc(kernel, _batched_outer(g3, cols).reshape(kernel.data.shape))
        if x.requires_grad:
            gcols = np.matmul(k2.T, g3)
            gxp = _col2im(gcols, xp_shape, kh, kw, stride, Ho, Wo)
            _acc(x, _unpad_hw(gxp, ph, pw, pad, H, W))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out5, parents, bwd)


def conv_temporal(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                  pad: PadMode = PadMode.ZEROS) -> Tensor:
    """1D conv along the frames axis, zero-padded. kernel: (C_out, C_in, kt, 1, 1).

    pad does not change the math (frames are always zero-padded); CIRCULAR
    selects the column-batched GEMM layout so that sampling with circular
    spatial convs stays bit-exact under column shifts end to end.
    """
    B, C, F, H, W = x.data.shape
    O, Ck, kt, kh, kw = kernel.data.shape
    if kh != 1 or kw != 1:
        raise ValueError(f"temporal kernel spatial extents must be 1, got {kh}x{kw}")
    if Ck != C:
        raise ValueError(f"kernel expects {Ck} input channels, input has {C}")
    if kt % 2 == 0:
        raise ValueError(f"temporal extent must be odd, got {kt}")

    pf = kt // 2
    M = F * H * W
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (0, 0), (0, 0)))
    # im2col along frames, then one GEMM over the fused (C, kt) axis; per-tap
    # skinny GEMMs are an order of magnitude slower at these widths
    cols = np.empty((B, C, kt, F, H, W), np.float32)
    for tap in range(kt):
        cols[:, :, tap] = xp[:, :, tap:tap + F]
    k2 = kernel.data.reshape(O, C * kt)
    if pad is PadMode.CIRCULAR:
        ct = cols.reshape(B, C * kt, F * H, W).transpose(0, 3, 1, 2)
        out = np.matmul(k2, np.ascontiguousarray(ct))            # (B, W, O, F*H)
        out = np.ascontiguousarray(out.transpose(0, 2, 3, 1)).reshape(B, O, M)
    else:
        out = np.matmul(k2, cols.reshape(B, C * kt, M))
    if bias is not None:
        out += bias.data.reshape(1, O, 1)
    out5 = out.reshape(B, O, F, H, W)

    def bwd(g):
        g3 = g.reshape(B, O, M)
        if bias is not None and bias.requires_grad:
            _acc(bias, g3.sum(axis=(0, 2)))
        if kernel.requires_grad:
            gk = _batched_outer(g3, cols.reshape(B, C * kt, M))
            _acc(kernel, gk.reshape(kernel.data.shape))
        if x.requires_grad:
            gcols = np.matmul(k2.T, g3).reshape(B, C, kt, F, H, W)
            gxp = np.zeros_like(xp)
            for tap in range(kt):
                gxp[:, :, tap:tap + F] += gcols[:, :, tap]
            _acc(x, gxp[:, :, pf:pf + F])

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out5, parents, bwd)


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """Space-to-depth: (B, C, F, H, W) -> (B, C*r*r, F, H/r, W/r)."""
    B, C, F, H, W = x.data.shape
    r = int(factor)
    if r < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if H % r or W % r:
        raise ValueError(f"spatial extents {H}x{W} not divisible by factor {r}")
    d = x.data.reshape(B, C, F, H // r, r, W // r, r)
    out = d.transpose(0, 1, 4, 6, 2, 3, 5).reshape(B, C * r * r, F, H // r, W // r)

    def bwd(g):
        gg = g.reshape(B, C, r, r, F, H // r, W // r)
        _acc(x, np.ascontiguousarray(gg.transpose(0, 1, 4, 5, 2, 6, 3)).reshape(B, C, F, H, W))

    return _make(np.ascontiguousarray(out), (x,), bwd)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Depth-to-space, the exact inverse of pixel_unshuffle."""
    B, C, F, H, W = x.data.shape
    r = int(factor)
    if r < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if C % (r * r):
        raise ValueError(f"channels {C} not divisible by factor^2 = {r * r}")
    d = x.data.reshape(B, C // (r * r), r, r, F, H, W)
    out = d.transpose(0, 1, 4, 5, 2, 6, 3).reshape(B, C // (r * r), F, H * r, W * r)

    def bwd(g):
        gg = g.reshape(B, C // (r * r), F, H, r, W, r)
        _acc(x, np.ascontiguousarray(gg.transpose(0, 1, 4, 6, 2, 3, 5)).reshape(B, C, F, H, W))

    return _make(np.ascontiguousarray(out), (x,), bwd)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each (batch, channel) slice over (frames, height, width).

    Statistics are built from per-column partial sums reduced in sorted
    order, so a circular column shift of the input shifts the output
    bit-exactly (the partials permute; their sorted reduction does not).
    """
    xd = x.data
    B, C, F, H, W = xd.shape
    n = F * H * W
    # (B, C, W) partials accumulated in f64, fixed order inside a column
    p1 = np.einsum("bcfhw->bcw", xd, dtype=np.float64)
    p2 = np.einsum("bcfhw,bcfhw->bcw", xd, xd, dtype=np.float64)
    s1 = np.sort(p1, axis=-1).sum(axis=-1)
    s2 = np.sort(p2, axis=-1).sum(axis=-1)
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    inv = 1.0 / np.sqrt(var + eps)
    mean32 = mean.astype(np.float32)[:, :, None, None, None]
    inv32 = inv.astype(np.float32)[:, :, None, None, None]
    xhat = (xd - mean32) * inv32
    gbc = gamma.data.reshape(1, C, 1, 1, 1)
    out = gbc * xhat + beta.data.reshape(1, C, 1, 1, 1)

    def bwd(g):
        if gamma.requires_grad:
            _acc(gamma, (g * xhat).sum(axis=(0, 2, 3, 4)))
        if beta.requires_grad:
            _acc(beta, g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            gh = g * gbc
            m1 = gh.mean(axis=(2, 3, 4), keepdims=True, dtype=np.float64).astype(np.float32)
            m2 = (gh * xhat).mean(axis=(2, 3, 4), keepdims=True, dtype=np.float64).astype(np.float32)
            _acc(x, inv32 * (gh - m1 - xhat * m2))

    return _make(out, (x, gamma, beta), bwd)


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, F, H, W = x.data.shape
    out = x.data.repeat(2, axis=3).repeat(2, axis=4)

    def bwd(g):
        _acc(x, g.reshape(B, C, F, H, 2, W, 2).sum(axis=(4, 6)))

    return _make(out, (x,), bwd)


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in), the package-wide default initializer."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
