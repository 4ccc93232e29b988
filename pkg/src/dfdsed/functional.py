"""Differentiable building blocks for the CRNN: convolution, pooling,
normalisation, attention softmax, recurrent layers and the training loss.

All tensors follow the (batch, channel, time, frequency) layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _result, as_tensor, concat, matmul, sigmoid, stack, tanh

IntPair = tuple[int, int]


def _pair(v) -> IntPair:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def conv_output_size(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def same_padding(dilation, kernel=(3, 3)) -> IntPair:
    """Padding that keeps the spatial size for stride 1: d * (k - 1) / 2."""
    dt, df = _pair(dilation)
    kt, kf = _pair(kernel)
    return (dt * (kt - 1) // 2, df * (kf - 1) // 2)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0), dilation=(1, 1)) -> Tensor:
    """2-D cross-correlation with zero padding and kernel dilation.

    ``x`` is (B, Cin, T, F) and ``kernel`` is (Cout, Cin, kt, kf). Dilation
    spreads the kernel taps ``d`` positions apart, so a 3-tap axis with
    dilation d reads offsets {-d, 0, d} around the centre.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    st, sf = _pair(stride)
    pt, pf = _pair(padding)
    dt, df = _pair(dilation)
    if min(dt, df) < 1 or min(st, sf) < 1:
        raise ValueError("stride and dilation must be >= 1")
    if min(pt, pf) < 0:
        raise ValueError("padding must be non-negative")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    B, cin, T, F = x.shape
    cout, kcin, kt, kf = kernel.shape
    if cin != kcin:
        raise ValueError(f"input has {cin} channels but kernel expects {kcin}")
    To = conv_output_size(T, kt, st, pt, dt)
    Fo = conv_output_size(F, kf, sf, pf, df)
    if To <= 0 or Fo <= 0:
        raise ValueError(f"conv2d output would be empty ({To}x{Fo}) for input {T}x{F}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (pf, pf))) if (pt or pf) else x.data
    taps = [(i * dt, j * df) for i in range(kt) for j in range(kf)]
    cols = np.stack(
        [xp[:, :, a:a + st * (To - 1) + 1:st, b:b + sf * (Fo - 1) + 1:sf] for a, b in taps],
        axis=2,
    ).reshape(B, cin * kt * kf, To * Fo)
    w2 = kernel.data.reshape(cout, cin * kt * kf)
    out = np.matmul(w2, cols).reshape(B, cout, To, Fo)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(B, cout, To * Fo)
        gw = None
        if kernel.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(B, cin, kt * kf, To, Fo)
            gxp = np.zeros_like(xp)
            for n, (a, b) in enumerate(taps):
                gxp[:, :, a:a + st * (To - 1) + 1:st, b:b + sf * (Fo - 1) + 1:sf] += gcols[:, :, n]
            gx = gxp[:, :, pt:pt + T, pf:pf + F]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result(out, parents, backward)


def avg_pool2d(x: Tensor, window) -> Tensor:
    wt, wf = _pair(window)
    B, C, T, F = x.shape
    if T % wt or F % wf:
        raise ValueError(f"pool window {(wt, wf)} does not divide input {(T, F)}")
    out = x.data.reshape(B, C, T // wt, wt, F // wf, wf).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g, wt, axis=2), wf, axis=3)
        return (g / (wt * wf),)

    return _result(out, (x,), backward)


def reduce_mean_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"axis {axis} out of range for {x.ndim}-d tensor")
    return x.mean(axis=axis)


def softmax_axis(x: Tensor, axis: int, temperature: float = 1.0) -> Tensor:
    """exp(x / temperature) normalised along ``axis``."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    x = as_tensor(x)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)) / temperature,)

    return _result(s, (x,), backward)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer; updated in place while training."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel batch norm over all axes except axis 1."""
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // x.shape[1]
        m = state.momentum
        state.mean = (1 - m) * state.mean + m * mu
        state.var = (1 - m) * state.var + m * var * n / max(n - 1, 1)
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            n = x.data.size // x.shape[1]
            gx = (inv.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = dxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def binary_cross_entropy(p: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Mean BCE between probabilities ``p`` and soft targets in [0, 1]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {p.shape}")
    q = np.clip(p.data, eps, 1 - eps)
    loss = -(t * np.log(q) + (1 - t) * np.log(1 - q)).mean()
    n = q.size

    def backward(g):
        return (g * (q - t) / (q * (1 - q)) / n,)

    return _result(np.asarray(loss), (p,), backward)


# -- GRU ----------------------------------------------------------------------------

@dataclass
class GruParams:
    """Weights of one GRU direction.

    ``w_ih`` is (Din, 3H), ``w_hh`` is (H, 3H), ``bias`` is (3H,); the three
    column blocks are the update gate z, reset gate r and candidate n.
    """

    w_ih: Tensor
    w_hh: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_ih": self.w_ih, f"{prefix}.w_hh": self.w_hh, f"{prefix}.bias": self.bias}


def init_gru(din: int, hidden: int, rng: np.random.Generator) -> GruParams:
    bound = 1.0 / np.sqrt(hidden)
    return GruParams(
        w_ih=Tensor(rng.uniform(-bound, bound, (din, 3 * hidden)), requires_grad=True),
        w_hh=Tensor(rng.uniform(-bound, bound, (hidden, 3 * hidden)), requires_grad=True),
        bias=Tensor(np.zeros(3 * hidden), requires_grad=True),
    )


def gru_sequence(x: Tensor, params: GruParams, direction: str = "forward", h0: Tensor | None = None) -> Tensor:
    """Run one GRU direction over (B, T, Din) and return all states (B, T, H).

    z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h.
    States of the backward direction are returned at their original time index.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if x.ndim != 3:
        raise ValueError(f"gru_sequence expects (B, T, Din), got {x.shape}")
    B, T, din = x.shape
    if T < 1:
        raise ValueError("gru_sequence needs at least one time step")
    if params.w_ih.shape[0] != din:
        raise ValueError(f"input size {din} does not match GRU weights {params.w_ih.shape}")
    H = params.hidden
    gx = matmul(x, params.w_ih) + params.bias
    h = h0 if h0 is not None else Tensor(np.zeros((B, H)))
    steps = range(T) if direction == "forward" else range(T - 1, -1, -1)
    states: dict[int, Tensor] = {}
    for t in steps:
        gx_t = gx[:, t, :]
        gh = matmul(h, params.w_hh)
        zr = sigmoid(gx_t[:, : 2 * H] + gh[:, : 2 * H])
        z, r = zr[:, :H], zr[:, H:]
        n = tanh(gx_t[:, 2 * H:] + r * gh[:, 2 * H:])
        h = n + z * (h - n)
        states[t] = h
    return stack([states[t] for t in range(T)], axis=1)


def bigru(x: Tensor, fwd: GruParams, bwd: GruParams) -> Tensor:
    """Bidirectional GRU layer: forward and backward states concatenated on features."""
    return concat([gru_sequence(x, fwd, "forward"), gru_sequence(x, bwd, "backward")], axis=-1)


__all__ = [
    "BatchNormState", "GruParams", "avg_pool2d", "batch_norm", "bigru", "binary_cross_entropy",
    "conv2d", "conv_output_size", "gru_sequence", "init_gru", "reduce_mean_axis", "same_padding",
    "softmax_axis",
]
