"""Frequency dynamic convolution with per-kernel dilation.

A layer holds K basis kernels (W_i, b_i), each convolved with its own dilation
d_i. An attention branch looks at the time-averaged input and produces, for
every frequency bin f, a softmax weight pi_if over the kernels. The layer
output is the per-frequency convex combination

    y[b, :, t, f] = sum_i pi[b, i, f] * y_i[b, :, t, f]

With all dilations equal to (1, 1) this is plain frequency dynamic
convolution (FDY); mixing dilations gives the dilated variant (DFD).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import conv2d, same_padding, softmax_axis
from .tensor import Tensor, matmul, relu, stack

Dilation = tuple[int, int]
KERNEL = (3, 3)


@dataclass(frozen=True)
class DfdLayerConfig:
    in_channels: int
    out_channels: int
    K: int = 4
    dilations: tuple[Dilation, ...] | None = None
    temperature: float = 31.0
    attention_reduction: int = 4

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.attention_reduction < 1:
            raise ValueError("attention_reduction must be >= 1")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        dil = self.dilations
        if dil is None:
            dil = ((1, 1),) * self.K
        dil = tuple((int(a), int(b)) for a, b in dil)
        if len(dil) != self.K:
            raise ValueError(f"expected {self.K} dilation pairs, got {len(dil)}")
        if any(min(d) < 1 for d in dil):
            raise ValueError(f"dilations must be >= 1, got {dil}")
        object.__setattr__(self, "dilations", dil)

    @property
    def attention_hidden(self) -> int:
        return max(1, self.in_channels // self.attention_reduction)

    @property
    def is_fdy(self) -> bool:
        return all(d == (1, 1) for d in self.dilations)


@dataclass
class DfdLayerParams:
    basis_weights: list[Tensor]
    basis_biases: list[Tensor]
    att_w1: Tensor  # (hidden, Cin)
    att_b1: Tensor  # (hidden, 1)
    att_w2: Tensor  # (K, hidden)
    att_b2: Tensor  # (K, 1)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.basis_weights, self.basis_biases)):
            out[f"{prefix}.basis{i}.weight"] = w
            out[f"{prefix}.basis{i}.bias"] = b
        out[f"{prefix}.att.w1"] = self.att_w1
        out[f"{prefix}.att.b1"] = self.att_b1
        out[f"{prefix}.att.w2"] = self.att_w2
        out[f"{prefix}.att.b2"] = self.att_b2
        return out


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def init_dfd_layer(config: DfdLayerConfig, seed: int | np.random.Generator) -> DfdLayerParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cin, cout, hid = config.in_channels, config.out_channels, config.attention_hidden
    fan_in = cin * KERNEL[0] * KERNEL[1]
    return DfdLayerParams(
        basis_weights=[_uniform(rng, (cout, cin) + KERNEL, fan_in) for _ in range(config.K)],
        basis_biases=[Tensor(np.zeros(cout), requires_grad=True) for _ in range(config.K)],
        att_w1=_uniform(rng, (hid, cin), cin),
        att_b1=Tensor(np.zeros((hid, 1)), requires_grad=True),
        att_w2=_uniform(rng, (config.K, hid), hid),
        att_b2=Tensor(np.zeros((config.K, 1)), requires_grad=True),
    )


def layer_param_count(config: DfdLayerConfig) -> int:
    cin, cout, k, hid = config.in_channels, config.out_channels, config.K, config.attention_hidden
    basis = k * cout * cin * KERNEL[0] * KERNEL[1] + k * cout
    attention = hid * cin + hid + k * hid + k
    return basis + attention


def attention_weights(x: Tensor, params: DfdLayerParams, config: DfdLayerConfig) -> Tensor:
    """Frequency-adaptive kernel weights pi, shape (B, K, F), summing to 1 over K."""
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected (B, {config.in_channels}, T, F) input, got {x.shape}")
    pooled = x.mean(axis=2)  # (B, Cin, F)
    hidden = relu(matmul(params.att_w1, pooled) + params.att_b1)
    logits = matmul(params.att_w2, hidden) + params.att_b2
    return softmax_axis(logits, axis=1, temperature=config.temperature)


def basis_outputs(x: Tensor, params: DfdLayerParams, config: DfdLayerConfig) -> list[Tensor]:
    return [
        conv2d(x, w, b, padding=same_padding(d, KERNEL), dilation=d)
        for w, b, d in zip(params.basis_weights, params.basis_biases, config.dilations)
    ]


def dfd_forward(x: Tensor, params: DfdLayerParams, config: DfdLayerConfig,
                force_kernel: int | None = None, return_attention: bool = False):
    """Dynamic convolution over (B, Cin, T, F); output keeps T and F.

    ``force_kernel=j`` replaces the learned attention by a one-hot on kernel j,
    which reduces the layer to a plain dilated convolution with (W_j, b_j, d_j).
    With ``return_attention`` the pair ``(y, pi)`` is returned.
    """
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected (B, {config.in_channels}, T, F) input, got {x.shape}")
    B, _, _, F = x.shape
    max_df = max(d[1] for d in config.dilations)
    if F <= max_df:
        # off-centre taps of the widest kernel would only ever read padding
        raise ValueError(f"frequency size {F} too small for frequency dilation {max_df}")

    if force_kernel is not None:
        if not 0 <= force_kernel < config.K:
            raise IndexError(f"force_kernel {force_kernel} out of range for K={config.K}")
        onehot = np.zeros((B, config.K, F))
        onehot[:, force_kernel, :] = 1.0
        pi = Tensor(onehot)
    else:
        pi = attention_weights(x, params, config)

    ys = stack(basis_outputs(x, params, config), axis=1)  # (B, K, Cout, T, F)
    y = (ys * pi.reshape(B, config.K, 1, 1, F)).sum(axis=1)
    return (y, pi) if return_attention else y
