"""CRNN for sound event detection built on dynamic convolution layers.

Topology: conv layer 1 is an ordinary 3x3 convolution, layers 2-6 are dynamic
convolutions carrying the configured dilations, layer 7 is a dynamic
convolution with undilated kernels (its input has only two frequency bins).
Each conv is followed by batch norm, SiLU and average pooling. Two
bidirectional GRU layers feed a frame-wise sigmoid head (strong prediction)
and a softmax-over-time attention pooling of it (weak prediction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .functional import (
    BatchNormState, GruParams, avg_pool2d, batch_norm, bigru, binary_cross_entropy, conv2d,
    init_gru, softmax_axis,
)
from .layers import DfdLayerConfig, DfdLayerParams, Dilation, dfd_forward, init_dfd_layer
from .tensor import Tensor, matmul, sigmoid, silu

N_CONV = 7
DYN_LAYERS = tuple(range(2, N_CONV + 1))
DILATED_LAYERS = tuple(range(2, N_CONV))  # layer 7 always keeps (1, 1) kernels

DEFAULT_POOLS = ((2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2))


def freq_dilations(dfs, dt: int = 1) -> tuple[Dilation, ...]:
    """(1, 2, 3, 3) -> ((1, 1), (1, 2), (1, 3), (1, 3))."""
    return tuple((dt, int(d)) for d in dfs)


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 10
    channels: tuple[int, ...] = (8, 16, 16, 16, 16, 16, 16)
    pools: tuple[tuple[int, int], ...] = DEFAULT_POOLS
    K: int = 4
    # one entry per dilated layer (2..6), each a tuple of K (d_t, d_f) pairs
    dilations: tuple[tuple[Dilation, ...], ...] | None = None
    gru_hidden: int = 32
    gru_layers: int = 2
    temperature: float = 31.0
    attention_reduction: int = 4
    n_mels: int = 128

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "pools", tuple((int(a), int(b)) for a, b in self.pools))
        dil = self.dilations
        if dil is None:
            dil = (((1, 1),) * self.K,) * len(DILATED_LAYERS)
        dil = tuple(tuple((int(a), int(b)) for a, b in layer) for layer in dil)
        object.__setattr__(self, "dilations", dil)
        self.validate()

    def validate(self) -> None:
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.channels) != N_CONV or min(self.channels) < 1:
            raise ValueError(f"need {N_CONV} positive channel widths, got {self.channels}")
        if len(self.pools) != N_CONV or min(min(p) for p in self.pools) < 1:
            raise ValueError(f"need {N_CONV} positive pooling windows, got {self.pools}")
        fpool = math.prod(p[1] for p in self.pools[:N_CONV - 1])
        if self.n_mels % fpool or self.n_mels // fpool != 2:
            raise ValueError(
                f"frequency pooling over layers 1-6 must reduce {self.n_mels} mel bins to 2, "
                f"got factor {fpool}"
            )
        if self.n_mels // fpool % self.pools[-1][1]:
            raise ValueError("layer 7 frequency pooling must divide 2")
        if len(self.dilations) != len(DILATED_LAYERS):
            raise ValueError(f"need dilations for layers {DILATED_LAYERS}")
        for layer, d in zip(DILATED_LAYERS, self.dilations):
            if len(d) != self.K:
                raise ValueError(f"layer {layer}: expected {self.K} dilation pairs, got {len(d)}")
            if any(min(p) < 1 for p in d):
                raise ValueError(f"layer {layer}: dilations must be >= 1")
        if self.gru_hidden < 1 or self.gru_layers < 1:
            raise ValueError("GRU sizes must be positive")

    @property
    def time_pool(self) -> int:
        return math.prod(p[0] for p in self.pools)

    def layer_dilations(self, layer: int) -> tuple[Dilation, ...]:
        if layer in DILATED_LAYERS:
            return self.dilations[layer - DILATED_LAYERS[0]]
        return ((1, 1),) * self.K

    def layer_config(self, layer: int) -> DfdLayerConfig:
        return DfdLayerConfig(
            in_channels=self.channels[layer - 2],
            out_channels=self.channels[layer - 1],
            K=self.K,
            dilations=self.layer_dilations(layer),
            temperature=self.temperature,
            attention_reduction=self.attention_reduction,
        )

    def with_dilations(self, per_kernel: tuple[Dilation, ...]) -> ModelConfig:
        """Same dilation pairs on every dilated layer; K follows their count."""
        per_kernel = tuple(tuple(p) for p in per_kernel)
        return replace(self, K=len(per_kernel), dilations=(per_kernel,) * len(DILATED_LAYERS))

    @property
    def rnn_input(self) -> int:
        f_final = self.n_mels // math.prod(p[1] for p in self.pools)
        return self.channels[-1] * f_final


@dataclass
class CRNN:
    config: ModelConfig
    seed: int
    params: dict[str, Tensor]
    bn: dict[int, BatchNormState]
    dyn: dict[int, DfdLayerParams]
    gru: list[tuple[GruParams, GruParams]]

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer, st in self.bn.items():
            out[f"bn{layer}.running_mean"] = st.mean
            out[f"bn{layer}.running_var"] = st.var
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        layer = int(name.split(".")[0][2:])
        if name.endswith("running_mean"):
            self.bn[layer].mean = value
        else:
            self.bn[layer].var = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def build_crnn(config: ModelConfig, seed: int) -> CRNN:
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    c = config.channels

    bound = 1.0 / 3.0  # fan-in 1 * 3 * 3
    params["conv1.weight"] = Tensor(rng.uniform(-bound, bound, (c[0], 1, 3, 3)), requires_grad=True)
    bn = {}
    dyn = {}
    for layer in range(1, N_CONV + 1):
        if layer > 1:
            dyn[layer] = init_dfd_layer(config.layer_config(layer), rng)
            params.update(dyn[layer].named(f"dyn{layer}"))
        width = c[layer - 1]
        params[f"bn{layer}.gamma"] = Tensor(np.ones(width), requires_grad=True)
        params[f"bn{layer}.beta"] = Tensor(np.zeros(width), requires_grad=True)
        bn[layer] = BatchNormState(np.zeros(width), np.ones(width))

    gru = []
    din = config.rnn_input
    for n in range(config.gru_layers):
        fwd = init_gru(din, config.gru_hidden, rng)
        bwd = init_gru(din, config.gru_hidden, rng)
        params.update(fwd.named(f"gru{n}.fwd"))
        params.update(bwd.named(f"gru{n}.bwd"))
        gru.append((fwd, bwd))
        din = 2 * config.gru_hidden

    hb = 1.0 / np.sqrt(din)
    params["strong.weight"] = Tensor(rng.uniform(-hb, hb, (din, config.n_classes)), requires_grad=True)
    params["strong.bias"] = Tensor(np.zeros(config.n_classes), requires_grad=True)
    params["weak_att.weight"] = Tensor(rng.uniform(-hb, hb, (din, config.n_classes)), requires_grad=True)
    params["weak_att.bias"] = Tensor(np.zeros(config.n_classes), requires_grad=True)
    for name, t in params.items():
        t.name = name
    return CRNN(config=config, seed=seed, params=params, bn=bn, dyn=dyn, gru=gru)


@dataclass
class CrnnOutput:
    strong: Tensor  # (B, T/4, n_classes)
    weak: Tensor  # (B, n_classes)
    attention: list[Tensor] | None = None  # per dynamic layer, (B, K, F_l)


def crnn_forward(model: CRNN, mel, record_attention: bool = False, training: bool = False) -> CrnnOutput:
    cfg = model.config
    x = mel if isinstance(mel, Tensor) else Tensor(mel)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected (B, 1, T, {cfg.n_mels}) input, got {x.shape}")
    if x.shape[3] != cfg.n_mels:
        raise ValueError(f"input has {x.shape[3]} frequency bins, model expects {cfg.n_mels}")
    if x.shape[2] % cfg.time_pool:
        raise ValueError(f"frame count {x.shape[2]} not divisible by time pooling {cfg.time_pool}")

    p = model.params
    attention = [] if record_attention else None
    for layer in range(1, N_CONV + 1):
        if layer == 1:
            x = conv2d(x, p["conv1.weight"], padding=(1, 1))
        else:
            if layer == N_CONV and x.shape[3] != 2:
                raise AssertionError(f"layer {N_CONV} expects 2 frequency bins, got {x.shape[3]}")
            x, pi = dfd_forward(x, model.dyn[layer], cfg.layer_config(layer), return_attention=True)
            if attention is not None:
                attention.append(pi)
        x = batch_norm(x, p[f"bn{layer}.gamma"], p[f"bn{layer}.beta"], model.bn[layer], training)
        x = silu(x)
        if cfg.pools[layer - 1] != (1, 1):
            x = avg_pool2d(x, cfg.pools[layer - 1])

    B, C, T, F = x.shape
    h = x.transpose(0, 2, 1, 3).reshape(B, T, C * F)
    for fwd, bwd in model.gru:
        h = bigru(h, fwd, bwd)
    strong = sigmoid(matmul(h, p["strong.weight"]) + p["strong.bias"])
    att = softmax_axis(matmul(h, p["weak_att.weight"]) + p["weak_att.bias"], axis=1)
    weak = (strong * att).sum(axis=1)
    return CrnnOutput(strong=strong, weak=weak, attention=attention)


def model_param_count(model: CRNN) -> int:
    return sum(t.size for t in model.named_parameters().values())


def config_param_count(config: ModelConfig) -> int:
    """Trainable-scalar count of the model a config would build, without building it."""
    from .layers import layer_param_count

    c = config.channels
    total = c[0] * 9 + 2 * sum(c)
    total += sum(layer_param_count(config.layer_config(layer)) for layer in DYN_LAYERS)
    din, H = config.rnn_input, config.gru_hidden
    for _ in range(config.gru_layers):
        total += 2 * (din * 3 * H + H * 3 * H + 3 * H)
        din = 2 * H
    total += 2 * (din * config.n_classes + config.n_classes)
    return total


# -- training ------------------------------------------------------------------------

class NumericError(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * p.grad
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * p.grad ** 2
            self.m[name], self.v[name] = m, v
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sed_loss(out: CrnnOutput, strong_labels, weak_labels) -> Tensor:
    return binary_cross_entropy(out.strong, strong_labels) + binary_cross_entropy(out.weak, weak_labels)


def train_step(model: CRNN, batch: dict, optimizer: Adam, lr: float) -> float:
    """One Adam step on strong + weak BCE; returns the loss before the update."""
    mel = batch["mel"]
    strong, weak = np.asarray(batch["strong_labels"]), np.asarray(batch["weak_labels"])
    B, _, T, _ = np.shape(mel)
    expect = (B, T // model.config.time_pool, model.config.n_classes)
    if strong.shape != expect or weak.shape != (B, model.config.n_classes):
        raise ValueError(f"label shapes {strong.shape}/{weak.shape} do not match {expect}/{expect[::2]}")
    model.zero_grad()
    out = crnn_forward(model, mel, training=True)
    loss = sed_loss(out, strong, weak)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} at optimizer step {optimizer.step_count + 1}")
    loss.backward()
    for name, p in model.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {name}")
    optimizer.step(model.params, lr)
    return value
