"""Spread of the frequency-adaptive attention vectors across a corpus.

For layer l and frequency bin f, with w_ilf the K-dim attention vector of clip i,

    var_lf = (1/N) * sum_i || mean_j(w_jlf) - w_ilf ||^2

Smaller values mean the layer reaches its kernels with less per-clip change in
attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import CRNN, DYN_LAYERS, crnn_forward
from .tensor import no_grad


@dataclass
class AttentionRecord:
    # layer -> (N clips, F_l bins, K)
    weights: dict[int, np.ndarray]

    @property
    def n_clips(self) -> int:
        return next(iter(self.weights.values())).shape[0] if self.weights else 0


@dataclass
class AttentionStats:
    var: dict[int, np.ndarray]  # layer -> (F_l,)
    n: int


def collect_attention(model: CRNN, clips: Sequence[np.ndarray]) -> AttentionRecord:
    """Forward every clip on its own and keep each dynamic layer's attention vectors."""
    per_layer: dict[int, list[np.ndarray]] = {layer: [] for layer in DYN_LAYERS}
    with no_grad():
        for feats in clips:
            x = np.asarray(feats.data if hasattr(feats, "data") else feats, dtype=np.float64)
            while x.ndim < 4:
                x = x[None]
            out = crnn_forward(model, x, record_attention=True)
            for layer, pi in zip(DYN_LAYERS, out.attention):
                per_layer[layer].append(pi.data[0].T)  # (F, K)
    return AttentionRecord({layer: np.stack(v) for layer, v in per_layer.items() if v})


def attention_variance(record: AttentionRecord) -> AttentionStats:
    if not record.weights or record.n_clips == 0:
        raise ValueError("attention record is empty")
    var = {}
    for layer, w in record.weights.items():
        centre = w.mean(axis=0, keepdims=True)
        var[layer] = ((centre - w) ** 2).sum(axis=2).mean(axis=0)
    return AttentionStats(var, record.n_clips)


def export_variance(stats: AttentionStats, path) -> None:
    lines = ["layer,freq,variance"]
    for layer in sorted(stats.var):
        for f, v in enumerate(stats.var[layer]):
            lines.append(f"{layer},{f},{float(v):.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_variance(path) -> AttentionStats:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0] != "layer,freq,variance":
        raise ValueError(f"{path}: missing header")
    acc: dict[int, dict[int, float]] = {}
    for row in rows[1:]:
        layer, f, v = row.split(",")
        acc.setdefault(int(layer), {})[int(f)] = float(v)
    return AttentionStats({l: np.array([d[f] for f in sorted(d)]) for l, d in acc.items()}, n=0)
