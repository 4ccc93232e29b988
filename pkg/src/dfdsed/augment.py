"""Training-time augmentations on log-mel features and label grids.

Features are (..., frames, bins) arrays in the natural-log power domain;
strong labels are (label frames, classes) at 1/4 of the feature frame rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LABEL_RATIO = 4


@dataclass(frozen=True)
class AugmentConfig:
    mixup_alpha: float = 0.2
    time_mask_max: int = 16
    shift_max: int = 16
    filter_bands: tuple[int, int] = (2, 5)
    filter_gain_db: tuple[float, float] = (-6.0, 6.0)

    def __post_init__(self):
        if self.mixup_alpha < 0 or self.time_mask_max < 0 or self.shift_max < 0:
            raise ValueError("augmentation ranges must be non-negative")
        lo, hi = self.filter_bands
        if not 1 <= lo <= hi:
            raise ValueError(f"filter band count range must satisfy 1 <= lo <= hi, got {self.filter_bands}")
        if self.filter_gain_db[0] > self.filter_gain_db[1]:
            raise ValueError("filter gain range is reversed")


@dataclass
class Sample:
    features: np.ndarray
    strong: np.ndarray
    weak: np.ndarray


def frame_shift(features: np.ndarray, labels: np.ndarray, shift: int) -> tuple[np.ndarray, np.ndarray]:
    """Roll features by ``shift`` frames and labels by the matching label-frame count."""
    frames = features.shape[-2]
    if abs(shift) >= frames:
        raise ValueError(f"|shift| must be < {frames}, got {shift}")
    label_shift = int(np.round(shift / LABEL_RATIO))
    return np.roll(features, shift, axis=-2), np.roll(labels, label_shift, axis=0)


def mixup(a: Sample, b: Sample, lam: float) -> Sample:
    if not 0 <= lam <= 1:
        raise ValueError(f"mixup weight must be in [0, 1], got {lam}")
    for name in ("features", "strong", "weak"):
        if getattr(a, name).shape != getattr(b, name).shape:
            raise ValueError(f"mixup {name} shapes differ")
    mix = lambda x, y: lam * x + (1 - lam) * y  # noqa: E731
    return Sample(mix(a.features, b.features), mix(a.strong, b.strong), mix(a.weak, b.weak))


def time_mask(features: np.ndarray, start: int, length: int) -> np.ndarray:
    """Replace frames [start, start + length) by the clip mean (zero is not silence in log domain)."""
    frames = features.shape[-2]
    if start < 0 or length < 0 or start + length > frames:
        raise ValueError(f"mask [{start}, {start + length}) outside {frames} frames")
    out = features.copy()
    if length:
        out[..., start:start + length, :] = features.mean()
    return out


def filter_band_edges(rng: np.random.Generator, n_bins: int, cfg: AugmentConfig) -> np.ndarray:
    """Random contiguous partition of [0, n_bins) as an increasing edge array."""
    lo, hi = cfg.filter_bands
    n_bands = int(rng.integers(lo, min(hi, n_bins) + 1))
    inner = np.sort(rng.choice(np.arange(1, n_bins), size=n_bands - 1, replace=False))
    return np.concatenate([[0], inner, [n_bins]]).astype(int)


def filter_aug_lite(features: np.ndarray, seed: int, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Band-wise constant gain: each random frequency band shifted by a random dB gain."""
    rng = np.random.default_rng(seed)
    n_bins = features.shape[-1]
    edges = filter_band_edges(rng, n_bins, cfg)
    gains_db = rng.uniform(*cfg.filter_gain_db, size=len(edges) - 1)
    offsets = np.repeat(gains_db * np.log(10.0) / 10.0, np.diff(edges))
    return features + offsets


def augment_batch(rng: np.random.Generator, samples: list[Sample], cfg: AugmentConfig,
                  use_shift: bool = True, use_mixup: bool = True, use_mask: bool = True,
                  use_filter: bool = True) -> list[Sample]:
    out = []
    for s in samples:
        feats, strong = s.features, s.strong
        if use_shift and cfg.shift_max:
            shift = int(rng.integers(-cfg.shift_max, cfg.shift_max + 1)) // LABEL_RATIO * LABEL_RATIO
            feats, strong = frame_shift(feats, strong, shift)
        if use_mask and cfg.time_mask_max:
            n = int(rng.integers(0, cfg.time_mask_max + 1))
            start = int(rng.integers(0, feats.shape[-2] - n + 1))
            feats = time_mask(feats, start, n)
        if use_filter:
            feats = filter_aug_lite(feats, int(rng.integers(2 ** 31)), cfg)
        out.append(Sample(feats, strong, s.weak))
    if use_mixup and cfg.mixup_alpha > 0 and len(out) > 1:
        perm = rng.permutation(len(out))
        lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        out = [mixup(out[i], out[j], lam) for i, j in zip(range(len(out)), perm)]
    return out
