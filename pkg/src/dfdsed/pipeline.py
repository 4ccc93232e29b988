"""Corpus-level glue: feature extraction, the training loop, prediction and scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig, Sample, augment_batch
from .evaluation import Event, MatchCriteria, MedianFilterPlan, intersection_f1, median_filter_grid, \
    probs_to_events, psds_lite
from .features import CLASSES, AudioClip, MelConfig, label_grid, label_frame_duration, logmel
from .model import CRNN, Adam, crnn_forward, train_step
from .tensor import no_grad

log = logging.getLogger(__name__)


@dataclass
class Example:
    clip_id: str
    features: np.ndarray  # (frames, n_mels), frames a multiple of the time pooling
    strong: np.ndarray  # (frames / 4, n_classes)
    weak: np.ndarray  # (n_classes,)
    events: list[Event] = field(default_factory=list)


def clip_features(clip: AudioClip, mel: MelConfig, time_pool: int = 4) -> np.ndarray:
    feats = logmel(clip, mel).data[0, 0]
    return feats[: len(feats) // time_pool * time_pool]


def make_example(clip_id: str, clip: AudioClip, events: Sequence[Event], mel: MelConfig,
                 classes: Sequence[str] = CLASSES, time_pool: int = 4) -> Example:
    feats = clip_features(clip, mel, time_pool)
    frame_dur = label_frame_duration(mel.hop, time_pool, mel.sample_rate)
    strong = label_grid(events, len(feats) // time_pool, frame_dur, tuple(classes))
    return Example(clip_id, feats, strong, strong.max(axis=0), list(events))


@dataclass
class TrainConfig:
    steps: int = 400
    batch_size: int = 8
    lr: float = 3e-3
    seed: int = 0
    augment: bool = True
    shift: bool = True
    mixup: bool = False
    time_mask: bool = True
    filter_aug: bool = True
    log_every: int = 50


def fit(model: CRNN, examples: Sequence[Example], cfg: TrainConfig, aug: AugmentConfig = AugmentConfig(),
        on_step: Callable[[int, float], None] | None = None) -> list[float]:
    """Minibatch Adam training; returns the per-step losses."""
    rng = np.random.default_rng(cfg.seed)
    opt = Adam()
    losses = []
    order = rng.permutation(len(examples))
    pos = 0
    for step in range(1, cfg.steps + 1):
        idx = []
        while len(idx) < min(cfg.batch_size, len(examples)):
            if pos == len(order):
                order, pos = rng.permutation(len(examples)), 0
            idx.append(order[pos])
            pos += 1
        samples = [Sample(examples[i].features, examples[i].strong, examples[i].weak) for i in idx]
        if cfg.augment:
            samples = augment_batch(rng, samples, aug, cfg.shift, cfg.mixup, cfg.time_mask, cfg.filter_aug)
        batch = {
            "mel": np.stack([s.features for s in samples])[:, None],
            "strong_labels": np.stack([s.strong for s in samples]),
            "weak_labels": np.stack([s.weak for s in samples]),
        }
        loss = train_step(model, batch, opt, cfg.lr)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f", step, loss)
    return losses


def recalibrate_bn(model: CRNN, examples: Sequence[Example], batch_size: int = 8) -> None:
    """Replace batch-norm running statistics by their average over un-augmented examples.

    Running averages gathered under augmentation drift from clean-input statistics.
    """
    states = list(model.bn.values())
    saved = [st.momentum for st in states]
    with no_grad():
        for k, i in enumerate(range(0, len(examples), batch_size)):
            for st in states:
                st.momentum = 1.0 / (k + 1)
            x = np.stack([e.features for e in examples[i:i + batch_size]])[:, None]
            crnn_forward(model, x, training=True)
    for st, m in zip(states, saved):
        st.momentum = m


def predict(model: CRNN, examples: Sequence[Example], batch_size: int = 8) -> dict[str, np.ndarray]:
    """Strong predictions per clip, (label frames, n_classes)."""
    out = {}
    with no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            shapes = {e.features.shape for e in chunk}
            if len(shapes) > 1:
                for e in chunk:
                    out[e.clip_id] = crnn_forward(model, e.features[None, None]).strong.data[0]
                continue
            strong = crnn_forward(model, np.stack([e.features for e in chunk])[:, None]).strong.data
            for e, s in zip(chunk, strong):
                out[e.clip_id] = s
    return out


@dataclass
class EvalResult:
    per_class_f1: dict[str, float]
    macro_f1: float
    psds_lite: float


def decode(scores: dict[str, np.ndarray], plan: MedianFilterPlan, classes: Sequence[str],
           frame_dur: float, threshold: float = 0.5) -> list[Event]:
    lengths = plan.for_classes(classes)
    dets = []
    for cid, s in scores.items():
        dets += probs_to_events(median_filter_grid(s, lengths), threshold, frame_dur, cid, classes)
    return dets


def evaluate(scores: dict[str, np.ndarray], refs: Sequence[Event], classes: Sequence[str], frame_dur: float,
             plan: MedianFilterPlan | None = None, threshold: float = 0.5,
             thresholds: Sequence[float] = tuple(np.linspace(0.05, 0.95, 19)),
             max_efpr: float = 100.0, crit: MatchCriteria = MatchCriteria()) -> EvalResult:
    plan = plan or MedianFilterPlan.uniform(classes, 7)
    lengths = plan.for_classes(classes)
    filtered = {cid: median_filter_grid(s, lengths) for cid, s in scores.items()}
    dets = decode(scores, plan, classes, frame_dur, threshold)
    report = intersection_f1(dets, refs, crit, classes)
    psds = psds_lite(filtered, refs, classes, frame_dur, [float(t) for t in thresholds], max_efpr, crit)
    return EvalResult(report.per_class, report.macro, psds)
