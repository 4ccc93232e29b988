"""Post-processing and intersection-based scoring of frame-level predictions.

Detections and references are matched by how much of each event they cover
rather than by onset/offset collars: a detection is kept (DTC) when enough of
it lies inside same-class references, and a reference counts as found (GTC)
when enough of it is covered by kept detections.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True, order=True)
class Event:
    clip_id: str
    label: str
    onset: float
    offset: float

    def __post_init__(self):
        if self.onset < 0 or not self.offset > self.onset:
            raise ValueError(f"invalid event times [{self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class MatchCriteria:
    rho_dtc: float = 0.5
    rho_gtc: float = 0.5

    def __post_init__(self):
        for name in ("rho_dtc", "rho_gtc"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


# -- median filtering and decoding ---------------------------------------------------

def median_filter_1d(probs, length: int) -> np.ndarray:
    """Sliding median of odd ``length`` with zeros padded at both ends."""
    if length < 1 or length % 2 == 0:
        raise ValueError(f"median filter length must be odd and >= 1, got {length}")
    x = np.asarray(probs, dtype=np.float64)
    if length == 1:
        return x.copy()
    half = length // 2
    padded = np.pad(x, (half, half))
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, length), axis=-1)


def median_filter_grid(probs: np.ndarray, lengths: Sequence[int]) -> np.ndarray:
    """Apply per-class filter lengths to a (frames, classes) grid."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.stack([median_filter_1d(probs[:, c], lengths[c]) for c in range(probs.shape[1])], axis=1)


def probs_to_events(probs, threshold: float, frame_dur: float, clip_id: str,
                    classes: Sequence[str]) -> list[Event]:
    """Maximal runs of frames with prob > threshold, one event per run and class."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[:, None]
    events = []
    for c, label in enumerate(classes):
        active = np.concatenate([[False], probs[:, c] > threshold, [False]])
        edges = np.flatnonzero(np.diff(active.astype(np.int8)))
        for start, stop in zip(edges[::2], edges[1::2]):
            events.append(Event(clip_id, label, start * frame_dur, stop * frame_dur))
    return events


# -- matching -----------------------------------------------------------------------

def _overlap(a: Event, b: Event) -> float:
    return max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))


def _group(events: Iterable[Event]) -> dict[tuple[str, str], list[Event]]:
    out: dict[tuple[str, str], list[Event]] = defaultdict(list)
    for ev in events:
        out[(ev.clip_id, ev.label)].append(ev)
    return out


def match_events(dets: Iterable[Event], refs: Iterable[Event], crit: MatchCriteria = MatchCriteria()) -> Counts:
    """Intersection-based TP/FP/FN counts; matching never crosses clip or label."""
    det_groups, ref_groups = _group(dets), _group(refs)
    tp = fp = fn = 0
    for key in set(det_groups) | set(ref_groups):
        d, r = det_groups.get(key, []), ref_groups.get(key, [])
        kept = []
        for det in d:
            if sum(_overlap(det, ref) for ref in r) / det.duration >= crit.rho_dtc:
                kept.append(det)
            else:
                fp += 1
        for ref in r:
            if sum(_overlap(det, ref) for det in kept) / ref.duration >= crit.rho_gtc:
                tp += 1
            else:
                fn += 1
    return Counts(tp, fp, fn)


def f1_from_counts(c: Counts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


@dataclass
class F1Report:
    per_class: dict[str, float]
    counts: dict[str, Counts]

    @property
    def macro(self) -> float:
        return float(np.mean(list(self.per_class.values()))) if self.per_class else 1.0


def intersection_f1(dets: Sequence[Event], refs: Sequence[Event], crit: MatchCriteria = MatchCriteria(),
                    classes: Sequence[str] | None = None) -> F1Report:
    """Per-class and macro F1; a class with no references and no detections scores 1."""
    if classes is None:
        classes = sorted({e.label for e in dets} | {e.label for e in refs})
    per_class, counts = {}, {}
    for label in classes:
        c = match_events([e for e in dets if e.label == label], [e for e in refs if e.label == label], crit)
        counts[label] = c
        per_class[label] = f1_from_counts(c)
    return F1Report(per_class, counts)


# -- simplified PSDS ---------------------------------------------------------------

@dataclass
class RocPoint:
    threshold: float
    tpr: float
    fp_rate: float  # false positives per hour, averaged over classes


def psds_roc(scores: Mapping[str, np.ndarray], refs: Sequence[Event], classes: Sequence[str],
             frame_dur: float, thresholds: Sequence[float],
             crit: MatchCriteria = MatchCriteria()) -> list[RocPoint]:
    """One operating point per threshold: class-averaged TP ratio and FP rate."""
    hours = sum(len(s) for s in scores.values()) * frame_dur / 3600.0
    n_refs = {c: sum(1 for e in refs if e.label == c) for c in classes}
    ref_classes = [c for c in classes if n_refs[c] > 0]
    points = []
    for thr in thresholds:
        dets = [ev for cid, s in scores.items() for ev in probs_to_events(s, thr, frame_dur, cid, classes)]
        report = intersection_f1(dets, refs, crit, classes)
        tpr = float(np.mean([report.counts[c].tp / n_refs[c] for c in ref_classes])) if ref_classes else 0.0
        fpr = float(np.mean([report.counts[c].fp / hours for c in classes])) if hours > 0 else 0.0
        points.append(RocPoint(float(thr), tpr, fpr))
    return points


def roc_area(points: Sequence[RocPoint], max_efpr: float) -> float:
    """Normalised area under the staircase TPR(fp_rate) curve on [0, max_efpr].

    At each FP rate the curve takes the best TP ratio of any operating point at
    or below that rate, and zero before the first point.
    """
    pts = sorted((p.fp_rate, p.tpr) for p in points if p.fp_rate <= max_efpr)
    area, best = 0.0, 0.0
    for i, (x, y) in enumerate(pts):
        best = max(best, y)
        nxt = pts[i + 1][0] if i + 1 < len(pts) else max_efpr
        area += best * (nxt - x)
    return area / max_efpr


def psds_lite(scores: Mapping[str, np.ndarray], refs: Sequence[Event], classes: Sequence[str],
              frame_dur: float, thresholds: Sequence[float], max_efpr: float = 100.0,
              crit: MatchCriteria = MatchCriteria()) -> float:
    """ROC-area score without cross-trigger or inter-class variance terms."""
    if len(thresholds) == 0:
        raise ValueError("psds_lite needs at least one threshold")
    if list(thresholds) != sorted(thresholds) or not all(0 < t < 1 for t in thresholds):
        raise ValueError("thresholds must be sorted and inside (0, 1)")
    if not max_efpr > 0:
        raise ValueError("max_efpr must be positive")
    return roc_area(psds_roc(scores, refs, classes, frame_dur, thresholds, crit), max_efpr)


# -- class-wise median filter search ---------------------------------------------------

@dataclass
class MedianFilterPlan:
    lengths: dict[str, int]

    def __post_init__(self):
        for label, n in self.lengths.items():
            if n < 1 or n % 2 == 0:
                raise ValueError(f"median length for {label} must be odd and >= 1, got {n}")

    @classmethod
    def uniform(cls, classes: Sequence[str], length: int = 7) -> MedianFilterPlan:
        return cls({c: length for c in classes})

    def for_classes(self, classes: Sequence[str]) -> list[int]:
        return [self.lengths[c] for c in classes]

    def to_text(self) -> str:
        return "".join(f"{c}={n}\n" for c, n in self.lengths.items())

    @classmethod
    def from_text(cls, text: str) -> MedianFilterPlan:
        lengths = {}
        for i, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {i}: expected class=length")
            k, v = line.split("=", 1)
            lengths[k.strip()] = int(v)
        return cls(lengths)


def class_f1(scores: Mapping[str, np.ndarray], refs: Sequence[Event], classes: Sequence[str], c: int,
             length: int, threshold: float, frame_dur: float, crit: MatchCriteria) -> float:
    label = classes[c]
    dets = []
    for cid, s in scores.items():
        filtered = median_filter_1d(np.asarray(s)[:, c], length)
        dets += probs_to_events(filtered[:, None], threshold, frame_dur, cid, [label])
    return f1_from_counts(match_events(dets, [e for e in refs if e.label == label], crit))


def classwise_mf_search(scores: Mapping[str, np.ndarray], refs: Sequence[Event], classes: Sequence[str],
                        candidate_lengths: Sequence[int], frame_dur: float, threshold: float = 0.5,
                        crit: MatchCriteria = MatchCriteria()) -> MedianFilterPlan:
    """Pick, per class, the candidate median length with the best intersection F1.

    Ties go to the shorter filter.
    """
    if not candidate_lengths:
        raise ValueError("need at least one candidate median length")
    cands = sorted(set(int(n) for n in candidate_lengths))
    plan = {}
    for c, label in enumerate(classes):
        best_len, best = cands[0], -1.0
        for n in cands:
            f1 = class_f1(scores, refs, classes, c, n, threshold, frame_dur, crit)
            if f1 > best:
                best_len, best = n, f1
        plan[label] = best_len
    return MedianFilterPlan(plan)


# -- TSV event lists ----------------------------------------------------------------

TSV_HEADER = ("filename", "onset", "offset", "event_label")


def write_events_tsv(path, events: Iterable[Event]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TSV_HEADER)
        for ev in sorted(events, key=lambda e: (e.clip_id, e.onset, e.label, e.offset)):
            w.writerow([ev.clip_id, f"{ev.onset:.3f}", f"{ev.offset:.3f}", ev.label])


def read_events_tsv(path) -> list[Event]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != TSV_HEADER:
        raise ValueError(f"{path}: expected header {' '.join(TSV_HEADER)}")
    return [Event(r[0], r[3], float(r[1]), float(r[2])) for r in rows[1:] if r]
