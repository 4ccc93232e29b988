"""Plain-text run configuration: ``section.key = value`` lines.

Sections are ``model``, ``feature``, ``train`` and ``eval``. Blank lines and
``#`` comments are ignored; unknown keys are rejected. The same format is
embedded in checkpoints to describe the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .augment import AugmentConfig
from .evaluation import MatchCriteria
from .features import MelConfig
from .model import DILATED_LAYERS, ModelConfig, freq_dilations
from .pipeline import TrainConfig

# dilation presets named after frequency-dilation settings of the 4-kernel experiments
PRESETS = {
    "fdy": (1, 1, 1, 1),
    "freq2": (1, 1, 1, 2),
    "two2": (1, 1, 2, 2),
    "three3": (1, 1, 3, 3),
    "varied": (1, 2, 2, 3),
    "best": (1, 2, 3, 3),
    "one_to_four": (1, 2, 3, 4),
}


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    threshold: float = 0.5
    thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))
    rho_dtc: float = 0.5
    rho_gtc: float = 0.5
    median: int = 7
    median_candidates: tuple[int, ...] = (1, 3, 5, 7, 9, 11, 13)
    max_efpr: float = 100.0

    @property
    def criteria(self) -> MatchCriteria:
        return MatchCriteria(self.rho_dtc, self.rho_gtc)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    feature: MelConfig = field(default_factory=MelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: Path = Path(".")
    data: dict = field(default_factory=dict)  # data.* paths, resolved against base_dir


# -- value parsing ---------------------------------------------------------------

def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(" ", "").split(",") if x)


def _pairs(v: str) -> tuple[tuple[int, int], ...]:
    """``1:1,1:2`` -> ((1, 1), (1, 2))."""
    out = []
    for item in v.replace(" ", "").split(","):
        a, b = item.split(":")
        out.append((int(a), int(b)))
    return tuple(out)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _fmt_pairs(pairs) -> str:
    return ",".join(f"{a}:{b}" for a, b in pairs)


MODEL_KEYS = {
    "n_classes": int, "channels": _ints, "pools": _pairs, "K": int, "gru_hidden": int,
    "gru_layers": int, "temperature": float, "attention_reduction": int, "n_mels": int,
}
FEATURE_KEYS = {
    "n_fft": int, "hop": int, "window": str, "n_mels": int, "sample_rate": int,
    "fmin": float, "fmax": float, "log_floor": float,
}
TRAIN_KEYS = {
    "steps": int, "batch_size": int, "lr": float, "seed": int, "augment": _bool, "shift": _bool,
    "mixup": _bool, "time_mask": _bool, "filter_aug": _bool, "log_every": int,
    "mixup_alpha": float, "time_mask_max": int, "shift_max": int,
    "filter_bands": _ints, "filter_gain_db": _floats,
}
AUG_KEYS = {"mixup_alpha", "time_mask_max", "shift_max", "filter_bands", "filter_gain_db"}
EVAL_KEYS = {
    "threshold": float, "thresholds": _floats, "rho_dtc": float, "rho_gtc": float, "median": int,
    "median_candidates": _ints, "max_efpr": float,
}
DATA_KEYS = {"train_dir", "eval_dir", "checkpoint"}


def parse_items(text: str) -> list[tuple[int, str, str, str]]:
    """Split text into (line number, section, key, raw value)."""
    items = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'section.key = value', got {raw.strip()!r}")
        lhs, value = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"line {no}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        items.append((no, section, key, value))
    return items


def _model_from_items(items, base: ModelConfig) -> ModelConfig:
    kw = {}
    uniform_t = uniform_f = None
    per_layer: dict[int, tuple] = {}
    for no, key, value in items:
        try:
            if key in MODEL_KEYS:
                kw[key] = MODEL_KEYS[key](value)
            elif key == "dilations_f":
                uniform_f = PRESETS[value] if value in PRESETS else _ints(value)
            elif key == "dilations_t":
                uniform_t = _ints(value)
            elif key == "preset":
                if value not in PRESETS:
                    raise ConfigError(f"line {no}: unknown preset {value!r} (known: {', '.join(PRESETS)})")
                uniform_f = PRESETS[value]
            elif key.startswith("layer") and key.endswith(".dilations"):
                layer = int(key[len("layer"):-len(".dilations")])
                if layer not in DILATED_LAYERS:
                    raise ConfigError(f"line {no}: model.{key}: only layers {DILATED_LAYERS} take dilations")
                per_layer[layer] = _pairs(value)
            else:
                raise ConfigError(f"line {no}: unknown key 'model.{key}'")
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {no}: bad value for 'model.{key}': {exc}") from None

    cfg = replace(base, **{k: v for k, v in kw.items() if k != "K"})
    k = kw.get("K")
    if uniform_f is not None or uniform_t is not None:
        n = len(uniform_f or uniform_t)
        fs = uniform_f or (1,) * n
        ts = uniform_t or (1,) * n
        if len(fs) != len(ts):
            raise ConfigError("model.dilations_t and model.dilations_f differ in length")
        cfg = cfg.with_dilations(tuple(zip(ts, fs)))
    elif k is not None and k != cfg.K:
        cfg = replace(cfg, K=k, dilations=None)
    if per_layer:
        dil = list(cfg.dilations)
        for layer, pairs in per_layer.items():
            dil[layer - DILATED_LAYERS[0]] = pairs
        cfg = replace(cfg, dilations=tuple(dil))
    if k is not None and k != cfg.K:
        raise ConfigError(f"model.K = {k} but dilations give {cfg.K} kernels")
    return cfg


def model_config_from_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    items = []
    for no, section, key, value in parse_items(text):
        if section != "model":
            raise ConfigError(f"line {no}: unexpected section {section!r} in model block")
        items.append((no, key, value))
    try:
        return _model_from_items(items, base or ModelConfig())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def model_config_to_text(cfg: ModelConfig) -> str:
    lines = [
        f"model.n_classes = {cfg.n_classes}",
        f"model.channels = {','.join(map(str, cfg.channels))}",
        f"model.pools = {_fmt_pairs(cfg.pools)}",
        f"model.K = {cfg.K}",
        f"model.gru_hidden = {cfg.gru_hidden}",
        f"model.gru_layers = {cfg.gru_layers}",
        f"model.temperature = {cfg.temperature!r}",
        f"model.attention_reduction = {cfg.attention_reduction}",
        f"model.n_mels = {cfg.n_mels}",
    ]
    for layer in DILATED_LAYERS:
        lines.append(f"model.layer{layer}.dilations = {_fmt_pairs(cfg.layer_dilations(layer))}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, base_dir: Path = Path(".")) -> RunConfig:
    sections: dict[str, list] = {"model": [], "feature": [], "train": [], "eval": [], "data": []}
    for no, section, key, value in parse_items(text):
        if section not in sections:
            raise ConfigError(f"line {no}: unknown section {section!r}")
        sections[section].append((no, key, value))

    cfg = RunConfig(base_dir=base_dir)
    try:
        cfg.model = _model_from_items(sections["model"], ModelConfig())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    def collect(section, table, target_cls, skip=()):
        kw = {}
        for no, key, value in sections[section]:
            if key not in table:
                raise ConfigError(f"line {no}: unknown key '{section}.{key}'")
            if key in skip:
                continue
            try:
                kw[key] = table[key](value)
            except ValueError as exc:
                raise ConfigError(f"line {no}: bad value for '{section}.{key}': {exc}") from None
        try:
            return target_cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from None

    cfg.feature = collect("feature", FEATURE_KEYS, MelConfig)
    cfg.train = collect("train", TRAIN_KEYS, TrainConfig, skip=AUG_KEYS)
    aug_items = [(no, k, v) for no, k, v in sections["train"] if k in AUG_KEYS]
    aug_kw = {k: TRAIN_KEYS[k](v) for _, k, v in aug_items}
    try:
        cfg.augment = AugmentConfig(**aug_kw)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    cfg.eval = collect("eval", EVAL_KEYS, EvalConfig)
    ev = cfg.eval
    for n in (ev.median,) + tuple(ev.median_candidates):
        if n < 1 or n % 2 == 0:
            raise ConfigError(f"eval: median filter lengths must be odd and >= 1, got {n}")
    if not ev.median_candidates:
        raise ConfigError("eval.median_candidates must not be empty")
    try:
        MatchCriteria(ev.rho_dtc, ev.rho_gtc)
    except ValueError as exc:
        raise ConfigError(f"eval: {exc}") from None
    if list(ev.thresholds) != sorted(ev.thresholds) or not all(0 < t < 1 for t in ev.thresholds):
        raise ConfigError("eval.thresholds must be sorted and inside (0, 1)")
    if cfg.feature.n_mels != cfg.model.n_mels:
        raise ConfigError(f"feature.n_mels ({cfg.feature.n_mels}) != model.n_mels ({cfg.model.n_mels})")

    for no, key, value in sections["data"]:
        if key not in DATA_KEYS:
            raise ConfigError(f"line {no}: unknown key 'data.{key}'")
        cfg.data[key] = (base_dir / value).resolve()
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


__all__ = [
    "ConfigError", "EvalConfig", "PRESETS", "RunConfig", "freq_dilations", "model_config_from_text",
    "model_config_to_text", "parse_config", "parse_config_text",
]
