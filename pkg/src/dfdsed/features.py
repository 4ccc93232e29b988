"""Audio I/O, log-mel features and a synthetic clip generator.

Features follow the model's front end: 16 kHz audio, 2048-point FFT with a
Hamming window, hop 256, 128 Slaney mel bands, natural log with a small floor.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

SAMPLE_RATE = 16000

# DESED-style vocabulary, used here only as names for the synthetic classes
CLASSES = (
    "Alarm_bell_ringing", "Blender", "Cat", "Dishes", "Dog",
    "Electric_shaver_toothbrush", "Frying", "Running_water", "Speech", "Vacuum_cleaner",
)


class AudioFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 2048
    hop: int = 256
    window: str = "hamming"
    n_mels: int = 128
    sample_rate: int = SAMPLE_RATE
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop <= 0 or self.n_fft <= 0:
            raise ValueError("n_fft and hop must be positive")
        if self.n_mels > self.n_fft // 2 + 1:
            raise ValueError(f"n_mels={self.n_mels} exceeds {self.n_fft // 2 + 1} FFT bins")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")


# -- WAV ----------------------------------------------------------------------

def read_wav(path) -> AudioClip:
    """Decode a 16-bit PCM mono 16 kHz WAV file into floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise AudioFormatError(f"{path}: malformed WAV ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (no resampling)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(to_pcm16(clip.samples).tobytes())


# -- spectra ------------------------------------------------------------------------

def hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / (n - 1))


def n_frames(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def stft(clip, n_fft: int = 2048, hop: int = 256, window: str = "hamming") -> np.ndarray:
    """Magnitude STFT, shape (frames, n_fft // 2 + 1), reflect-padded by n_fft // 2."""
    if hop <= 0:
        raise ValueError(f"hop must be positive, got {hop}")
    if window != "hamming":
        raise ValueError(f"unsupported window {window!r}")
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if x.size < 1:
        raise ValueError("empty signal")
    xp = np.pad(x, n_fft // 2, mode="reflect") if x.size > 1 else np.pad(x, n_fft // 2)
    frames = n_frames(x.size, hop)
    idx = np.arange(frames)[:, None] * hop + np.arange(n_fft)[None, :]
    return np.abs(np.fft.rfft(xp[idx] * hamming(n_fft), axis=1))


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, logstep = 1000.0, np.log(6.4) / 27.0
    mel = f / f_sp
    return np.where(f >= min_log_hz, min_log_hz / f_sp + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, mel)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, logstep = 1000.0, np.log(6.4) / 27.0
    min_log_mel = min_log_hz / f_sp
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_centers(cfg: MelConfig) -> np.ndarray:
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return pts[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Area-normalised triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0, cfg.sample_rate / 2, cfg.n_fft // 2 + 1)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (fft_freqs[None, :] - lo) / (mid - lo)
    down = (hi - fft_freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    return fb * (2.0 / (hi - lo))


def mel_power(clip, cfg: MelConfig = MelConfig()) -> np.ndarray:
    mag = stft(clip, cfg.n_fft, cfg.hop, cfg.window)
    return (mag ** 2) @ mel_filterbank(cfg).T


def logmel(clip, cfg: MelConfig = MelConfig()) -> Tensor:
    """Log-mel features as a (1, 1, frames, n_mels) tensor."""
    return Tensor(np.log(mel_power(clip, cfg) + cfg.log_floor)[None, None])


# -- feature / score dumps -----------------------------------------------------------

def write_dump(path, grid: np.ndarray) -> None:
    """(frames, bins) grid as two little-endian u32 then float32 data."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"dump expects a 2-d grid, got shape {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *grid.shape))
        fh.write(grid.astype("<f4").tobytes())


def read_dump(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated dump header")
    frames, bins = struct.unpack("<II", raw[:8])
    body = raw[8:]
    if len(body) != 4 * frames * bins:
        raise ValueError(f"{path}: expected {frames}x{bins} values, got {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(frames, bins).astype(np.float64)


# -- synthetic corpus ----------------------------------------------------------------

@dataclass(frozen=True)
class EventSpec:
    label: str
    onset: float
    offset: float


@dataclass
class SynthClip:
    clip: AudioClip
    events: list  # list[evaluation.Event]
    labels: np.ndarray  # (output frames, n_classes)
    clip_id: str = ""


def class_band(label: str) -> tuple[float, float]:
    """Centre frequency and relative bandwidth of a synthetic class."""
    i = CLASSES.index(label)
    centre = float(np.geomspace(300.0, 6000.0, len(CLASSES))[i])
    return centre, 0.12


def label_frame_duration(hop: int = 256, time_pool: int = 4, sample_rate: int = SAMPLE_RATE) -> float:
    return hop * time_pool / sample_rate


def model_frames(n_samples: int, hop: int = 256, time_pool: int = 4) -> int:
    """STFT frames kept for the model: cropped down to a multiple of the time pooling."""
    return n_frames(n_samples, hop) // time_pool * time_pool


def label_grid(events, n_out: int, frame_dur: float, classes=CLASSES) -> np.ndarray:
    """Mark every output frame that overlaps an event."""
    grid = np.zeros((n_out, len(classes)))
    for ev in events:
        c = classes.index(ev.label)
        start = int(np.floor(ev.onset / frame_dur + 1e-9))
        stop = int(np.ceil(ev.offset / frame_dur - 1e-9))
        grid[max(start, 0):min(stop, n_out), c] = 1.0
    return grid


def _event_signal(rng: np.random.Generator, label: str, n: int, sr: int) -> np.ndarray:
    centre, rel_bw = class_band(label)
    t = np.arange(n) / sr
    if CLASSES.index(label) % 2 == 0:
        sig = np.sin(2 * np.pi * centre * t + rng.uniform(0, 2 * np.pi))
    else:
        spectrum = np.fft.rfft(rng.normal(size=n))
        f = np.fft.rfftfreq(n, 1 / sr)
        spectrum[np.abs(f - centre) > rel_bw * centre] = 0.0
        sig = np.fft.irfft(spectrum, n)
        sig /= np.max(np.abs(sig)) + 1e-12
    ramp = min(n // 2, int(0.01 * sr))
    if ramp:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        sig = sig * env
    return sig


def synth_clip(seed: int, events, duration: float = 2.048, sample_rate: int = SAMPLE_RATE,
               hop: int = 256, time_pool: int = 4, noise_level: float = 0.003,
               clip_id: str = "clip") -> SynthClip:
    """Render ``events`` (EventSpec list) as tones / band noise over faint white noise."""
    from .evaluation import Event

    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    x = noise_level * rng.normal(size=n) if events else np.zeros(n)
    out_events = []
    for es in events:
        if es.label not in CLASSES:
            raise ValueError(f"unknown class {es.label!r}")
        if not 0 <= es.onset < es.offset <= duration + 1e-9:
            raise ValueError(f"event {es} outside clip of {duration} s")
        a, b = int(round(es.onset * sample_rate)), int(round(es.offset * sample_rate))
        x[a:b] += rng.uniform(0.2, 0.4) * _event_signal(rng, es.label, b - a, sample_rate)
        out_events.append(Event(clip_id, es.label, es.onset, es.offset))
    x = np.clip(x, -1.0, 1.0)
    n_out = model_frames(n, hop, time_pool) // time_pool
    labels = label_grid(out_events, n_out, label_frame_duration(hop, time_pool, sample_rate))
    return SynthClip(AudioClip(x, sample_rate), out_events, labels, clip_id)


def random_events(rng: np.random.Generator, duration: float, max_events: int = 3,
                  min_len: float = 0.3, max_len: float = 1.0) -> list[EventSpec]:
    """Up to ``max_events`` events of distinct classes, at least one per clip."""
    k = int(rng.integers(1, max_events + 1))
    labels = rng.choice(len(CLASSES), size=k, replace=False)
    out = []
    for c in labels:
        length = float(rng.uniform(min_len, min(max_len, duration)))
        onset = float(rng.uniform(0, duration - length))
        out.append(EventSpec(CLASSES[int(c)], round(onset, 3), round(onset + length, 3)))
    return sorted(out, key=lambda e: (e.onset, e.label))


def synth_corpus(seed: int, n_clips: int, duration: float = 2.048, max_events: int = 2,
                 prefix: str = "synth") -> list[SynthClip]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_clips):
        events = random_events(rng, duration, max_events)
        clip_seed = int(rng.integers(2 ** 31))
        out.append(synth_clip(clip_seed, events, duration, clip_id=f"{prefix}_{i:04d}.wav"))
    return out
