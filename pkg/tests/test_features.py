import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfdsed.evaluation import Event
from dfdsed.features import (
    AudioClip, AudioFormatError, EventSpec, MelConfig, label_frame_duration, label_grid, logmel,
    mel_centers, mel_filterbank, n_frames, read_dump, read_wav, stft, synth_clip, synth_corpus,
    write_dump, write_wav,
)

SR = 16000


def sine(freq, seconds, sr=SR):
    return AudioClip(np.sin(2 * np.pi * freq * np.arange(int(seconds * sr)) / sr), sr)


def write_raw_wav(path, pcm, channels=1, width=2, rate=SR):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def test_ten_second_clip_has_626_frames():
    assert stft(np.zeros(160000)).shape == (626, 1025)


def test_440hz_peaks_at_bin_56():
    mag = stft(sine(440.0, 1.0))
    assert round(440 * 2048 / 16000) == 56
    assert np.all(np.argmax(mag[4:-4], axis=1) == 56)


def test_zero_signal():
    assert np.all(stft(np.zeros(4000)) == 0)
    lm = logmel(AudioClip(np.zeros(4000)))
    assert lm.shape == (1, 1, n_frames(4000, 256), 128)
    assert np.all(lm.data == np.log(1e-10))


def test_default_front_end_constants():
    cfg = MelConfig()
    assert (cfg.n_fft, cfg.hop, cfg.window, cfg.n_mels, cfg.sample_rate) == (2048, 256, "hamming", 128, 16000)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 20000), hop=st.sampled_from([128, 256, 512]))
def test_frame_count_formula(n, hop):
    assert stft(np.ones(n), hop=hop).shape[0] == n // hop + 1


def test_filterbank_rows_are_positive_and_contiguous():
    fb = mel_filterbank(MelConfig())
    assert fb.shape == (128, 1025)
    assert np.all(fb.sum(axis=1) > 0)
    for row in fb:
        nz = np.flatnonzero(row)
        assert nz[-1] - nz[0] + 1 == nz.size


def test_sine_lands_in_nearest_mel_band():
    cfg = MelConfig()
    lm = logmel(sine(440.0, 1.0), cfg).data[0, 0]
    nearest = int(np.argmin(np.abs(mel_centers(cfg) - 440.0)))
    assert np.all(np.argmax(lm[4:-4], axis=1) == nearest)


@pytest.mark.parametrize("c", [1.5, 4.0])
def test_louder_never_lowers_logmel(rng, c):
    x = 0.1 * rng.normal(size=8000)
    assert np.all(logmel(AudioClip(c * x)).data >= logmel(AudioClip(x)).data)


def test_invalid_mel_config():
    with pytest.raises(ValueError):
        MelConfig(hop=0)
    with pytest.raises(ValueError):
        MelConfig(window="hann")


# ---- WAV ------------------------------------------------------------------------

def test_wav_scaling_convention(tmp_path):
    write_raw_wav(tmp_path / "a.wav", np.array([0, -32768, 32767], dtype="<i2"))
    np.testing.assert_array_equal(read_wav(tmp_path / "a.wav").samples, [0.0, -1.0, 32767 / 32768])


def test_wav_round_trip(tmp_path, rng):
    x = np.round(rng.uniform(-0.9, 0.9, 1000) * 32768) / 32768
    write_wav(tmp_path / "b.wav", AudioClip(x))
    np.testing.assert_array_equal(read_wav(tmp_path / "b.wav").samples, x)


@pytest.mark.parametrize("kw", [dict(channels=2), dict(rate=44100), dict(width=1)])
def test_unsupported_wav_formats(tmp_path, kw):
    pcm = np.zeros(64, dtype="<i2" if kw.get("width", 2) == 2 else "u1")
    write_raw_wav(tmp_path / "c.wav", pcm, **kw)
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "c.wav")


def test_garbage_wav(tmp_path):
    (tmp_path / "d.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "d.wav")


def test_dump_round_trip(tmp_path, rng):
    g = rng.normal(size=(7, 5)).astype(np.float32)
    write_dump(tmp_path / "g.bin", g)
    np.testing.assert_array_equal(read_dump(tmp_path / "g.bin"), g)
    (tmp_path / "h.bin").write_bytes((tmp_path / "g.bin").read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_dump(tmp_path / "h.bin")


# ---- labels and the synthetic corpus ---------------------------------------------------

def test_one_second_event_label_frames():
    fd = label_frame_duration()
    assert fd == 0.064
    grid = label_grid([Event("x", "Dog", 1.0, 2.0)], 40, fd)
    active = np.flatnonzero(grid[:, 4])
    assert (active[0], active[-1]) == (15, 31)


def test_empty_clip_is_silent():
    sc = synth_clip(3, [], duration=1.024)
    assert np.all(sc.clip.samples == 0) and np.all(sc.labels == 0) and sc.events == []


def test_synth_is_deterministic():
    ev = [EventSpec("Speech", 0.2, 0.9), EventSpec("Blender", 0.5, 1.5)]
    a, b = synth_clip(11, ev), synth_clip(11, ev)
    np.testing.assert_array_equal(a.clip.samples, b.clip.samples)
    assert a.labels.shape == (32, 10)


def test_synth_rejects_bad_events():
    with pytest.raises(ValueError):
        synth_clip(0, [EventSpec("Piano", 0.1, 0.5)])
    with pytest.raises(ValueError):
        synth_clip(0, [EventSpec("Dog", 1.5, 3.0)], duration=2.048)


def test_corpus_ids_and_event_counts():
    corpus = synth_corpus(5, 6, max_events=2)
    assert [c.clip_id for c in corpus] == [f"synth_{i:04d}.wav" for i in range(6)]
    assert all(1 <= len(c.events) <= 2 for c in corpus)
    assert all(len({e.label for e in c.events}) == len(c.events) for c in corpus)
