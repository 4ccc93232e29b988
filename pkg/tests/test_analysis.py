import numpy as np
import pytest

from dfdsed.analysis import AttentionRecord, AttentionStats, attention_variance, collect_attention, export_variance, \
    read_variance
from dfdsed.model import ModelConfig, build_crnn, freq_dilations
from oracles import variance_oracle


def test_two_opposite_vectors_give_one_half():
    rec = AttentionRecord({2: np.array([[[1.0, 0.0]], [[0.0, 1.0]]])})
    assert attention_variance(rec).var[2].tolist() == [0.5]


def test_single_clip_has_zero_spread(rng):
    w = rng.dirichlet(np.ones(4), size=(1, 6))
    assert np.all(attention_variance(AttentionRecord({3: w})).var[3] == 0)


def test_matches_double_loop(rng):
    for _ in range(20):
        N, F, K = rng.integers(1, 9), rng.integers(1, 7), rng.integers(1, 6)
        w = rng.dirichlet(np.ones(K), size=(N, F))
        got = attention_variance(AttentionRecord({5: w})).var[5]
        assert np.max(np.abs(got - np.array(variance_oracle(w.tolist())))) < 1e-12


def test_trace_of_covariance(rng):
    w = rng.dirichlet(np.ones(3), size=(12, 4))
    got = attention_variance(AttentionRecord({2: w})).var[2]
    want = [np.trace(np.cov(w[:, f].T, bias=True)) for f in range(4)]
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_empty_record_rejected():
    with pytest.raises(ValueError):
        attention_variance(AttentionRecord({}))


def test_collect_from_a_model(rng):
    cfg = ModelConfig(channels=(2, 3, 3, 3, 3, 3, 3), gru_hidden=4, gru_layers=1).with_dilations(
        freq_dilations((1, 2, 3, 3)))
    model = build_crnn(cfg, 0)
    clip = rng.normal(size=(16, 128))
    rec = collect_attention(model, [clip, clip, rng.normal(size=(16, 128))])
    assert sorted(rec.weights) == [2, 3, 4, 5, 6, 7]
    assert [rec.weights[l].shape for l in range(2, 8)] == [(3, f, 4) for f in (64, 32, 16, 8, 4, 2)]
    np.testing.assert_array_equal(rec.weights[4][0], rec.weights[4][1])
    for w in rec.weights.values():
        assert np.all(np.abs(w.sum(axis=2) - 1) < 1e-12)


def test_export_layout_and_round_trip(tmp_path, rng):
    stats = AttentionStats({3: rng.random(3) / 7, 2: rng.random(3) / 3}, n=5)
    export_variance(stats, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "layer,freq,variance" and len(lines) == 7
    assert [l.split(",")[:2] for l in lines[1:]] == [[str(a), str(b)] for a in (2, 3) for b in range(3)]
    back = read_variance(tmp_path / "v.csv")
    for layer in (2, 3):
        np.testing.assert_array_equal(back.var[layer], stats.var[layer])


def test_export_empty(tmp_path):
    export_variance(AttentionStats({}, 0), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "layer,freq,variance\n"
