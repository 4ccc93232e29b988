"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion is
printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from dfdsed.analysis import AttentionRecord, attention_variance, collect_attention
from dfdsed.cli import micro_gradcheck
from dfdsed.evaluation import (
    Event, MatchCriteria, MedianFilterPlan, classwise_mf_search, intersection_f1, match_events, median_filter_1d,
    psds_lite,
)
from dfdsed.features import (
    CLASSES, MelConfig, label_frame_duration, mel_filterbank, stft, synth_corpus,
)
from dfdsed.functional import conv2d, gru_sequence, init_gru, same_padding, softmax_axis
from dfdsed.gradcheck import grad_check
from dfdsed.layers import DfdLayerConfig, dfd_forward, init_dfd_layer
from dfdsed.model import ModelConfig, build_crnn, freq_dilations, model_param_count
from dfdsed.pipeline import TrainConfig, decode, fit, make_example, predict, recalibrate_bn
from dfdsed.tensor import Tensor
from oracles import (
    GRID, f1_oracle, match_oracle, median_oracle, mf_search_oracle, psds_oracle, random_events, random_scores,
    refs_on_frames, variance_oracle,
)

# frequency dilations of the four-kernel configurations compared in the dilation study
FREQ_ROWS = [
    (1, 1, 1, 1), (1, 1, 1, 2), (1, 1, 2, 2), (1, 2, 2, 2), (2, 2, 2, 2), (1, 1, 1, 3), (1, 1, 3, 3),
    (1, 1, 1, 4), (1, 1, 4, 4), (1, 1, 2, 3), (1, 2, 2, 3), (1, 2, 3, 3), (2, 2, 3, 3), (1, 2, 3, 4),
]
# (d_t, d_f) per kernel: baseline, one frequency-dilated, one time-dilated, one of each
PAIR_ROWS_K4 = [
    ((1, 1), (1, 1), (1, 1), (1, 1)),
    ((1, 1), (1, 1), (1, 1), (1, 2)),
    ((1, 1), (1, 1), (1, 1), (2, 1)),
    ((1, 1), (1, 1), (1, 2), (2, 1)),
]
PAIR_ROWS_K5 = [
    ((1, 1),) * 4 + ((1, 2),),
    ((1, 1),) * 4 + ((2, 1),),
]


def rel_grad_check(f, inputs):
    return grad_check(f, inputs, step=1e-5, tol=1e-5)


# ---- 1 ---------------------------------------------------------------------------------

def test_criterion_01_gradients(criterion):
    with criterion(1, "finite-difference gradient checks below 1e-5") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        p = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)  # noqa: E731
        errs = {}

        x, w, b = p(2, 2, 5, 7), p(3, 2, 3, 3), p(3)
        k = rng.normal(size=(2, 3, 5, 7))
        errs["conv2d"] = rel_grad_check(lambda x, w, b: (conv2d(x, w, b, padding=(1, 2), dilation=(1, 2)) * k).sum(),
                                        [x, w, b])

        s = p(3, 5)
        ks = rng.normal(size=(3, 5))
        errs["softmax"] = rel_grad_check(lambda s: (softmax_axis(s, axis=1, temperature=3.0) * ks).sum(), [s])

        gp = init_gru(3, 4, rng)
        xg = p(2, 5, 3)
        kg = rng.normal(size=(2, 5, 4))
        errs["gru"] = rel_grad_check(lambda *a: (gru_sequence(xg, gp, "backward") * kg).sum(),
                                     [xg, gp.w_ih, gp.w_hh, gp.bias])

        lc = DfdLayerConfig(2, 3, K=4, dilations=freq_dilations((1, 2, 3, 3)), temperature=1.0, attention_reduction=1)
        lp = init_dfd_layer(lc, 1)
        xl = p(2, 2, 4, 9)
        kl = rng.normal(size=(2, 3, 4, 9))
        errs["dfd layer"] = rel_grad_check(lambda *a: (dfd_forward(xl, lp, lc) * kl).sum(),
                                           [xl] + list(lp.named("l").values()))

        # the same micro model and seed that `dfdsed gradcheck` uses by default
        errs["micro crnn"] = micro_gradcheck(seed=0, tol=1e-5)

        elapsed = time.perf_counter() - t0
        worst = max(r.max_rel_err for r in errs.values())
        c.detail = f"worst {worst:.1e}, {elapsed:.1f} s"
        assert all(r.passed for r in errs.values()), {k: r.max_rel_err for k, r in errs.items()}
        assert elapsed < 60


# ---- 2 ---------------------------------------------------------------------------------

def test_criterion_02_parameter_count_ignores_dilation(criterion):
    with criterion(2, "parameter count constant across dilations, larger for K=5") as c:
        base = ModelConfig()
        k4 = {model_param_count(build_crnn(base.with_dilations(r), 0)) for r in PAIR_ROWS_K4}
        k4 |= {model_param_count(build_crnn(base.with_dilations(freq_dilations(r)), 0)) for r in FREQ_ROWS}
        k5 = {model_param_count(build_crnn(base.with_dilations(r), 0)) for r in PAIR_ROWS_K5}
        c.detail = f"K=4: {sorted(k4)}, K=5: {sorted(k5)}"
        assert len(k4) == 1 and len(k5) == 1
        assert min(k5) > max(k4)


# ---- 3 ---------------------------------------------------------------------------------

def test_criterion_03_one_hot_attention_is_plain_conv(criterion):
    with criterion(3, "one-hot attention equals the chosen dilated conv on 100 configs") as c:
        rng = np.random.default_rng(3)
        worst = 0.0
        for trial in range(100):
            K = int(rng.integers(1, 5))
            dil = tuple((int(rng.integers(1, 3)), int(rng.integers(1, 4))) for _ in range(K))
            cfg = DfdLayerConfig(int(rng.integers(1, 4)), int(rng.integers(1, 4)), K=K, dilations=dil,
                                 temperature=float(rng.choice([1.0, 31.0])), attention_reduction=int(rng.integers(1, 3)))
            params = init_dfd_layer(cfg, trial)
            for bias in params.basis_biases:
                bias.data[:] = rng.normal(size=bias.shape)
            F = int(rng.integers(max(d for _, d in dil) + 1, 11))
            x = Tensor(rng.normal(size=(int(rng.integers(1, 3)), cfg.in_channels, int(rng.integers(3, 7)), F)))
            j = int(rng.integers(K))
            got = dfd_forward(x, params, cfg, force_kernel=j).data
            want = conv2d(x, params.basis_weights[j], params.basis_biases[j], padding=same_padding(dil[j]),
                          dilation=dil[j]).data
            worst = max(worst, float(np.max(np.abs(got - want))))
        c.detail = f"max abs diff {worst:.1e}"
        assert worst < 1e-12


# ---- 4 ---------------------------------------------------------------------------------

def sensitive_offsets(dilations, seed, F=17):
    cfg = DfdLayerConfig(2, 2, K=len(dilations), dilations=dilations)
    params = init_dfd_layer(cfg, seed)
    x = np.random.default_rng(seed).normal(size=(1, 2, 5, F))
    f0 = F // 2
    base = dfd_forward(Tensor(x), params, cfg).data[0, :, 2, f0]
    hits = []
    for off in range(-f0, F - f0):
        x2 = x.copy()
        x2[0, :, 2, f0 + off] += 1.0
        if np.any(dfd_forward(Tensor(x2), params, cfg).data[0, :, 2, f0] != base):
            hits.append(off)
    return hits


def test_criterion_04_receptive_field(criterion):
    with criterion(4, "frequency receptive field is exactly +-d_f, mixed layer spans +-3") as c:
        spans = {}
        for d in (1, 2, 3, 4):
            hits = sensitive_offsets(((1, d),), seed=d)
            assert hits == [-d, 0, d], (d, hits)
            spans[d] = max(hits)
        mixed = sensitive_offsets(freq_dilations((1, 2, 3, 3)), seed=9)
        assert mixed == list(range(-3, 4)), mixed
        c.detail = f"single-kernel spans {spans}, mixed span {max(mixed)}"


# ---- 5 ---------------------------------------------------------------------------------

def test_criterion_05_attention_sums_to_one(criterion):
    with criterion(5, "attention vectors sum to 1 over a 100-clip corpus") as c:
        mel = MelConfig()
        clips = [make_example(s.clip_id, s.clip, s.events, mel).features for s in synth_corpus(5, 100)]
        model = build_crnn(ModelConfig().with_dilations(freq_dilations((1, 2, 3, 3))), 0)
        rec = collect_attention(model, clips)
        worst = max(float(np.max(np.abs(w.sum(axis=2) - 1.0))) for w in rec.weights.values())
        n = sum(w.shape[0] * w.shape[1] for w in rec.weights.values())
        c.detail = f"{n} vectors, max deviation {worst:.1e}"
        assert rec.n_clips == 100 and worst < 1e-9


# ---- 6 ---------------------------------------------------------------------------------

def test_criterion_06_variance_oracle(criterion):
    with criterion(6, "attention variance equals a double-loop oracle; hand case gives 0.5") as c:
        hand = attention_variance(AttentionRecord({2: np.array([[[1.0, 0.0]], [[0.0, 1.0]]])})).var[2]
        assert hand.tolist() == [0.5]
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(50):
            N, F, K = (int(v) for v in rng.integers(1, 10, size=3))
            w = rng.dirichlet(np.ones(K), size=(N, F))
            got = attention_variance(AttentionRecord({3: w})).var[3]
            worst = max(worst, float(np.max(np.abs(got - np.array(variance_oracle(w.tolist()))))))
        c.detail = f"max abs diff {worst:.1e}"
        assert worst < 1e-12


# ---- 7 ---------------------------------------------------------------------------------

def test_criterion_07_scoring_oracles(criterion):
    with criterion(7, "scoring functions match brute force on 1000 scenarios each") as c:
        rng = np.random.default_rng(7)
        classes = ("x", "y")
        worst_psds = 0.0
        for _ in range(1000):
            x = rng.random(int(rng.integers(1, 25)))
            n = 2 * int(rng.integers(0, 6)) + 1
            assert np.array_equal(median_filter_1d(x, n), median_oracle(x, n))

            dets, refs = random_events(rng, int(rng.integers(0, 5))), random_events(rng, int(rng.integers(0, 5)))
            rho = tuple(float(v) for v in rng.choice([0.25, 0.5, 0.75, 1.0], size=2))
            got = match_events(dets, refs, MatchCriteria(*rho))
            assert (got.tp, got.fp, got.fn) == match_oracle(dets, refs, *rho)

            report = intersection_f1(dets, refs, MatchCriteria(*rho), classes)
            per_class, macro = f1_oracle(dets, refs, classes, *rho)
            assert report.per_class == per_class and abs(report.macro - macro) < 1e-12

            scores = random_scores(rng, frames=int(rng.integers(4, 12)))
            srefs = refs_on_frames(rng, scores, classes)
            th = sorted(set(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=3).tolist()))
            emax = float(rng.choice([100.0, 2000.0, 20000.0]))
            diff = abs(psds_lite(scores, srefs, classes, GRID, th, emax)
                       - psds_oracle(scores, srefs, classes, GRID, th, emax))
            worst_psds = max(worst_psds, diff)
        c.detail = f"psds max abs diff {worst_psds:.1e}"
        assert worst_psds < 1e-12


# ---- 8 ---------------------------------------------------------------------------------

def spiky_corpus(seed, n_clips=6, frames=40):
    """Class A: long events plus isolated one-frame spikes. Class B: clean long events."""
    rng = np.random.default_rng(seed)
    scores, refs = {}, []
    for i in range(n_clips):
        cid = f"clip{i}"
        grid = np.zeros((frames, 2))
        for c, label in enumerate(("A", "B")):
            a = int(rng.integers(2, 15))
            b = a + int(rng.integers(8, 16))
            grid[a:b, c] = 0.9
            refs.append(Event(cid, label, a * GRID, b * GRID))
        outside = [t for t in range(1, frames - 1) if grid[t - 1:t + 2, 0].max() == 0]
        for t in rng.choice(outside, size=min(4, len(outside)), replace=False):
            grid[t, 0] = 0.95
        scores[cid] = grid
    return scores, refs


def test_criterion_08_classwise_median_search(criterion):
    with criterion(8, "median search lengthens the filter for spiky A and keeps 1 for clean B") as c:
        scores, refs = spiky_corpus(8)
        cands = [1, 3, 5, 7, 9]
        plan = classwise_mf_search(scores, refs, ("A", "B"), cands, GRID)
        oracle = mf_search_oracle(scores, refs, ("A", "B"), cands, GRID)
        c.detail = f"plan {plan.lengths}"
        assert plan.lengths == oracle
        assert plan.lengths["A"] > 1 and plan.lengths["B"] == 1


# ---- 9 ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_data():
    mel = MelConfig()
    train = [make_example(s.clip_id, s.clip, s.events, mel) for s in synth_corpus(1, 32)]
    held_out = [make_example(s.clip_id, s.clip, s.events, mel) for s in synth_corpus(2, 32, prefix="test")]
    return train, held_out


def test_criterion_09_toy_end_to_end(criterion, toy_data):
    with criterion(9, "toy DFD training reaches held-out F1 > 0.8 and FDY loss halves") as c:
        t0 = time.perf_counter()
        train, held_out = toy_data
        fd = label_frame_duration()

        dfd = build_crnn(ModelConfig().with_dilations(freq_dilations((1, 2, 3, 3))), 0)
        fit(dfd, train, TrainConfig(steps=400, log_every=0))
        recalibrate_bn(dfd, train)
        dets = decode(predict(dfd, held_out), MedianFilterPlan.uniform(CLASSES, 7), CLASSES, fd)
        refs = [e for ex in held_out for e in ex.events]
        f1 = intersection_f1(dets, refs, MatchCriteria(), CLASSES).macro

        fdy = build_crnn(ModelConfig(), 0)
        losses = fit(fdy, train, TrainConfig(steps=150, log_every=0))
        ratio = float(np.mean(losses[-20:]) / losses[0])

        elapsed = time.perf_counter() - t0
        c.detail = f"DFD macro F1 {f1:.3f}, FDY loss ratio {ratio:.2f}, {elapsed:.0f} s"
        assert f1 > 0.8
        assert ratio <= 0.5
        assert elapsed < 600


# ---- 10 --------------------------------------------------------------------------------

def test_criterion_10_feature_contract(criterion):
    with criterion(10, "626 frames for 10 s, 440 Hz at bin 56, front-end constants") as c:
        frames = stft(np.zeros(160000)).shape[0]
        t = np.arange(16000) / 16000
        peak = np.argmax(stft(np.sin(2 * np.pi * 440.0 * t)), axis=1)[4:-4]
        cfg = MelConfig()
        c.detail = f"{frames} frames, peak bins {sorted(set(peak.tolist()))}"
        assert frames == 626
        assert np.all(peak == 56)
        assert (cfg.n_fft, cfg.hop, cfg.window, cfg.n_mels) == (2048, 256, "hamming", 128)
        assert mel_filterbank(cfg).shape == (128, 1025)
