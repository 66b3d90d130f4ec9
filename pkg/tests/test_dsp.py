import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigru_eeg.dataio import ClassLabel, EegRecording, SynthSpec, synth_generate
from bigru_eeg.dsp import (
    ChannelStats,
    FilterSpec,
    PipelineConfig,
    PipelineReport,
    WindowSample,
    augment_gaussian,
    balance_undersample,
    bandpass_array,
    bandpass_filter,
    load_split,
    run_pipeline,
    save_split,
    split_indices,
    standardize,
    window_segments,
)
from bigru_eeg.errors import (
    BadParams,
    InvalidFilterSpec,
    MissingClass,
    TooFewSamples,
    ZeroVariance,
)

FS = 128


def sine_gain(freq, fs=FS, seconds=8, margin=1):
    """FFT magnitude ratio at ``freq`` over a steady-state segment."""
    t = np.arange((seconds + 2 * margin) * fs) / fs
    x = np.sin(2 * np.pi * freq * t)[:, None]
    y = bandpass_array(x, fs, FilterSpec(1, 30, 4, True))
    seg = slice(margin * fs, (margin + seconds) * fs)
    k = int(round(freq * seconds))
    return np.abs(np.fft.rfft(y[seg, 0]))[k] / np.abs(np.fft.rfft(x[seg, 0]))[k]


def rec(samples, label=ClassLabel.TRUTH, subject="s", run="r"):
    return EegRecording(subject, run, label, samples)


def test_filter_removes_dc():
    y = bandpass_filter(rec(np.full((4 * FS, 13), 5.0))).samples
    assert np.abs(y[FS:]).max() < 1e-3 * 5.0


def test_filter_passband_and_stopbands():
    assert 0.95 <= sine_gain(10) <= 1.05
    assert 20 * np.log10(sine_gain(60)) <= -20
    assert 20 * np.log10(sine_gain(0.25)) <= -20


def test_filter_linear():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 600, 13))
    a, b = 2.5, -0.75
    lhs = bandpass_array(a * x + b * y, FS)
    rhs = a * bandpass_array(x, FS) + b * bandpass_array(y, FS)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9 * np.abs(rhs).max())


def test_filter_shape_and_channel_independence():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((300, 13))
    y = bandpass_array(x, FS)
    assert y.shape == x.shape
    np.testing.assert_allclose(y[:, 3], bandpass_array(x[:, 3:4], FS)[:, 0], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("spec", [FilterSpec(0, 30), FilterSpec(30, 10), FilterSpec(1, 64), FilterSpec(1, 30, order=3)])
def test_filter_invalid(spec):
    with pytest.raises(InvalidFilterSpec):
        bandpass_array(np.ones((100, 1)), FS, spec)


def test_filter_short_recording():
    y = bandpass_array(np.random.default_rng(2).standard_normal((10, 13)), FS)
    assert y.shape == (10, 13) and np.all(np.isfinite(y))


def test_standardize_definition():
    rng = np.random.default_rng(3)
    x = 2.0 + 3.0 * rng.standard_normal((5000, 13))
    (out,), stats = standardize([rec(x)], "per_recording")
    np.testing.assert_allclose(out.samples.mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(out.samples.std(axis=0), 1, atol=1e-6)
    (again,), _ = standardize([out], "per_recording")
    np.testing.assert_allclose(again.samples, out.samples, atol=1e-9)
    assert stats.source == "per_recording"


def test_standardize_training_set_stats_reused():
    rng = np.random.default_rng(4)
    a, b = rec(rng.standard_normal((100, 13)) + 1), rec(rng.standard_normal((50, 13)) * 2)
    out, stats = standardize([a, b], "training_set")
    pooled = np.concatenate([a.samples, b.samples])
    np.testing.assert_allclose(stats.mean, pooled.mean(axis=0))
    np.testing.assert_allclose(stats.std, pooled.std(axis=0))
    c = rec(rng.standard_normal((10, 13)))
    np.testing.assert_allclose(stats.apply(c).samples, (c.samples - stats.mean) / stats.std)


def test_standardize_zero_variance():
    x = np.random.default_rng(5).standard_normal((20, 13))
    x[:, 7] = 3.0
    with pytest.raises(ZeroVariance):
        standardize([rec(x)], "per_recording")


def brute_force_starts(n, T, sr):
    return [s for s in range(0, n) if s % sr == 0 and s + T <= n]


@pytest.mark.parametrize("n, starts", [(64, [0]), (160, [0, 32, 64, 96]), (95, [0])])
def test_window_examples(n, starts):
    x = np.arange(n * 13, dtype=float).reshape(n, 13)
    ws = window_segments(rec(x), 64, 32)
    assert [w.origin[2] * 32 for w in ws] == starts
    assert starts == brute_force_starts(n, 64, 32)
    for w, s in zip(ws, starts):
        np.testing.assert_array_equal(w.data, x[s : s + 64])
        assert w.label == ClassLabel.TRUTH and not w.augmented


def test_window_short_and_bad_params(caplog):
    assert window_segments(rec(np.ones((10, 13))), 64, 32) == []
    assert "no windows" in caplog.text
    for T, sr in [(0, 1), (4, 0), (4, 5)]:
        with pytest.raises(BadParams):
            window_segments(rec(np.ones((10, 13))), T, sr)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 400), T=st.integers(1, 40), data=st.data())
def test_window_count_and_overlap(n, T, data):
    sr = data.draw(st.integers(1, T))
    x = np.random.default_rng(n).standard_normal((n, 13))
    ws = window_segments(rec(x), T, sr)
    assert len(ws) == len(brute_force_starts(n, T, sr))
    if n >= T:
        assert len(ws) == (n - T) // sr + 1
    for a, b in zip(ws, ws[1:]):
        np.testing.assert_array_equal(a.data[sr:], b.data[: T - sr])


def samples_with(counts, shape=(1, 1)):
    out = []
    for label, n in counts.items():
        for i in range(n):
            out.append(WindowSample(np.full(shape, float(len(out))), ClassLabel(label), ("s", str(label), i)))
    # interleave classes so order preservation is meaningful
    return sorted(out, key=lambda s: (s.origin[2], s.origin[1]))


def test_balance_examples():
    out = balance_undersample(samples_with({0: 108, 1: 93}), seed=0)
    labs = [int(s.label) for s in out]
    assert labs.count(0) == 93 and labs.count(1) == 93
    same = samples_with({0: 5, 1: 5})
    assert balance_undersample(same, seed=3) == same
    with pytest.raises(MissingClass):
        balance_undersample(samples_with({0: 10, 1: 0}), seed=0)


def test_balance_preserves_order_and_minority():
    s = samples_with({0: 30, 1: 12})
    out = balance_undersample(s, seed=1)
    positions = [s.index(o) for o in out]
    assert positions == sorted(positions)
    assert [o for o in out if o.label == 1] == [o for o in s if o.label == 1]


def test_augment_zero_noise_and_determinism():
    s = samples_with({0: 3, 1: 3}, shape=(8, 13))
    for w in s:
        w.data = np.random.default_rng(int(w.data[0, 0])).standard_normal((8, 13))
    copies = augment_gaussian(s, 0.0, seed=1)
    for c, o in zip(copies, s):
        assert c.data.tobytes() == o.data.tobytes() and c.augmented and not o.augmented
        assert c.data is not o.data
    a = augment_gaussian(s, 0.02, seed=5)
    b = augment_gaussian(s, 0.02, seed=5)
    for x, y in zip(a, b):
        assert x.data.tobytes() == y.data.tobytes()
    with pytest.raises(BadParams):
        augment_gaussian(s, -1.0, seed=0)


def test_augment_noise_scale():
    rng = np.random.default_rng(0)
    scales = rng.uniform(0.5, 5.0, 13)
    s = [
        WindowSample(rng.standard_normal((64, 13)) * scales, ClassLabel.TRUTH, ("s", "r", i))
        for i in range(10_000)
    ]
    copies = augment_gaussian(s, 0.02, seed=9)
    # normalise each window's noise by the per-window target std, then pool
    z = np.stack([(c.data - o.data) / (0.02 * o.data.std(axis=0)) for c, o in zip(copies, s)])
    emp = z.reshape(-1, 13).std(axis=0)
    assert np.all(np.abs(emp - 1.0) < 0.05)


def test_split_examples():
    labels = [0] * 50 + [1] * 50
    tr, te = split_indices(labels, 0.2, seed=0)
    assert len(tr) == 80 and len(te) == 20
    assert sum(labels[i] for i in te) == 10
    tr2, te2 = split_indices(labels, 0.2, seed=0)
    np.testing.assert_array_equal(te, te2)
    tr, te = split_indices([0, 1, 0, 1, 0], 0.2, seed=0, stratified=False)
    assert len(tr) == 4 and len(te) == 1
    assert set(tr) | set(te) == set(range(5)) and not set(tr) & set(te)


def test_split_errors():
    with pytest.raises(TooFewSamples):
        split_indices([0, 0, 0, 1], 0.2, seed=0)
    with pytest.raises(BadParams):
        split_indices([0, 1] * 5, 1.0, seed=0)


@settings(max_examples=80, deadline=None)
@given(n0=st.integers(2, 200), n1=st.integers(2, 200), frac=st.floats(0.05, 0.5), seed=st.integers(0, 2**32 - 1))
def test_split_stratified_properties(n0, n1, frac, seed):
    labels = np.array([0] * n0 + [1] * n1)
    np.random.default_rng(seed).shuffle(labels)
    try:
        tr, te = split_indices(labels, frac, seed)
    except TooFewSamples:
        return
    n = n0 + n1
    assert len(te) == max(1, int(np.floor(n * frac + 0.5)))
    assert not set(tr) & set(te) and len(tr) + len(te) == n
    for c, nc in ((0, n0), (1, n1)):
        assert abs((labels[te] == c).sum() - nc * len(te) / n) <= 1


def synth_recs(n=10, seconds=4, seed=7):
    _, recs = synth_generate(SynthSpec(n_recordings=n, duration_s=seconds), seed=seed)
    return recs


def test_pipeline_leak_safe():
    split = run_pipeline(synth_recs(), PipelineConfig(mode="leak_safe", split_seed=1))
    assert not any(s.augmented for s in split.test)
    train_recs = {s.origin[:2] for s in split.train}
    test_recs = {s.origin[:2] for s in split.test}
    assert train_recs and test_recs and not train_recs & test_recs
    rep = split.report
    assert list(rep.stages) == ["input", "filter", "window", "split_train", "split_test", "balance", "augment"]
    assert rep.stages["augment"]["truth"] == 2 * rep.stages["balance"]["truth"]
    assert rep.stages["balance"]["truth"] == rep.stages["balance"]["lie"]
    assert all(s.data.shape == (64, 13) for s in split.train + split.test)


def test_pipeline_paper_faithful_order():
    recs = synth_recs(n=9)
    split = run_pipeline(recs, PipelineConfig(mode="paper_faithful"))
    st_ = split.report.stages
    assert list(st_) == ["input", "filter", "window", "balance", "augment", "split_train", "split_test"]
    assert st_["window"]["truth"] != st_["window"]["lie"]
    assert st_["balance"]["truth"] == st_["balance"]["lie"] == min(st_["window"].values())
    assert sum(st_["augment"].values()) == 2 * sum(st_["balance"].values())
    total = len(split.train) + len(split.test)
    assert total == sum(st_["augment"].values())
    assert len(split.test) == int(np.floor(total * 0.2 + 0.5))


def test_pipeline_bag_of_lies_shaped_input():
    recs = []
    rng = np.random.default_rng(0)
    for i in range(201):
        label = ClassLabel.TRUTH if i < 108 else ClassLabel.LIE
        recs.append(EegRecording(f"S{i:03d}", "R0", label, rng.standard_normal((64, 13))))
    split = run_pipeline(recs, PipelineConfig(mode="paper_faithful"))
    st_ = split.report.stages
    assert st_["input"] == {"truth": 108, "lie": 93}
    assert st_["window"] == {"truth": 108, "lie": 93}
    assert st_["balance"] == {"truth": 93, "lie": 93}
    assert st_["augment"] == {"truth": 186, "lie": 186}
    assert len(split.train) + len(split.test) == 372


def test_pipeline_deterministic_and_empty():
    cfg = PipelineConfig(balance_seed=3, augment_seed=4, split_seed=5)
    a = run_pipeline(synth_recs(), cfg)
    b = run_pipeline(synth_recs(), cfg)
    for x, y in zip(a.train + a.test, b.train + b.test):
        assert x.data.tobytes() == y.data.tobytes() and x.origin == y.origin
    with pytest.raises(BadParams):
        run_pipeline([], cfg)


def test_pipeline_training_set_stats():
    split = run_pipeline(synth_recs(), PipelineConfig(stats_source="training_set"))
    assert split.stats.source == "training_set" and split.stats.mean.shape == (13,)


def test_split_persistence_round_trip(tmp_path):
    split = run_pipeline(synth_recs(), PipelineConfig(stats_source="training_set"))
    save_split(split, tmp_path / "d.arr")
    back = load_split(tmp_path / "d.arr")
    assert len(back.train) == len(split.train) and len(back.test) == len(split.test)
    for x, y in zip(split.train + split.test, back.train + back.test):
        assert x.data.tobytes() == y.data.tobytes()
        assert (x.label, x.origin, x.augmented) == (y.label, y.origin, y.augmented)
    assert back.report.to_kv() == split.report.to_kv()
    assert back.config == split.config
    np.testing.assert_array_equal(back.stats.mean, split.stats.mean)


def test_report_round_trip():
    rep = PipelineReport("leak_safe", {"input": {"truth": 3, "lie": 2}, "window": {"truth": 9, "lie": 7}})
    assert PipelineReport.from_kv(rep.to_kv()) == rep
    assert "window" in rep.to_text()


def test_channel_stats_none_passthrough():
    r = rec(np.ones((3, 13)))
    assert ChannelStats("none").apply(r) is r
