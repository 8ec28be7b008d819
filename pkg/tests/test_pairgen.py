import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsqa.audio import AudioClip, signal_power
from jsqa.corpus import Corpus
from jsqa.errors import (
    ConfigError,
    EmptyCorpusError,
    LengthMismatchError,
    ManifestMismatchError,
    ZeroPowerError,
)
from jsqa.pairgen import (
    PairGenConfig,
    PairManifest,
    build_manifest,
    build_pair,
    cache_pairs_to_wav,
    mix_at_snr,
    noise_excerpt,
    noise_scale_for_snr,
    pair_rng,
    realize_manifest,
    realize_pair,
    sample_snr_pair,
    sample_snr_window,
)

SR = 16000


def measured_snr(clean, mix):
    return 10 * math.log10(signal_power(clean) / signal_power(mix.samples - clean.samples))


def _clip(x):
    return AudioClip(np.asarray(x, dtype=np.float64), SR)


# --- SNR sampling ---------------------------------------------------------


def test_default_window_start_range():
    cfg = PairGenConfig()
    rng = np.random.default_rng(0)
    for _ in range(2000):
        lo, hi = sample_snr_window(rng, cfg)
        assert -3 <= lo <= 3
        assert hi - lo == pytest.approx(6.0, abs=1e-12)


def test_narrow_range_pins_window():
    cfg = PairGenConfig(snr_global_range=(3.0, 9.0))
    assert sample_snr_window(np.random.default_rng(5), cfg) == (3.0, 9.0)


def test_window_and_pair_deterministic():
    cfg = PairGenConfig()
    w1 = sample_snr_window(np.random.default_rng(9), cfg)
    w2 = sample_snr_window(np.random.default_rng(9), cfg)
    assert w1 == w2
    assert sample_snr_pair(np.random.default_rng(3), w1) == sample_snr_pair(np.random.default_rng(3), w1)


def test_mean_abs_delta_two_db():
    # E|X - Y| for two independent U(0, w) draws is w / 3
    cfg = PairGenConfig()
    rng = np.random.default_rng(11)
    d = np.empty(100_000)
    for i in range(d.size):
        a, b = sample_snr_pair(rng, sample_snr_window(rng, cfg))
        d[i] = abs(a - b)
    assert d.min() >= 0 and d.max() <= 6
    assert d.mean() == pytest.approx(2.0, abs=0.05)
    counts, _ = np.histogram(d, bins=6, range=(0, 6))
    assert np.all(np.diff(counts) < 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        PairGenConfig(snr_global_range=(0.0, 4.0), window_width_db=6.0).validate()
    cfg = PairGenConfig(pair_count=3, seed=99)
    assert PairGenConfig.from_dict(cfg.to_dict()) == cfg


# --- mixing ---------------------------------------------------------------


def test_noise_scale_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000)
    n = rng.standard_normal(1000)
    n *= np.sqrt(signal_power(x) / signal_power(n))
    assert noise_scale_for_snr(x, n, 0.0) == pytest.approx(1.0, rel=1e-12)
    s10 = noise_scale_for_snr(x, n, 10.0)
    assert s10 == pytest.approx(10 ** -0.5, rel=1e-12)
    assert measured_snr(_clip(x), mix_at_snr(_clip(x), _clip(n), 10.0)) == pytest.approx(10.0, abs=1e-9)
    assert noise_scale_for_snr(2 * x, x, 0.0) == pytest.approx(2.0, rel=1e-12)


def test_two_snrs_same_content():
    rng = np.random.default_rng(1)
    clean, noise = _clip(rng.standard_normal(4000)), _clip(rng.standard_normal(4000))
    for target in (3.2, 5.1):
        assert measured_snr(clean, mix_at_snr(clean, noise, target)) == pytest.approx(target, abs=1e-6)


def test_high_snr_limit_approaches_clean():
    rng = np.random.default_rng(2)
    clean = rng.standard_normal(4000)
    noise = rng.standard_normal(4000)
    clean /= np.sqrt(signal_power(clean))
    noise /= np.sqrt(signal_power(noise))
    out = mix_at_snr(_clip(clean), _clip(noise), 100.0)
    assert np.max(np.abs(out.samples - clean)) < 1e-4


def test_mixing_guards():
    clean = _clip(np.ones(100))
    with pytest.raises(ZeroPowerError):
        mix_at_snr(clean, _clip(np.zeros(100)), 0.0)
    with pytest.raises(ZeroPowerError):
        noise_scale_for_snr(np.zeros(100), np.ones(100), 0.0)
    with pytest.raises(LengthMismatchError):
        mix_at_snr(clean, _clip(np.ones(99)), 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), snr=st.floats(-3, 9))
def test_mixing_exact_property(seed, snr):
    rng = np.random.default_rng(seed)
    clean = _clip(rng.standard_normal(512) * rng.uniform(0.01, 1))
    noise = _clip(rng.standard_normal(512) * rng.uniform(0.01, 1))
    assert measured_snr(clean, mix_at_snr(clean, noise, snr)) == pytest.approx(snr, abs=1e-6)


def test_short_noise_is_looped():
    out = noise_excerpt(_clip([1.0, 2.0, 3.0]), 0, 7)
    np.testing.assert_array_equal(out.samples, [1, 2, 3, 1, 2, 3, 1])


# --- pairs and manifests ---------------------------------------------------


def test_build_pair_contract(toy_corpora):
    clean_c, noise_c = toy_corpora
    cfg = PairGenConfig(crop_len=8000)
    clean, noise = clean_c.load(clean_c.ids[0]), noise_c.load(noise_c.ids[0])
    recipe, a, b = build_pair(clean, noise, np.random.default_rng(4), cfg, clean_c.ids[0], noise_c.ids[0])
    assert len(a) == len(b) == 8000
    assert recipe.snr_a_db != recipe.snr_b_db and not np.array_equal(a.samples, b.samples)
    ra, rb = realize_pair(recipe, clean_c, noise_c)
    np.testing.assert_array_equal(ra.samples, a.samples)
    np.testing.assert_array_equal(rb.samples, b.samples)
    # both members share the clean segment; their difference is pure scaled noise
    seg = ra.samples - (ra.samples - rb.samples) * recipe.scale_m / (recipe.scale_m - recipe.scale_n)
    clean_seg = _clip(seg)
    assert measured_snr(clean_seg, a) == pytest.approx(recipe.snr_a_db, abs=1e-6)
    assert measured_snr(clean_seg, b) == pytest.approx(recipe.snr_b_db, abs=1e-6)


def test_manifest_examples(toy_corpora):
    clean_c, noise_c = toy_corpora
    cfg = PairGenConfig(pair_count=8, crop_len=8000, seed=3)
    m = build_manifest(clean_c, noise_c, cfg)
    assert len(m) == 8
    clips = [c for _, a, b in realize_manifest(m, clean_c, noise_c) for c in (a, b)]
    assert len(clips) == 16
    for r in m.recipes:
        assert -3 <= r.snr_a_db <= 9 and -3 <= r.snr_b_db <= 9
        assert r.delta_snr_db <= 6
        assert r.scale_m > 0 and r.scale_n > 0
    assert build_manifest(clean_c, noise_c, cfg).dumps() == m.dumps()
    assert build_manifest(clean_c, noise_c, PairGenConfig(pair_count=8, crop_len=8000, seed=4)).dumps() != m.dumps()


def test_manifest_roundtrip_and_prefix_stability(toy_corpora, tmp_path):
    clean_c, noise_c = toy_corpora
    m = build_manifest(clean_c, noise_c, PairGenConfig(pair_count=6, crop_len=4000, seed=1))
    p = tmp_path / "pairs.jsonl"
    m.write(p)
    back = PairManifest.read(p)
    assert back.dumps() == m.dumps()
    assert p.read_text().count("\n") == 7
    # recipe i depends only on (seed, i): a longer manifest extends a shorter one
    longer = build_manifest(clean_c, noise_c, PairGenConfig(pair_count=9, crop_len=4000, seed=1))
    assert longer.recipes[:6] == m.recipes


def test_realize_detects_corpus_drift(toy_corpora):
    clean_c, noise_c = toy_corpora
    m = build_manifest(clean_c, noise_c, PairGenConfig(pair_count=1, crop_len=4000))
    r = m.recipes[0]
    altered = {cid: clean_c.load(cid) for cid in clean_c.ids}
    altered[r.clean_id] = AudioClip(altered[r.clean_id].samples * 0.5 + 0.01, SR)
    with pytest.raises(ManifestMismatchError):
        realize_pair(r, Corpus.from_clips(altered), noise_c)
    with pytest.raises(ManifestMismatchError):
        realize_pair(r, Corpus.from_clips({"other.wav": clean_c.load(r.clean_id)}), noise_c)


def test_parallel_realization_matches_serial(toy_corpora, tmp_path):
    clean_c, noise_c = toy_corpora
    m = build_manifest(clean_c, noise_c, PairGenConfig(pair_count=5, crop_len=4000))
    serial = list(realize_manifest(m, clean_c, noise_c, workers=1))
    par = list(realize_manifest(m, clean_c, noise_c, workers=3))
    for (r1, a1, b1), (r2, a2, b2) in zip(serial, par):
        assert r1 == r2
        np.testing.assert_array_equal(a1.samples, a2.samples)
        np.testing.assert_array_equal(b1.samples, b2.samples)
    assert cache_pairs_to_wav(m, clean_c, noise_c, tmp_path, workers=2) == 5
    assert len(list(tmp_path.glob("*.wav"))) == 10


def test_empty_corpus_rejected(toy_corpora):
    clean_c, _ = toy_corpora
    silent = Corpus.from_clips({"quiet.wav": AudioClip(np.zeros(4000), SR)})
    assert silent.rejected == ["quiet.wav"]
    with pytest.raises(EmptyCorpusError):
        build_manifest(clean_c, silent, PairGenConfig())


def test_pair_rng_independent_of_other_indices():
    a = pair_rng(7, 3).random(4)
    b = pair_rng(7, 3).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, pair_rng(7, 4).random(4))
