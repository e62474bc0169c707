import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfadv.errors import DegenerateInput, NoDetection
from rfadv.receiver import (
    Dataset,
    PipelineConfig,
    channel_independent,
    compensate_cfo,
    detect_sync,
    estimate_cfo,
    extract,
    load_dataset,
    normalize_power,
    preprocess,
    preprocess_collection,
    save_dataset,
    stft,
)
from rfadv.waveform import (
    ChirpParams,
    DeviceFingerprint,
    IqFrame,
    apply_channel,
    apply_fingerprint,
    gen_preamble,
    sample_fingerprints,
    synth_dataset,
    with_cfo,
    zero_fingerprint,
)

P = ChirpParams()
N = P.n_samples
L = 8 * N


def _packet(offset, fp=None, snr=math.inf, seed=0):
    pre = gen_preamble(P)
    if fp is not None:
        pre = apply_fingerprint(pre, fp, 0, seed)
    buf = np.zeros(10 * N, dtype=complex)
    buf[offset : offset + L] = pre.samples
    return apply_channel(IqFrame(buf, P.fs, dict(pre.meta)), snr, seed, signal_power=1.0)


@pytest.mark.parametrize("off", [0, 37, 255])
def test_sync_recovers_offset_noiseless(off):
    assert detect_sync(_packet(off), P) == off


def test_sync_with_cfo_free_impairments():
    fp = DeviceFingerprint(0, iq_gain=0.04, iq_phase_rad=0.02, pa_a3=-0.05, pa_a5=0.01, dc_i=0.002)
    assert detect_sync(_packet(81, fp), P) == 81


def test_sync_monte_carlo_20db():
    rng = np.random.default_rng(0)
    fp = DeviceFingerprint(0, iq_gain=0.03, pa_a3=-0.05)
    errs = 0
    for k in range(100):
        off = int(rng.integers(0, N))
        errs += detect_sync(_packet(off, fp, 20.0, seed=k), P) != off
    assert errs <= 1


def test_sync_rejects_noise_only():
    rng = np.random.default_rng(1)
    noise = IqFrame(rng.normal(size=10 * N) + 1j * rng.normal(size=10 * N), P.fs)
    with pytest.raises(NoDetection):
        detect_sync(noise, P)


def test_cfo_estimates():
    pre = gen_preamble(P)
    assert abs(estimate_cfo(pre, P)) < 1.0
    shifted = apply_fingerprint(pre, with_cfo(zero_fingerprint(), 5000.0))
    assert estimate_cfo(shifted, P) == pytest.approx(5000.0, abs=2.0)
    est = []
    for k in range(100):
        f = apply_channel(apply_fingerprint(pre, with_cfo(zero_fingerprint(), -500.0)), 30.0, k)
        est.append(estimate_cfo(f, P))
    assert np.mean(est) == pytest.approx(-500.0, abs=20.0)


def test_cfo_degenerate():
    with pytest.raises(DegenerateInput):
        estimate_cfo(IqFrame(np.zeros(L), P.fs), P)


@given(f=st.floats(-P.fs / 4 + 1, P.fs / 4 - 1))
@settings(max_examples=25, deadline=None)
def test_cfo_round_trip(f):
    pre = gen_preamble(P)
    back = compensate_cfo(apply_fingerprint(pre, with_cfo(zero_fingerprint(), f)), f)
    assert np.max(np.abs(back.samples - pre.samples)) < 1e-6


def test_compensation_leaves_small_residual():
    for fp in sample_fingerprints(5, 2):
        x = apply_fingerprint(gen_preamble(P), fp, 0, 1)
        y = compensate_cfo(x, estimate_cfo(x, P))
        assert abs(estimate_cfo(y, P)) < 30.0
    pre = gen_preamble(P)
    assert np.array_equal(compensate_cfo(pre, 0.0).samples, pre.samples)


def test_normalize_power():
    x = apply_fingerprint(gen_preamble(P), sample_fingerprints(2, 3)[0])
    a = normalize_power(x).samples
    b = normalize_power(x.with_samples(7 * x.samples)).samples
    assert np.allclose(a, b, atol=1e-12)
    assert math.sqrt(np.mean(np.abs(a) ** 2)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DegenerateInput):
        normalize_power(IqFrame(np.zeros(8), P.fs))


def test_stft_columns_and_tone_bin():
    x = np.exp(2j * np.pi * (P.bw / 4) * np.arange(L) / P.fs)
    S = stft(x, 64, 32)
    assert S.shape == (64, 63)
    # +bw/4 = fs/8 -> 8 bins above DC (row 32) after fftshift
    assert np.all(np.argmax(np.abs(S), axis=0) == 32 + 8)


def test_stft_parseval():
    rng = np.random.default_rng(2)
    x = np.zeros(L, dtype=complex)
    x[64:-64] = rng.normal(size=L - 128) + 1j * rng.normal(size=L - 128)
    S = stft(x, 64, 32)
    w = np.hanning(65)[:-1]
    energy = np.sum(np.abs(S) ** 2) * 32 / (64 * np.sum(w**2))
    assert energy == pytest.approx(np.sum(np.abs(x) ** 2), rel=0.01)


def test_channel_independent_properties():
    S = np.ones((64, 63), dtype=complex) * (2 + 1j)
    raw = channel_independent(S, standardize=False).values
    assert np.allclose(raw, math.log(1 + 1e-12))
    rng = np.random.default_rng(3)
    S = rng.normal(size=(64, 63)) + 1j * rng.normal(size=(64, 63))
    a = channel_independent(S).values
    assert a.shape == (32, 62)
    assert np.allclose(channel_independent(S * 3.7).values, a, atol=1e-9)
    assert abs(a.mean()) < 1e-6 and abs(a.std() - 1) < 1e-6


def test_preprocess_contract():
    fp = sample_fingerprints(3, 1)[2]
    rx = _packet(50, fp, 40.0, seed=4)
    ex = preprocess(rx)
    assert ex.x.shape == (32, 62) and ex.y == 2
    assert np.array_equal(preprocess(rx).x.values, ex.x.values)


def test_preprocess_scale_invariance():
    fp = sample_fingerprints(2, 1)[1]
    rx = _packet(10, fp, 40.0, seed=5)
    a = preprocess(rx).x.values
    b = preprocess(rx.with_samples(rx.samples * (0.3 - 2.1j))).x.values
    assert np.max(np.abs(a - b)) < 1e-6


def test_distinct_devices_distinct_spectrograms():
    f1, f2 = sample_fingerprints(2, 5)
    a = preprocess(_packet(0, f1)).x.values
    b = preprocess(_packet(0, f2)).x.values
    assert np.max(np.abs(a - b)) > 1e-3


def test_collection_and_persistence(tmp_path):
    raw = synth_dataset(P, sample_fingerprints(3, 1), [0, 1], 4, 40.0, seed=2)
    ds = preprocess_collection(raw)
    assert len(ds) + ds.meta["dropped"] == len(raw)
    assert ds.shape == PipelineConfig().output_shape() == (32, 62)
    back = load_dataset(save_dataset(ds, tmp_path / "ds"))
    assert np.allclose(back.x, ds.x, atol=1e-6)
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.day, ds.day)
    assert len(ds.select_day(1)) == int(np.sum(ds.day == 1))


def test_extract_zero_fills():
    rx = IqFrame(np.arange(1, 11, dtype=complex), P.fs)
    out = extract(rx, -3, 6).samples
    assert np.array_equal(out, [0, 0, 0, 1, 2, 3])
