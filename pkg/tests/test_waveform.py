import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfadv.errors import InvalidParams
from rfadv.receiver import estimate_cfo, extract
from rfadv.waveform import (
    ChirpParams,
    DeviceFingerprint,
    FingerprintSpread,
    IqFrame,
    apply_channel,
    apply_fingerprint,
    gen_preamble,
    gen_upchirp,
    load_raw,
    sample_fingerprints,
    save_raw,
    synth_dataset,
    with_cfo,
    zero_fingerprint,
)

P = ChirpParams()


def test_upchirp_lengths():
    assert gen_upchirp(ChirpParams(7, 125e3, 125e3)).samples.size == 128
    assert gen_upchirp(P).samples.size == 256


@given(sf=st.integers(6, 10), ratio=st.sampled_from([1, 2, 4]))
@settings(max_examples=20, deadline=None)
def test_upchirp_unit_modulus(sf, ratio):
    x = gen_upchirp(ChirpParams(sf, 125e3, 125e3 * ratio)).samples
    assert np.max(np.abs(np.abs(x) - 1.0)) < 1e-12


def test_upchirp_instantaneous_frequency_monotone():
    x = gen_upchirp(P).samples
    f = np.diff(np.unwrap(np.angle(x))) * P.fs / (2 * np.pi)
    assert np.all(np.diff(f) > 0)


def test_dechirp_peak_at_bin_zero():
    x = gen_upchirp(P).samples
    spec = np.abs(np.fft.fft(x * np.conj(x)))
    assert int(np.argmax(spec)) == 0


def test_invalid_chirp_params():
    for bad in (ChirpParams(sf=5), ChirpParams(fs=100e3), ChirpParams(n_preambles=1), ChirpParams(bw=125e3, fs=130e3)):
        with pytest.raises(InvalidParams):
            gen_upchirp(bad)


def test_preamble_repetition_and_correlation_peaks():
    pre = gen_preamble(P).samples
    n = P.n_samples
    assert pre.size == 8 * 256
    assert np.array_equal(pre[: 7 * n], pre[n:])
    up = gen_upchirp(P).samples
    # direct correlation scan at every lag
    c = np.array([abs(np.vdot(up, pre[k : k + n])) for k in range(pre.size - n + 1)])
    peaks = np.sort(np.argsort(c)[-8:])
    assert np.array_equal(peaks, np.arange(8) * n)
    assert np.allclose(c[peaks], n, rtol=1e-9)


def test_sample_fingerprints_determinism_and_bounds():
    a, b = sample_fingerprints(10, 1), sample_fingerprints(10, 1)
    assert a == b
    c = sample_fingerprints(10, 2)
    assert [f.cfo_base_hz for f in a] != [f.cfo_base_hz for f in c]
    many = sample_fingerprints(10_000, 3)
    assert max(abs(f.iq_gain) for f in many) < 0.3
    assert max(abs(f.iq_phase_rad) for f in many) < 0.2
    assert len({(f.cfo_base_hz, f.iq_gain) for f in many}) == 10_000


def test_spread_validation():
    with pytest.raises(InvalidParams):
        FingerprintSpread(iq_gain_std=-1.0).validate()


def test_zero_fingerprint_is_identity():
    x = gen_preamble(P)
    y = apply_fingerprint(x, zero_fingerprint(3), day=2, pkt_seed=99)
    assert np.array_equal(x.samples, y.samples)
    assert y.meta["device_id"] == 3


def test_pure_cfo_rotation():
    x = gen_preamble(P)
    y = apply_fingerprint(x, with_cfo(zero_fingerprint(), 500.0))
    n = np.arange(x.samples.size)
    assert np.allclose(y.samples, x.samples * np.exp(2j * np.pi * 500 * n / P.fs), atol=1e-12)


def test_iq_imbalance_image_power():
    # tone at +fs/8; the imbalance leaves an image at -fs/8 with power |nu/mu|^2
    n = np.arange(4096)
    tone = IqFrame(np.exp(2j * np.pi * n / 8), P.fs)
    y = apply_fingerprint(tone, DeviceFingerprint(0, iq_gain=0.1)).samples
    spec = np.abs(np.fft.fft(y)) ** 2
    k = 4096 // 8
    mu, nu = 1.05, -0.05
    assert spec[-k] / spec[k] == pytest.approx(abs(nu / mu) ** 2, rel=1e-9)


def test_default_spread_power_within_3db():
    x = gen_preamble(P)
    for fp in sample_fingerprints(50, 4):
        y = apply_fingerprint(x, fp)
        ratio = np.mean(np.abs(y.samples) ** 2) / np.mean(np.abs(x.samples) ** 2)
        assert abs(10 * math.log10(ratio)) < 3.0


def test_channel_clean_sentinel_and_power():
    x = gen_preamble(P)
    assert np.array_equal(apply_channel(x, math.inf, 0).samples, x.samples)
    big = IqFrame(np.ones(100_000, dtype=complex), P.fs)
    y = apply_channel(big, 0.0, 5).samples - 1.0
    assert np.mean(np.abs(y) ** 2) == pytest.approx(1.0, rel=0.05)
    assert np.array_equal(apply_channel(x, 10.0, 7).samples, apply_channel(x, 10.0, 7).samples)


def test_synth_dataset_counts_offsets_and_reproducibility():
    fps = sample_fingerprints(10, 1)
    raw = synth_dataset(P, fps, [0], 100, 40.0, seed=3)
    assert len(raw) == 1000
    assert np.array_equal(np.bincount(raw.device_id), np.full(10, 100))
    assert raw.true_offset.min() >= 0 and raw.true_offset.max() < P.n_samples
    again = synth_dataset(P, fps, [0], 100, 40.0, seed=3)
    assert np.array_equal(raw.iq, again.iq)


def test_day_drift_moves_mean_cfo():
    fp = DeviceFingerprint(0, cfo_base_hz=1000.0, day_drift_std_hz=50.0, population_seed=1)
    raw = synth_dataset(P, [fp], [0, 1], 20, 40.0, seed=1)
    means = []
    for d in (0, 1):
        est = [estimate_cfo(extract(raw.frame(i), int(raw.true_offset[i]), 8 * 256), P)
               for i in np.flatnonzero(raw.day_index == d)]
        means.append(np.mean(est))
    expected = fp.day_drift(0) - fp.day_drift(1)
    assert abs(expected) > 1.0
    assert means[0] - means[1] == pytest.approx(expected, abs=5.0)


def test_raw_round_trip(tmp_path):
    raw = synth_dataset(P, sample_fingerprints(2, 1), [0], 3, 30.0, seed=1)
    back = load_raw(save_raw(raw, tmp_path / "raw"))
    assert np.allclose(back.iq, raw.iq, atol=1e-6)
    assert back.fingerprints == raw.fingerprints
    assert np.array_equal(back.true_offset, raw.true_offset)
