import numpy as np
import pytest

from rfadv.errors import ChecksumMismatch, UnknownArch
from rfadv.models import ARCHS, build, load_checkpoint, param_count, read_checkpoint_meta, save_checkpoint

SHAPE = (32, 62)


def test_seeded_build_is_deterministic():
    a, b = build("CNN1", SHAPE, 10, 3), build("CNN1", SHAPE, 10, 3)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, build("CNN1", SHAPE, 10, 4).params)


def test_parameter_counts():
    assert param_count("CNN2") < param_count("CNN1")
    assert param_count("LSTM2") < param_count("LSTM1")
    assert param_count("GRU2") < param_count("GRU1")
    # hand count for the LSTM stack: 4 gates x (in + units + 1) x units per layer
    lstm1 = 4 * (32 + 256 + 1) * 256 + 4 * (256 + 256 + 1) * 256 + 256 * 10 + 10
    assert param_count("LSTM1") == lstm1
    for arch in ARCHS:
        assert build(arch, SHAPE, 10).params.size == param_count(arch)


@pytest.mark.parametrize("arch", ARCHS)
def test_all_archs_emit_class_probabilities(arch):
    m = build(arch, SHAPE, 10)
    p = m.predict_proba(np.random.default_rng(0).normal(size=(2, *SHAPE)))
    assert p.shape == (2, 10)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_lstm_forget_bias_initialised_to_one():
    m = build("LSTM2", SHAPE, 10)
    lstm = m.layers[1]
    b = m.net._views[1][2]
    u = lstm.units
    assert np.all(b[u : 2 * u] == 1.0)
    assert np.all(b[:u] == 0.0) and np.all(b[2 * u :] == 0.0)


def test_unknown_arch():
    with pytest.raises(UnknownArch):
        build("VGG16", SHAPE, 10)


def test_checkpoint_round_trip(tmp_path):
    m = build("GRU2", SHAPE, 10, 1)
    path = save_checkpoint(m, tmp_path / "ck")
    back = load_checkpoint(path)
    assert back.arch_id == "GRU2"
    x = np.random.default_rng(1).normal(size=(100, *SHAPE))
    assert np.array_equal(m.predict_proba(x), back.predict_proba(x))
    meta = read_checkpoint_meta(path)
    assert meta["format_version"] == 1 and meta["n_params"] == m.params.size


def test_truncated_weights_fail_checksum(tmp_path):
    path = save_checkpoint(build("CNN2", SHAPE, 10), tmp_path / "ck")
    data = (path / "weights.f64").read_bytes()
    (path / "weights.f64").write_bytes(data[:-8])
    with pytest.raises(ChecksumMismatch, match="weights.f64"):
        load_checkpoint(path)


def test_residual_block_with_zero_body_passes_input():
    m = build("CNN1", SHAPE, 10, 0)
    res = m.layers[4]
    assert res.kind == "add"
    x = np.random.default_rng(2).normal(size=(1, 16, 31, 32))
    views = m.net._views[4]
    zeroed = [np.zeros_like(v) for v in views]
    y, _ = res.forward(x, zeroed)
    assert np.array_equal(y, x)
