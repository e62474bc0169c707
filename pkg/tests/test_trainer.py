import numpy as np
import pytest

from rfadv.engine import GlobalAvgPool, Dense, Network, Softmax, TimeMajor
from rfadv.errors import Divergence, TooFewExamples
from rfadv.models import Model
from rfadv.receiver import Dataset
from rfadv.trainer import TrainConfig, evaluate, split_dataset, train, write_history_csv


def _toy(n=200, seed=0, shape=(2, 3)):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, *shape)) * 0.3
    x[:, 0, 0] += np.where(y == 1, 2.0, -2.0)
    return Dataset(x, y, meta={"n_classes": 2})


def _dense_model(shape=(2, 3), n_classes=2, seed=0):
    net = Network([TimeMajor(), GlobalAvgPool(), Dense(n_classes), Softmax()], shape, rng=np.random.default_rng(seed))
    return Model("toy", shape, n_classes, net)


def test_split_counts_partition_and_stratification():
    x = np.zeros((1000, 1, 1))
    y = np.repeat(np.arange(10), 100)
    ds = Dataset(x, y, meta={"idx": 0})
    ds.x = np.arange(1000.0).reshape(1000, 1, 1)
    tr, va = split_dataset(ds, 0.1, seed=4)
    assert (len(tr), len(va)) == (900, 100)
    assert sorted(np.concatenate([tr.x.ravel(), va.x.ravel()]).tolist()) == list(range(1000))
    for c in range(10):
        assert abs(np.sum(va.y == c) - 10) <= 1
    tr2, va2 = split_dataset(ds, 0.1, seed=4)
    assert np.array_equal(va.x, va2.x)


def test_split_needs_two_per_class():
    ds = Dataset(np.zeros((3, 1, 1)), [0, 0, 1])
    with pytest.raises(TooFewExamples):
        split_dataset(ds, 0.1)


def test_separable_toy_reaches_full_accuracy():
    m, hist = train(_dense_model(), _toy(), TrainConfig(lr=0.05, max_epochs=50, batch_size=16))
    assert len(hist) <= 50
    assert max(h["val_acc"] for h in hist) == 1.0
    assert evaluate(m, _toy(seed=1))["accuracy"] == 1.0


def test_schedule_and_best_epoch_contract():
    cfg = TrainConfig(lr=0.5, max_epochs=60, lr_patience=3, early_stop_patience=9, batch_size=8)
    m, hist = train(_dense_model(seed=3), _toy(60, seed=2), cfg)
    lrs = [h["lr"] for h in hist]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    for a, b in zip(lrs, lrs[1:]):
        if b < a:
            assert b == pytest.approx(a * 0.2, rel=1e-12)
    # a drop only after >= lr_patience consecutive epochs without improvement
    best = np.inf
    stale = 0
    for i, h in enumerate(hist):
        if i > 0 and h["lr"] < hist[i - 1]["lr"]:
            assert stale >= cfg.lr_patience
            stale = 0
        if h["val_loss"] < best - cfg.min_delta:
            best, stale = h["val_loss"], 0
        else:
            stale += 1
    tr, va = split_dataset(_toy(60, seed=2), cfg.val_ratio, cfg.shuffle_seed)
    from rfadv.engine import loss_value

    final = float(np.mean(loss_value(m, va.x, va.y)))
    assert final <= min(h["val_loss"] for h in hist) + 1e-12


def test_training_is_deterministic():
    cfg = TrainConfig(lr=0.05, max_epochs=5)
    a, _ = train(_dense_model(), _toy(), cfg)
    b, _ = train(_dense_model(), _toy(), cfg)
    assert np.array_equal(a.params, b.params)


def test_divergence_is_reported():
    ds = _toy()
    ds.x[0, 0, 0] = np.inf
    with pytest.raises(Divergence, match="epoch 0"):
        train(_dense_model(), ds, TrainConfig(max_epochs=2))


def test_evaluate_perfect_and_constant_models():
    y = np.repeat(np.arange(10), 5)
    x = np.zeros((50, 10, 1))
    x[np.arange(50), y, 0] = 1.0
    w = np.eye(10) * 100
    net = Network([TimeMajor(), GlobalAvgPool(), Dense(10), Softmax()], (10, 1), params=np.concatenate([w.ravel(), np.zeros(10)]))
    r = evaluate(Model("id", (10, 1), 10, net), Dataset(x, y))
    assert r["accuracy"] == 1.0
    assert np.array_equal(r["confusion"], np.eye(10, dtype=int) * 5)
    b = np.zeros(10)
    b[4] = 1.0
    const = Network([TimeMajor(), GlobalAvgPool(), Dense(10), Softmax()], (10, 1), params=np.concatenate([np.zeros(100), b]))
    r = evaluate(Model("c", (10, 1), 10, const), Dataset(x, y))
    assert r["accuracy"] == pytest.approx(0.1)
    assert np.array_equal(r["confusion"].sum(axis=1), np.bincount(y))


def test_history_csv(tmp_path):
    _, hist = train(_dense_model(), _toy(), TrainConfig(lr=0.05, max_epochs=3))
    text = write_history_csv(hist, tmp_path / "h.csv").read_text().splitlines()
    assert text[0] == "epoch,lr,train_loss,val_loss,val_acc"
    assert len(text) == 1 + len(hist)
