import math

import numpy as np
import pytest

from phishcnn.data import map_labels
from phishcnn.model import ModelConfig, build_model
from phishcnn.nn.rng import RngStream
from phishcnn.training import (EarlyStopping, EpochRecord, TrainingConfig, TrainingDiverged, TrainingError,
                               evaluate_split, export_history, minibatches, parse_history, train)
from synthetic import make_corpus

SMALL = ModelConfig("cnn2", 4, 6, 3, 8)


def separable(n=20, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.choice([-1, 1], size=(n, 30)).astype(float)
    y = (x[:, 7] > 0).astype(float)
    return x, y


def test_early_stopping_definition_example():
    stopper = EarlyStopping(patience=50)
    losses = {1: 1.0, 10: 0.5}
    stopped = None
    for epoch in range(1, 301):
        stopper.update(epoch, losses.get(epoch, 0.9 if epoch < 10 else 0.6))
        if stopper.should_stop:
            stopped = epoch
            break
    assert (stopped, stopper.best_epoch) == (60, 10)


def test_improvement_must_exceed_min_delta():
    stopper = EarlyStopping(patience=3, min_delta=1e-6)
    assert stopper.update(1, 1.0)
    assert not stopper.update(2, 1.0 - 5e-7)
    assert stopper.update(3, 1.0 - 2e-6)


def test_trailing_batch_of_one_is_merged():
    batches = minibatches(np.arange(65), 32)
    assert [len(b) for b in batches] == [32, 33]
    assert [len(b) for b in minibatches(np.arange(66), 32)] == [32, 32, 2]
    assert [len(b) for b in minibatches(np.arange(1), 32)] == [1]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(max_epochs=10, patience=20)
    with pytest.raises(ValueError):
        TrainingConfig(learning_rate=0)


def test_separable_toy_reaches_full_training_accuracy():
    x, y = separable()
    tconfig = TrainingConfig(max_epochs=200, patience=200, batch_size=4, dtype="float64")
    model = train(SMALL, (x, y), (x, y), tconfig, RngStream(1))
    assert max(r.train_acc for r in model.history) == 1.0


def test_single_class_rejected():
    x, _ = separable()
    with pytest.raises(TrainingError, match="single class"):
        train(SMALL, (x, np.ones(20)), (x, np.ones(20)), TrainingConfig(max_epochs=2, patience=1))


def test_empty_validation_rejected():
    x, y = separable()
    with pytest.raises(TrainingError):
        train(SMALL, (x, y), (x[:0], y[:0]), TrainingConfig(max_epochs=2, patience=1))


def test_divergence_reports_epoch():
    x, y = separable()
    x = x.copy()
    x[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(SMALL, (x, y), (x, y), TrainingConfig(max_epochs=2, patience=1))


def _toy_run(seed=3, dtype="float64"):
    ds = map_labels(make_corpus(240, seed), phishing_value=-1)
    tr, va = ds.subset(np.arange(200)), ds.subset(np.arange(200, 240))
    tconfig = TrainingConfig(max_epochs=40, patience=8, batch_size=16, seed=seed, dtype=dtype)
    return train(SMALL, tr, va, tconfig), va


def test_same_seed_identical_history_and_weights():
    a, _ = _toy_run()
    b, _ = _toy_run()
    strip = [(r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc) for r in a.history]
    assert strip == [(r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc) for r in b.history]
    sa, sb = a.network.state_dict(), b.network.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_stopping_contract_and_restored_weights():
    model, va = _toy_run()
    best = min(r.val_loss for r in model.history)
    assert model.best_record.val_loss <= best + 1e-6
    assert model.best_epoch <= model.stopped_epoch
    assert model.stopped_epoch - model.best_epoch <= 8
    for r in model.history[model.best_epoch:]:
        assert not r.val_loss < best - 1e-6
    assert abs(evaluate_split(model.network, va).loss - best) <= 1e-9


def test_history_values_in_range():
    model, _ = _toy_run(4)
    for r in model.history:
        assert r.train_loss >= 0 and r.val_loss >= 0
        assert 0 <= r.train_acc <= 1 and 0 <= r.val_acc <= 1


def test_evaluate_split_perfect_and_recomputed_loss():
    net = build_model(SMALL, RngStream(0))
    x, _ = separable(12)
    scores = net.forward(x, training=False)
    y = (scores >= 0.5).astype(float)
    res = evaluate_split(net, (x, y))
    assert res.accuracy == 1.0
    per = [-(t * math.log(p) + (1 - t) * math.log(1 - p)) for p, t in zip(scores, y)]
    assert abs(res.loss - sum(per) / len(per)) < 1e-9
    assert res.seconds >= 0


class Half:
    """Stands in for a network whose every score is exactly 0.5."""

    dtype = np.dtype(np.float64)

    def forward(self, x, training=False):
        return np.full(len(x), 0.5)


def test_all_half_scores_follow_tie_rule():
    x = np.zeros((10, 30))
    y = np.array([1.0] * 4 + [0.0] * 6)
    assert evaluate_split(Half(), (x, y)).accuracy == pytest.approx(0.4)


def test_evaluate_empty_rejected():
    with pytest.raises(ValueError):
        evaluate_split(build_model(SMALL, RngStream(0)), (np.zeros((0, 30)), np.zeros(0)))


def _history(n):
    rng = np.random.default_rng(0)
    return [EpochRecord(i + 1, *rng.uniform(0, 1, 4), 0.25) for i in range(n)]


def test_export_220_epochs():
    text = export_history(_history(220))
    lines = text.splitlines()
    assert len(lines) == 221
    assert lines[0] == "epoch,train_loss,val_loss,train_acc,val_acc,seconds"


def test_history_round_trip_and_best_so_far(tmp_path):
    hist = _history(30)
    path = tmp_path / "h.csv"
    export_history(hist, path)
    back = parse_history(path.read_text())
    for a, b in zip(hist, back):
        for field in ("train_loss", "train_acc", "val_loss", "val_acc", "seconds"):
            assert getattr(b, field) == pytest.approx(getattr(a, field), rel=1e-6)
    best = np.minimum.accumulate([r.val_loss for r in back])
    assert np.all(np.diff(best) <= 0)


def test_export_empty_rejected():
    with pytest.raises(ValueError):
        export_history([])
