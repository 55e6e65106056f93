import csv

import numpy as np
import pytest

from token_transformer.checkpoint import load_checkpoint
from token_transformer.config import ModelConfig, StageConfig
from token_transformer.data import synth_dataset
from token_transformer.errors import ContractError, TrainingDivergedError
from token_transformer.model import build
from token_transformer.train import evaluate, predict, train

TINY = ModelConfig("tiny", 16, (StageConfig(4, 2, 8, 1, 2), StageConfig(2, 1, 16, 1, 2)), num_classes=3)


@pytest.fixture(scope="module")
def ds():
    return synth_dataset(24, 3, 16, seed=0)


def _params(model):
    return {n: t.data.copy() for n, t in model.named_parameters()}


def test_metrics_csv(tmp_path, ds):
    log = tmp_path / "m.csv"
    history = train(build(TINY), ds, steps=6, lr=1e-3, batch_size=8, log_path=log)
    rows = list(csv.DictReader(log.open()))
    assert list(rows[0]) == ["step", "loss", "acc", "lr"]
    assert [int(r["step"]) for r in rows] == list(range(6))
    assert [float(r["loss"]) for r in rows] == pytest.approx([h.loss for h in history], abs=1e-6)
    assert all(0 <= float(r["acc"]) <= 1 for r in rows)


def test_training_is_deterministic(ds):
    a, b = build(TINY, seed=1), build(TINY, seed=1)
    ha = train(a, ds, steps=4, lr=1e-3, batch_size=8, seed=2)
    hb = train(b, ds, steps=4, lr=1e-3, batch_size=8, seed=2)
    assert [h.loss for h in ha] == [h.loss for h in hb]
    pa, pb = _params(a), _params(b)
    assert all(np.array_equal(pa[n], pb[n]) for n in pa)


def test_zero_lr_changes_nothing(ds):
    model = build(TINY)
    before = _params(model)
    train(model, ds, steps=3, lr=0.0, batch_size=8)
    after = _params(model)
    assert all(np.array_equal(before[n], after[n]) for n in before)


def test_loss_decreases_on_repeated_batch():
    small = synth_dataset(8, 3, 16, seed=1)
    history = train(build(TINY), small, steps=30, lr=3e-3, batch_size=8, weight_decay=0.0, warmup_fraction=0.0)
    assert history[-1].loss < history[0].loss


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_restores_last_good_step(tmp_path, ds):
    model = build(TINY)
    train(model, ds, steps=2, lr=1e-3, batch_size=8)
    good = _params(model)
    poisoned = ds.images.copy()
    poisoned[:] = np.inf
    bad = type(ds)(poisoned, ds.labels, ds.num_classes)
    ckpt = tmp_path / "rescue.ttc"
    with pytest.raises(TrainingDivergedError) as exc:
        train(model, bad, steps=3, lr=1e-3, batch_size=8, checkpoint_path=ckpt)
    assert exc.value.step == 0
    after = _params(model)
    assert all(np.array_equal(good[n], after[n]) for n in good)
    restored, _ = load_checkpoint(ckpt)
    assert all(np.array_equal(restored.params[n].data, good[n]) for n in good)


def test_final_checkpoint_has_optimizer_state(tmp_path, ds):
    model = build(TINY)
    train(model, ds, steps=2, lr=1e-3, batch_size=8, checkpoint_path=tmp_path / "c.ttc")
    _, state = load_checkpoint(tmp_path / "c.ttc")
    assert state is not None and state.step == 2


def test_epochs_argument(ds):
    assert len(train(build(TINY), ds, epochs=2, batch_size=8)) == 6


def test_argument_contracts(ds):
    with pytest.raises(ContractError):
        train(build(TINY), ds)
    with pytest.raises(ContractError):
        train(build(TINY), ds, steps=1, epochs=1)
    with pytest.raises(ContractError):
        train(build(TINY.with_(num_classes=2)), ds, steps=1)
    with pytest.raises(ContractError):
        train(build(TINY.with_(input_size=32, stages=(StageConfig(8, 4, 8, 1, 2),))), ds, steps=1)


def test_evaluate_matches_predict(ds):
    model = build(TINY)
    logits = predict(model, ds.images, batch_size=5)
    loss, acc = evaluate(model, ds)
    assert acc == pytest.approx(float((logits.argmax(1) == ds.labels).mean()))
    assert 0 < loss < 10
