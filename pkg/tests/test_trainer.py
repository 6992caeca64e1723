import numpy as np
import pytest

from oracles import adam_scalar
from openintent.data import LabeledUtterance, Vocabulary, encode_dataset
from openintent.encoder import EncoderConfig, TuningPlan, trainable_param_stats
from openintent.errors import ConfigError, DataError, DimensionError, DivergenceError, NumericError
from openintent.model import IntentModel
from openintent.numerics import Parameter
from openintent.prefix import PrefixConfig, PrefixMode
from openintent.trainer import AdamState, TrainConfig, accuracy, optimizer_step, train

CFG = dict(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=16, max_seq_len=8, feature_dim=8)


def toy_sets():
    a = ["alpha red", "red alpha go", "go red", "red red alpha"]
    b = ["blue beta", "beta go blue", "go blue", "blue blue beta"]
    recs = [LabeledUtterance(t, "A") for t in a] + [LabeledUtterance(t, "B") for t in b]
    vocab = Vocabulary.build(r.text for r in recs)
    ds = encode_dataset(recs, vocab, {"A": 0, "B": 1}, 8)
    return ds, vocab


def make_model(vocab, seed=0, length=2, mode=PrefixMode.MLP):
    cfg = EncoderConfig(vocab_size=len(vocab), **CFG)
    return IntentModel(cfg, PrefixConfig(length=length, mode=mode), 2, seed=seed)


def snapshot(model):
    return {k: p.data.copy() for k, p in model.parameters().items()}


def test_separable_toy_set_is_learned():
    ds, vocab = toy_sets()
    model = make_model(vocab)
    result = train(model, ds, ds, TuningPlan.just(2), TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=50))
    assert accuracy(model, ds) == 1.0
    assert len(result.history) <= 50


def test_zero_learning_rate_changes_nothing():
    ds, vocab = toy_sets()
    model = make_model(vocab)
    before = snapshot(model)
    result = train(model, ds, ds, TuningPlan.full(2, prefix=True), TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=4, patience=100))
    after = snapshot(model)
    assert all(np.array_equal(before[k], after[k]) for k in before)
    losses = [r.train_loss for r in result.history]
    assert losses == [losses[0]] * len(losses)


def test_frozen_everything_keeps_loss_constant():
    ds, vocab = toy_sets()
    model = make_model(vocab)
    result = train(model, ds, ds, TuningPlan.frozen(), TrainConfig(batch_size=8, max_epochs=5, patience=100))
    losses = [r.train_loss for r in result.history]
    assert len(losses) == 5 and losses == [losses[0]] * 5


@pytest.mark.parametrize(
    "plan",
    [TuningPlan.prefix_only(), TuningPlan.just(2), TuningPlan.components(2, ["keys_values"])],
    ids=["prefix-only", "just-2", "kv"],
)
def test_frozen_parameters_bitwise_unchanged(plan):
    ds, vocab = toy_sets()
    model = make_model(vocab, seed=3)
    before = snapshot(model)
    train(model, ds, ds, plan, TrainConfig(batch_size=2, max_epochs=3, patience=100, check_frozen=True, restore_best=False))
    after = snapshot(model)
    changed = {k for k in before if not np.array_equal(before[k], after[k])}
    trainable = {k for k, p in model.parameters().items() if p.trainable}
    assert changed <= trainable
    assert changed  # something did train


def test_updated_scalars_equal_stats_for_prefix_only():
    ds, vocab = toy_sets()
    model = make_model(vocab, mode=PrefixMode.EMBED)
    before = snapshot(model)
    plan = TuningPlan(prefix=True, head=False)
    train(model, ds, ds, plan, TrainConfig(batch_size=8, max_epochs=2, patience=100, restore_best=False))
    updated = sum(int((before[k] != p.data).sum()) for k, p in model.parameters().items())
    assert updated == trainable_param_stats(model.enc_cfg, plan, model.prefix_cfg, 2)[0]


def test_reproducible_bitwise():
    ds, vocab = toy_sets()
    runs = []
    for _ in range(2):
        model = make_model(vocab, seed=7)
        train(model, ds, ds, TuningPlan.just(2), TrainConfig(batch_size=3, max_epochs=3, rng_seed=4))
        runs.append(snapshot(model))
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_best_dev_snapshot_is_restored():
    ds, vocab = toy_sets()
    model = make_model(vocab, seed=1)
    result = train(model, ds, ds, TuningPlan.just(2), TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=30, patience=3))
    assert accuracy(model, ds) == result.best_dev_acc == max([r.dev_acc for r in result.history] + [0.0])


def test_empty_training_set():
    ds, vocab = toy_sets()
    empty = encode_dataset([], vocab, {}, 8)
    with pytest.raises(DataError):
        train(make_model(vocab), empty, ds, TuningPlan.just(2), TrainConfig())


def test_divergence_reports_epoch(monkeypatch):
    ds, vocab = toy_sets()
    model = make_model(vocab)
    real = model.loss
    calls = {"n": 0}

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] > 2:
            raise NumericError("nan")
        return real(*args)

    monkeypatch.setattr(model, "loss", flaky)
    with pytest.raises(DivergenceError) as info:
        train(model, ds, ds, TuningPlan.just(2), TrainConfig(batch_size=4, max_epochs=5, patience=100))
    assert info.value.epoch == 2


def test_paper_preset():
    assert TrainConfig.reference().learning_rate == 2e-5


# -- optimizer ----------------------------------------------------------------


def test_adam_first_step_is_lr_times_sign():
    for g in (0.3, -7.0):
        p = Parameter(np.array([1.0]), "p")
        optimizer_step({"p": p}, {"p": np.array([g])}, AdamState(), lr=0.01)
        assert abs((p.data[0] - 1.0) - (-0.01 * np.sign(g))) < 1e-9


def test_adam_zero_gradient_is_no_update():
    p = Parameter(np.array([1.5, -2.0]), "p")
    optimizer_step({"p": p}, {"p": np.zeros(2)}, AdamState(), lr=0.1)
    assert p.data.tolist() == [1.5, -2.0]


def test_adam_ten_steps_match_scalar_oracle():
    p = Parameter(np.array([3.0]), "p")
    state = AdamState()
    for _ in range(10):
        optimizer_step({"p": p}, {"p": 2.0 * p.data}, state, lr=0.1)
    assert abs(p.data[0] - adam_scalar(3.0, lambda x: 2 * x, 0.1, 10)) < 1e-14


def test_adam_skips_frozen():
    p = Parameter(np.array([1.0]), "p", trainable=False)
    optimizer_step({"p": p}, {}, AdamState(), lr=0.1)
    assert p.data.tolist() == [1.0]


def test_adam_shape_mismatch():
    p = Parameter(np.zeros(3), "p")
    with pytest.raises(DimensionError):
        optimizer_step({"p": p}, {"p": np.zeros(2)}, AdamState(), lr=0.1)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
