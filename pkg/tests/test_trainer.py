import numpy as np
import pytest

from conftest import make_config
from dpc.errors import DigestMismatch, NumericError
from dpc.training import checkpoint as checkpoints
from dpc.training import trainer
from dpc.training.trainer import FeatureSplit, PreparedData, RunContext

LABELS = ["amusement", "anger", "awe"]


def _context(vocabulary, encoders, features, targets):
    split = FeatureSplit(np.asarray(features, dtype=np.float32), np.asarray(targets, dtype=np.int64))
    return RunContext(vocabulary, encoders, PreparedData(list(LABELS), split, split))


def test_overfits_six_instances(vocabulary, encoders):
    features = np.random.default_rng(0).normal(size=(6, 32))
    context = _context(vocabulary, encoders, features, [0, 1, 2, 0, 1, 2])
    config = make_config(model={"logit_scale": 10.0}, optim={"epochs": 50, "batch_size": 6})
    result = trainer.train(config, context)
    assert result.steps == 50
    assert result.history[-1].train_loss < 0.5 * result.history[0].train_loss
    np.testing.assert_array_equal(result.model.predict(context.data.train.features), [0, 1, 2, 0, 1, 2])


def test_encoders_stay_frozen(synthetic_context):
    snapshot = synthetic_context.encoders.snapshot()
    result = trainer.train(make_config(), synthetic_context)
    assert len(result.history) == 10
    assert synthetic_context.encoders.assert_frozen(snapshot) == (True, None)
    assert result.optimizer.parameters == [result.model.bank.values]


def test_training_is_deterministic(synthetic_context):
    config = make_config(optim={"epochs": 2})
    first = trainer.train(config, synthetic_context)
    second = trainer.train(config, synthetic_context)
    assert checkpoints.dumps(first.checkpoint) == checkpoints.dumps(second.checkpoint)
    assert [r.train_loss for r in first.history] == [r.train_loss for r in second.history]


def test_shuffle_seed_changes_the_result(synthetic_context):
    base = trainer.train(make_config(optim={"epochs": 1}), synthetic_context)
    shuffled = trainer.train(make_config(optim={"epochs": 1}, seeds={"shuffle": 1}), synthetic_context)
    assert base.checkpoint.prompt_bank.tobytes() != shuffled.checkpoint.prompt_bank.tobytes()


def test_untrained_prompt_scores_chance(synthetic_context):
    config = make_config()
    for split in (synthetic_context.data.train, synthetic_context.data.test):
        accuracy = trainer.zero_shot(config, synthetic_context, split=split).accuracy
        assert abs(accuracy - 1 / 3) <= 0.15, accuracy


def test_learns_the_synthetic_task(synthetic_context):
    config = make_config(optim={"epochs": 60})
    result = trainer.train(config, synthetic_context)
    assert config.prompt.flags.instance_specific and config.prompt.flags.class_specific
    assert result.steps <= 200
    train_accuracy = trainer.evaluate_model(result.model, synthetic_context.data.train).accuracy
    assert train_accuracy >= 0.90
    assert result.final_test_accuracy > trainer.zero_shot(config, synthetic_context).accuracy


def test_learning_rate_follows_the_schedule(synthetic_context):
    result = trainer.train(make_config(optim={"epochs": 4}), synthetic_context)
    assert [r.lr for r in result.history] == [0.1, 0.1, 0.1, 0.09]


def test_evaluate_reproduces_final_accuracy(synthetic_context):
    config = make_config(optim={"epochs": 3})
    result = trainer.train(config, synthetic_context)
    reloaded = checkpoints.loads(checkpoints.dumps(result.checkpoint))
    metrics = trainer.evaluate(reloaded, config, synthetic_context)
    assert metrics.accuracy == result.final_test_accuracy
    direct = trainer.evaluate_model(result.model, synthetic_context.data.test, config.optim.batch_size)
    np.testing.assert_array_equal(metrics.confusion, direct.confusion)
    assert metrics.total == len(synthetic_context.data.test)


def test_evaluate_refuses_another_configuration(synthetic_context):
    config = make_config(optim={"epochs": 1})
    result = trainer.train(config, synthetic_context)
    other = config.with_updates(optim={"lr0": 0.05})
    with pytest.raises(DigestMismatch) as info:
        trainer.evaluate(result.checkpoint, other, synthetic_context)
    assert config.digest in str(info.value)
    assert other.digest in str(info.value)


def test_empty_evaluation_split(synthetic_context):
    config = make_config(optim={"epochs": 1})
    result = trainer.train(config, synthetic_context)
    empty = FeatureSplit(np.zeros((0, 32), dtype=np.float32), np.zeros(0, dtype=np.int64))
    metrics = trainer.evaluate(result.checkpoint, config, synthetic_context, split=empty)
    assert metrics.total == 0
    assert metrics.accuracy == 0.0


def test_max_steps_stops_mid_epoch(synthetic_context):
    result = trainer.train(make_config(), synthetic_context, max_steps=2)
    assert result.steps == 2
    assert len(result.history) == 1
    assert result.checkpoint.epoch == 1


def test_numeric_error_names_epoch_batch_and_instances(vocabulary, encoders):
    features = np.random.default_rng(1).normal(size=(4, 32))
    features[2, 5] = np.inf
    context = _context(vocabulary, encoders, features, [0, 1, 2, 0])
    with pytest.raises(NumericError, match=r"epoch 0, batch 0, instances \["):
        trainer.train(make_config(optim={"epochs": 1}), context)


def test_thread_count_does_not_change_predictions(synthetic_context):
    model = trainer.build_model(make_config(), synthetic_context)
    split = synthetic_context.data.test
    single = trainer.predict_split(model, split, batch_size=8, threads=1)
    pooled = trainer.predict_split(model, split, batch_size=8, threads=3)
    np.testing.assert_array_equal(single, pooled)
    assert len(single) == len(split)
