import numpy as np
import pytest

from conftest import make_config
from dpc.errors import ContractViolation
from dpc.models.model_interface import clear_cache
from dpc.prompting.prompts import ABLATION_GRID
from dpc.training import harness, trainer
from dpc.training.trainer import FeatureSplit, PreparedData, RunContext

SHORT_TEMPLATE = "a photo of a [label word]"


def test_sample_std_examples():
    assert harness.sample_std([0.9389, 0.9407, 0.9357]) == pytest.approx(0.0025, abs=1e-4)
    assert harness.sample_std([0.8855, 0.8872, 0.8788]) == pytest.approx(0.0044, abs=1e-4)
    assert harness.sample_std([0.5, 0.5, 0.5]) == 0.0


def test_sample_std_needs_two_values():
    with pytest.raises(ContractViolation, match="at least 2"):
        harness.sample_std([0.7])


def test_sensitivity_needs_two_templates(synthetic_context):
    with pytest.raises(ContractViolation, match="at least 2 templates"):
        harness.sensitivity([SHORT_TEMPLATE], make_config(), synthetic_context)


def test_sensitivity_trains_once_per_template(synthetic_context):
    config = make_config(optim={"epochs": 2})
    templates = list(config.prompt.templates[:2])
    report = harness.sensitivity(templates, config, synthetic_context)
    assert report.templates == templates
    assert len(report.accuracies) == 2
    assert report.accuracies[0] == trainer.train(config, synthetic_context).final_test_accuracy
    assert report.std == harness.sample_std(report.accuracies)


def test_ablation_covers_every_flag_combination(synthetic_context):
    config = make_config(optim={"epochs": 20})
    report = harness.ablate(config, synthetic_context)
    assert [row.flags for row in report.rows] == list(ABLATION_GRID)
    assert abs(report.baseline_accuracy - 1 / 3) <= 0.15
    for row in report.rows:
        assert report.baseline_accuracy < row.accuracy <= 1.0, row.flags.label
    full = trainer.train(config, synthetic_context)
    assert report.rows[-1].accuracy == full.final_test_accuracy


def _gradcheck_context(vocabulary, dim=16, instances=4):
    rng = np.random.default_rng(0)
    split = FeatureSplit(rng.normal(size=(instances, dim)), np.arange(instances) % 3)
    return RunContext(vocabulary, None, PreparedData(["amusement", "anger", "awe"], split, split))


def test_gradcheck_run_passes_on_the_full_model(vocabulary):
    clear_cache()
    config = make_config(model={"dim": 16}, prompt={"template": SHORT_TEMPLATE})
    report = harness.gradcheck_run(config, _gradcheck_context(vocabulary))
    # 3 slices of 4 tokens in 16 dimensions
    assert report.coordinates == 3 * 4 * 16
    assert report.passed, report.max_rel_error
    clear_cache()


def test_gradcheck_run_catches_a_corrupted_rule(vocabulary):
    clear_cache()
    config = make_config(model={"dim": 16}, prompt={"template": SHORT_TEMPLATE},
                         gradcheck={"corrupt_op": "mul", "samples": 20})
    report = harness.gradcheck_run(config, _gradcheck_context(vocabulary))
    assert not report.passed
    assert report.max_rel_error > config.gradcheck.tolerance
    clear_cache()
