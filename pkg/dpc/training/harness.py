"""Ablation, template sensitivity and gradient-check harnesses."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from dpc.config import RunConfig
from dpc.errors import ContractViolation
from dpc.graph.gradcheck import GradCheckReport, grad_check
from dpc.graph.tape import corrupted_rule, override_backward
from dpc.graph.tensor import precision
from dpc.models.model_interface import load_encoders
from dpc.prompting.prompts import ABLATION_GRID, AblationFlags
from dpc.training.trainer import RunContext, build_model, train, zero_shot

logger = logging.getLogger(__name__)


@dataclass
class AblationRow:
    flags: AblationFlags
    accuracy: float
    train_loss: float


@dataclass
class AblationReport:
    rows: List[AblationRow] = field(default_factory=list)
    baseline_accuracy: float = 0.0


@dataclass
class SensitivityReport:
    templates: List[str]
    accuracies: List[float]

    @property
    def std(self) -> float:
        return sample_std(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))


def sample_std(values: Sequence[float]) -> float:
    """Standard deviation with the ``n - 1`` denominator."""
    if len(values) < 2:
        raise ContractViolation(f"sample standard deviation needs at least 2 values, got {len(values)}")
    return float(np.std(np.asarray(values, dtype=np.float64), ddof=1))


def ablate(config: RunConfig, context: RunContext) -> AblationReport:
    """One training run per flag combination, same seeds and schedule, plus the untrained baseline."""
    report = AblationReport(baseline_accuracy=zero_shot(config, context).accuracy)
    for flags in ABLATION_GRID:
        result = train(config, context, flags=flags)
        row = AblationRow(flags, result.final_test_accuracy, result.history[-1].train_loss)
        report.rows.append(row)
        logger.info("ablation %s: accuracy %.4f", flags.label, row.accuracy)
    return report


def sensitivity(templates: Sequence[str], config: RunConfig, context: RunContext) -> SensitivityReport:
    if len(templates) < 2:
        raise ContractViolation(f"sensitivity analysis needs at least 2 templates, got {len(templates)}")
    accuracies = []
    for template in templates:
        result = train(config, context, template=template)
        accuracies.append(result.final_test_accuracy)
        logger.info("template %r: accuracy %.4f", template, accuracies[-1])
    return SensitivityReport(list(templates), accuracies)


def gradcheck_run(config: RunConfig, context: RunContext, corrupt_op: Optional[str] = None) -> GradCheckReport:
    """Finite-difference check of d(loss)/d(prompt bank) on the full model in 64-bit.

    ``corrupt_op`` swaps in a deliberately wrong backward rule for that op
    kind so the detector itself can be exercised.
    """
    settings = config.gradcheck
    corrupt_op = corrupt_op or settings.corrupt_op
    with precision("float64"):
        encoders = load_encoders(
            config.image_encoder_config(),
            config.text_encoder_config(len(context.vocabulary)),
            config.seeds.weights,
            config.resolve_path(config.paths.encoder_archive),
        )
        local = RunContext(context.vocabulary, encoders, context.data)
        model = build_model(config, local)
        count = min(settings.instances, len(context.data.train))
        features = context.data.train.features[:count].astype(np.float64)
        targets = context.data.train.targets[:count]

        def loss():
            return model.loss(features, targets)

        def check() -> GradCheckReport:
            return grad_check(loss, model.parameters(), step=settings.step, tolerance=settings.tolerance,
                              samples=settings.samples, seed=config.seeds.weights)

        if corrupt_op:
            with override_backward(corrupt_op, corrupted_rule(corrupt_op, settings.corrupt_factor)):
                report = check()
        else:
            report = check()
    logger.info("gradcheck: %d coordinates, max rel err %.3e (%s)",
                report.coordinates, report.max_rel_error, "pass" if report.passed else "FAIL")
    return report
