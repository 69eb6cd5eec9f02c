import itertools

import numpy as np
import pytest

from dpc.errors import ContractViolation, NonDeterministicError
from dpc.graph import ops
from dpc.graph.gradcheck import grad_check
from dpc.graph.tape import corrupted_rule, get_backward_rule, override_backward
from dpc.graph.tensor import Parameter, Tensor
from dpc.prompting.prompts import compose_diversified


def test_quadratic(float64):
    x = Parameter(3.0, name="x")
    report = grad_check(lambda: ops.mul(x, x), [x])
    check = report.checks[0]
    assert check.analytic[0] == pytest.approx(6.0, abs=1e-12)
    assert check.numeric[0] == pytest.approx(6.0, abs=1e-6)
    assert report.passed
    assert report.coordinates == 1


def test_corrupted_multiply_is_detected(float64):
    x = Parameter(3.0, name="x")
    original = get_backward_rule("mul")
    with override_backward("mul", corrupted_rule("mul")):
        report = grad_check(lambda: ops.mul(x, x), [x])
    assert not report.passed
    assert report.max_rel_error > 0.1
    assert get_backward_rule("mul") is original


def test_non_deterministic_function_is_refused(float64):
    x = Parameter(1.0, name="x")
    calls = itertools.count()

    def drifting():
        return ops.scale(x, float(next(calls)))

    with pytest.raises(NonDeterministicError, match="not deterministic"):
        grad_check(drifting, [x])


def test_step_must_be_positive():
    x = Parameter(1.0, name="x")
    with pytest.raises(ContractViolation):
        grad_check(lambda: ops.mul(x, x), [x], step=0.0)


def test_composition_pipeline_passes(float64):
    rng = np.random.default_rng(0)
    bank = Parameter(rng.normal(size=(3, 4, 8)), name="prompt_bank")
    feature = Tensor(rng.normal(size=8))
    readout = Tensor(rng.normal(size=(4, 8)))

    def loss():
        return ops.sum(ops.mul(compose_diversified(feature, bank), readout))

    report = grad_check(loss, [bank], tolerance=1e-4)
    assert report.passed, report.max_rel_error
    assert report.coordinates == 3 * 4 * 8


def test_sampled_coordinates_are_recorded(float64):
    rng = np.random.default_rng(1)
    a = Parameter(rng.normal(size=(4, 5)), name="a")
    b = Parameter(rng.normal(size=(5,)), name="b")
    report = grad_check(lambda: ops.sum(ops.mul(a, b)), [a, b], samples=7, seed=3)
    assert report.coordinates == 7
    indices = [(check.name, index) for check in report.checks for index in check.indices]
    assert len(set(indices)) == 7
    again = grad_check(lambda: ops.sum(ops.mul(a, b)), [a, b], samples=7, seed=3)
    assert [c.indices for c in again.checks] == [c.indices for c in report.checks]
