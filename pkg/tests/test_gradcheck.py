"""
Tests for the finite-difference gradient oracle.
"""

import numpy as np
import pytest

from thermask.autodiff import Tensor
from thermask.errors import NonDeterministicError, PreconditionError
from thermask.gradcheck import GradCheckEntry, GradCheckReport, grad_check


def test_quadratic_at_three():
    x = Tensor([3.0], requires_grad=True, name="x", dtype=np.float64)
    report = grad_check(lambda: (x * x).sum() * 0.5, [x])
    (entry,) = report.entries
    assert entry.name == "x"
    assert entry.analytic == pytest.approx(3.0)
    assert entry.numeric == pytest.approx(3.0, abs=1e-8)
    assert report.passed


def test_composed_chain_passes():
    x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    report = grad_check(lambda: (x.log().exp() * x).sum(), {"x": x})
    assert report.passed
    assert len(report.entries) == 2


def test_empty_report_passes():
    report = GradCheckReport(tol=1e-4, step=1e-5)
    assert report.passed and report.max_error == 0.0


def test_failures_and_worst_by_parameter():
    report = GradCheckReport(tol=1e-3, step=1e-5, entries=[
        GradCheckEntry("a", (0,), 1.0, 1.0, 0.0),
        GradCheckEntry("a", (1,), 1.0, 1.1, 0.09),
        GradCheckEntry("b", (0,), 2.0, 2.0, 1e-6),
    ])
    assert not report.passed
    assert [e.index for e in report.failures()] == [(1,)]
    assert [(e.name, e.error) for e in report.worst_by_parameter()] == [("a", 0.09), ("b", 1e-6)]


def test_sampling_limits_checked_elements(rng):
    x = Tensor(rng.normal(size=(10, 10)), requires_grad=True, dtype=np.float64)
    report = grad_check(lambda: (x * x).sum(), {"x": x}, sample=7, seed=3)
    assert len(report.entries) == 7
    assert len({e.index for e in report.entries}) == 7
    assert report.passed


def test_parameter_values_restored(rng):
    values = rng.normal(size=(3, 2))
    x = Tensor(values, requires_grad=True, dtype=np.float64)
    grad_check(lambda: (x ** 3).sum(), {"x": x})
    np.testing.assert_array_equal(x.data, values)


def test_nondeterministic_function_raises():
    x = Tensor([1.0], requires_grad=True, dtype=np.float64)
    calls = []

    def f():
        calls.append(1)
        return x * float(len(calls))

    with pytest.raises(NonDeterministicError):
        grad_check(f, {"x": x})


def test_nonpositive_step_raises():
    x = Tensor([1.0], requires_grad=True, dtype=np.float64)
    with pytest.raises(PreconditionError):
        grad_check(lambda: x.sum(), {"x": x}, step=0.0)
