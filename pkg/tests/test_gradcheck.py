import numpy as np
import pytest

from cawm import Tensor, check_gradients
from cawm.checks import INVARIANT_SUITES, run_gradcheck, run_selftest
from cawm.gradcheck import near_kink, relative_error
from cawm.tensor import _make, relu


def test_near_kink_flags_relu_crossings_only():
    h = 1e-3
    xs = np.array([-2, -1, 0, 1, 2]) * h
    assert near_kink(np.maximum(xs + 0.5 * h, 0), h)
    assert not near_kink(np.sin(1 + xs), h)
    assert not near_kink(3 * xs + 1, h)


def test_relative_error_is_normwise():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0
    got = relative_error(np.array([1.1, 2.0]), np.array([1.0, 2.0]))
    assert got == pytest.approx(np.sqrt(0.01 / 5), rel=1e-6)


def test_correct_gradient_passes():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
    res = check_gradients(lambda: ((x * x).sum() + (x * 3.0).mean()), {"x": x}, name="poly")
    assert res.passed and res.worst < 1e-8


def test_wrong_gradient_is_caught():
    x = Tensor(np.random.default_rng(1).normal(size=5), requires_grad=True)

    def bad_square(t):
        return _make(t.data ** 2, (t,), lambda g: (g * 3.0 * t.data,))  # should be 2x

    res = check_gradients(lambda: bad_square(x).sum(), {"x": x})
    assert not res.passed and res.worst > 0.1


def test_kinks_are_skipped_not_counted_as_errors():
    x = Tensor(np.array([0.0002, -0.0003, 0.5, -0.7, 1.2, 0.9]), requires_grad=True)
    res = check_gradients(lambda: relu(x).sum(), {"x": x}, max_probes=6)
    assert res.kinks.get("x", 0) == 2
    assert res.passed


def test_gradcheck_subset_and_selftest():
    res = run_gradcheck(names=["sigmoid", "conv2d_s2_p0", "linear_recurrence"])
    assert [r.name for r in res] == ["sigmoid", "conv2d_s2_p0", "linear_recurrence"]
    assert all(r.passed for r in res)
    results = run_selftest(seed=3)
    assert [r.name for r in results] == list(INVARIANT_SUITES)
    assert all(r.passed for r in results), [r.detail for r in results if not r.passed]
