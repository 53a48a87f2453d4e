"""Step schedule and the averaged SGD driver."""

import numpy as np
import pytest

from sgdci.batching import Allocation, accumulate, make_plan
from sgdci.errors import NonFiniteIterate, OracleDimensionMismatch
from sgdci.models import linear_oracle, linspace_params
from sgdci.sgd import GradientOracle, SgdRunConfig, StepSchedule, run_sgd, step_size
from sgdci.streams import derive_stream


@pytest.mark.parametrize(
    "a, r, t, expected",
    [
        (1.0, 2.0 / 3.0, 8, 0.25),
        (0.5, 0.75, 1, 0.5),
        (2.0, 0.6, 32, 0.25),
    ],
)
def test_step_size_values(a, r, t, expected):
    assert step_size(StepSchedule(a=a, r=r), t) == pytest.approx(expected)


@pytest.mark.parametrize("bad_r", [0.5, 1.0, 0.0, 1.4])
def test_schedule_rejects_exponent_outside_open_interval(bad_r):
    with pytest.raises(ValueError):
        StepSchedule(a=0.5, r=bad_r)


def test_schedule_rejects_nonpositive_prefactor():
    with pytest.raises(ValueError):
        StepSchedule(a=0.0, r=0.6)


def test_schedule_defaults():
    s = StepSchedule()
    assert s.a == 0.5
    assert s.r == pytest.approx(2.0 / 3.0)


def _noiseless(x_star):
    x_star = np.asarray(x_star, dtype=float)

    def next_gradient(x, stream):
        return x - x_star

    return GradientOracle(dim=x_star.shape[0], next_gradient=next_gradient)


def test_fixed_point_stays_put():
    xs = np.array([1.0, -2.0])
    seen = []
    final = run_sgd(
        _noiseless(xs),
        SgdRunConfig(T=10, x0=xs.copy()),
        derive_stream(0),
        observer=seen.append,
    )
    assert np.array_equal(final, xs)
    assert len(seen) == 10
    for it in seen:
        assert np.array_equal(it, xs)


def test_single_step_hand_value():
    # G(x) = x - 1, x0 = 0, a = 0.5: X_1 = 0 - 0.5 * (0 - 1) = 0.5
    final = run_sgd(
        _noiseless(np.array([1.0])),
        SgdRunConfig(T=1, schedule=StepSchedule(a=0.5, r=2.0 / 3.0)),
        derive_stream(0),
    )
    assert final[0] == pytest.approx(0.5)


def test_noiseless_error_nonincreasing():
    xs = np.array([2.0])
    errs = []
    run_sgd(
        _noiseless(xs),
        SgdRunConfig(T=200),
        derive_stream(0),
        observer=lambda x: errs.append(abs(float(x[0]) - 2.0)),
    )
    diffs = np.diff(errs)
    assert np.all(diffs <= 1e-15)
    assert errs[-1] < 1e-3


def test_burn_in_advances_schedule_but_hides_iterates():
    xs = np.array([1.0])
    plain, burned = [], []
    run_sgd(_noiseless(xs), SgdRunConfig(T=8), derive_stream(0), plain.append)
    run_sgd(
        _noiseless(xs), SgdRunConfig(T=5, burn_in=3), derive_stream(0), burned.append
    )
    assert len(burned) == 5
    # the burned run's first observed iterate is the plain run's fourth
    assert burned[0][0] == pytest.approx(plain[3][0])
    assert burned[-1][0] == pytest.approx(plain[7][0])


def test_run_is_deterministic_under_lineage():
    params = linspace_params(2)
    a = run_sgd(linear_oracle(params), SgdRunConfig(T=50), derive_stream(3, 1))
    b = run_sgd(linear_oracle(params), SgdRunConfig(T=50), derive_stream(3, 1))
    assert np.array_equal(a, b)


def test_oracle_shape_mismatch_detected():
    bad = GradientOracle(dim=2, next_gradient=lambda x, s: np.zeros(3))
    with pytest.raises(OracleDimensionMismatch):
        run_sgd(bad, SgdRunConfig(T=1), derive_stream(0))


def test_x0_shape_mismatch_detected():
    with pytest.raises(OracleDimensionMismatch):
        run_sgd(
            _noiseless(np.array([1.0])),
            SgdRunConfig(T=1, x0=np.zeros(2)),
            derive_stream(0),
        )


def test_nonfinite_iterate_reports_step_index():
    def explode(x, stream):
        return np.array([np.inf])

    with pytest.raises(NonFiniteIterate) as exc:
        run_sgd(
            GradientOracle(dim=1, next_gradient=explode),
            SgdRunConfig(T=5),
            derive_stream(0),
        )
    assert exc.value.t == 1


def test_config_validation():
    with pytest.raises(ValueError):
        SgdRunConfig(T=0)
    with pytest.raises(ValueError):
        SgdRunConfig(T=5, burn_in=-1)


def test_averaged_iterate_lands_near_target():
    # end to end at the default schedule; CLT scale is ~ sqrt(tr Sigma / T)
    d, T = 2, 10**5
    params = linspace_params(d)
    plan = make_plan(T, 10, Allocation(kind="es"))
    acc = accumulate(plan, d)
    run_sgd(
        linear_oracle(params), SgdRunConfig(T=T), derive_stream(314), acc.feed
    )
    summary = acc.finalize()
    assert float(np.linalg.norm(summary.xbar - params.x_star)) < 0.05
