"""Replicated coverage / volume / determinant studies and CSV writers."""

import csv

import numpy as np
import pytest

from sgdci.batching import Allocation, make_plan, accumulate
from sgdci.experiments import (
    METHODS,
    CoverageConfig,
    FailedCell,
    _run_chains,
    run_comparison,
    run_coverage,
    run_det_study,
    run_volume_study,
    write_coverage_csv,
    write_det_csv,
    write_volume_csv,
)
from sgdci.models import linear_oracle, linspace_params, logistic_oracle
from sgdci.sgd import SgdRunConfig, StepSchedule, run_sgd
from sgdci.streams import derive_stream


def _serial_batch_stats(model, d, T, m, burn_in, seeds):
    """Reference path: one run_sgd call per chain, streamed into batches."""
    params = linspace_params(d)
    factory = linear_oracle if model == "linear" else logistic_oracle
    plan = make_plan(T, m, Allocation(kind="ibs", r=2.0 / 3.0))
    xi = np.empty((m, len(seeds), d))
    xbar = np.empty((len(seeds), d))
    sched = StepSchedule()
    for j, s in enumerate(seeds):
        acc = accumulate(plan, d)
        cfg = SgdRunConfig(T=T, burn_in=burn_in, schedule=sched)
        run_sgd(factory(params), cfg, derive_stream(*s), acc.feed)
        out = acc.finalize()
        xi[:, j, :] = out.xi
        xbar[j] = out.xbar
    return xi, xbar, plan


class TestChainEngine:
    @pytest.mark.parametrize("model", ["linear", "logistic"])
    def test_matches_one_chain_at_a_time(self, model):
        d, T, m = 2, 600, 5
        seeds = [(42, 0, j) for j in range(4)]
        xi_ref, xbar_ref, plan = _serial_batch_stats(model, d, T, m, 0, seeds)
        params = linspace_params(d)
        gens = [derive_stream(*s).gen for s in seeds]
        xi, xbar = _run_chains(model, params.x_star, StepSchedule(), 0, T,
                               plan.boundaries, gens)
        assert np.allclose(xi, xi_ref, rtol=0, atol=1e-12)
        assert np.allclose(xbar, xbar_ref, rtol=0, atol=1e-12)

    def test_matches_with_burn_in(self):
        d, T, m, burn = 1, 400, 4, 37
        seeds = [(43, j) for j in range(3)]
        xi_ref, xbar_ref, plan = _serial_batch_stats("linear", d, T, m, burn, seeds)
        params = linspace_params(d)
        gens = [derive_stream(*s).gen for s in seeds]
        xi, xbar = _run_chains("linear", params.x_star, StepSchedule(), burn, T,
                               plan.boundaries, gens)
        assert np.allclose(xi, xi_ref, rtol=0, atol=1e-12)
        assert np.allclose(xbar, xbar_ref, rtol=0, atol=1e-12)


class TestRunCoverage:
    def _cfg(self, **over):
        base = dict(
            model="linear", d=2, T=800, method="bm_joint", m=8,
            alloc=Allocation(kind="es"), replications=12, base_seed=21,
            cal_reps=10000,
        )
        base.update(over)
        return CoverageConfig(**base)

    def test_deterministic_signature(self):
        a = run_coverage(self._cfg())
        b = run_coverage(self._cfg())
        assert a.signature() == b.signature()
        assert a.wall_time >= 0.0

    def test_thread_count_does_not_change_results(self):
        a = run_coverage(self._cfg(), threads=1)
        b = run_coverage(self._cfg(), threads=3)
        assert a.signature() == b.signature()

    def test_coverage_is_a_fraction(self):
        rep = run_coverage(self._cfg(replications=16))
        assert 0.0 <= rep.coverage <= 1.0
        assert rep.hits == pytest.approx(rep.coverage * (16 - rep.degenerate))

    def test_marginal_method_runs(self):
        rep = run_coverage(self._cfg(method="bm_marginal", d=1, m=8))
        assert 0.0 <= rep.coverage <= 1.0
        assert rep.alpha_used is not None

    def test_sectioning_methods_run(self):
        rep = run_coverage(self._cfg(method="sectioning_joint", m=8,
                                     replications=6))
        assert 0.0 <= rep.coverage <= 1.0

    def test_bmi_method_runs(self):
        rep = run_coverage(self._cfg(method="bmi_marginal", replications=6))
        assert 0.0 <= rep.coverage <= 1.0
        assert rep.alpha_used is None

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            self._cfg(method="magic")

    def test_joint_needs_more_batches_than_dims(self):
        with pytest.raises(ValueError, match="m > d"):
            self._cfg(d=6, m=6)

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            self._cfg(model="quadratic")


class TestVolumeStudy:
    def test_rows_and_determinism(self):
        rows_a = run_volume_study(
            d=1, m_list=[8, 12], allocation=Allocation(kind="es"),
            delta=0.05, reps=10000, base_seed=77, det_reps=10000,
        )
        rows_b = run_volume_study(
            d=1, m_list=[8, 12], allocation=Allocation(kind="es"),
            delta=0.05, reps=10000, base_seed=77, det_reps=10000,
        )
        assert [r.m for r in rows_a] == [8, 12]
        for ra, rb in zip(rows_a, rows_b):
            assert ra.factor.estimate == rb.factor.estimate
            assert ra.alpha.alpha_hat == rb.alpha.alpha_hat
            assert ra.factor.estimate > 0.0

    def test_m_must_exceed_d(self):
        with pytest.raises(ValueError):
            run_volume_study(
                d=3, m_list=[3], allocation=Allocation(kind="es"),
                delta=0.05, reps=10000, base_seed=78,
            )


class TestDetStudy:
    def test_rank_deficient_batches_give_zero(self):
        dets = run_det_study(d=4, m=3, T=600, model="linear", R=8, base_seed=5)
        assert dets.shape == (8,)
        assert np.all(dets == 0.0)

    def test_one_extra_batch_restores_positive_volume(self):
        dets = run_det_study(d=4, m=5, T=600, model="linear", R=8, base_seed=5)
        assert np.all(dets > 0.0)

    def test_deterministic(self):
        a = run_det_study(d=2, m=6, T=500, model="logistic", R=5, base_seed=6)
        b = run_det_study(d=2, m=6, T=500, model="logistic", R=5, base_seed=6)
        assert np.array_equal(a, b)


class TestComparison:
    # tiny m here is the point of the test; the heavy-tail caution is expected
    @pytest.mark.filterwarnings("ignore:m - d")
    def test_every_method_reports_or_fails_loud(self):
        out = run_comparison(
            model="linear", d=3, T=600, m=3, alloc=Allocation(kind="es"),
            delta=0.05, replications=4, base_seed=9, cal_reps=10000,
        )
        assert len(out) == len(METHODS)
        by_method = {
            (r.method if isinstance(r, FailedCell) else r.config.method): r
            for r in out
        }
        # m = d: the joint cells cannot build a region and must fail loud
        assert isinstance(by_method["bm_joint"], FailedCell)
        assert isinstance(by_method["sectioning_joint"], FailedCell)
        assert "m > d" in by_method["bm_joint"].error
        # the marginal and Bonferroni cells still run
        assert not isinstance(by_method["bm_marginal"], FailedCell)
        assert not isinstance(by_method["bmi_joint"], FailedCell)

    def test_all_cells_pass_when_m_large_enough(self):
        out = run_comparison(
            model="linear", d=1, T=600, m=8, alloc=Allocation(kind="es"),
            delta=0.05, replications=4, base_seed=10, cal_reps=10000,
        )
        assert all(not isinstance(r, FailedCell) for r in out)


class TestCsvWriters:
    def test_coverage_csv_round_trip(self, tmp_path):
        cfg = CoverageConfig(
            model="linear", d=1, T=400, method="bm_marginal", m=8,
            alloc=Allocation(kind="ibs", r=0.5), replications=5,
            base_seed=11, cal_reps=10000,
        )
        rep = run_coverage(cfg)
        fail = FailedCell(method="bm_joint", error="ValueError: m > d needed")
        path = tmp_path / "cov.csv"
        write_coverage_csv([rep, fail], path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        ok, bad = rows
        assert ok["status"] == "ok"
        assert ok["model"] == "linear"
        assert ok["alloc"] == "ibs"
        assert float(ok["alloc_r"]) == 0.5
        assert int(ok["replications"]) == 5
        assert int(ok["base_seed"]) == 11
        assert float(ok["coverage"]) == pytest.approx(rep.coverage)
        assert bad["status"] == "failed"
        assert bad["method"] == "bm_joint"
        assert "ValueError" in bad["error"]
        assert bad["coverage"] == ""

    def test_volume_csv(self, tmp_path):
        rows = run_volume_study(
            d=1, m_list=[8, 10], allocation=Allocation(kind="es"),
            delta=0.05, reps=10000, base_seed=12, det_reps=2000,
        )
        path = tmp_path / "vol.csv"
        write_volume_csv(rows, path)
        with open(path, newline="") as fh:
            got = list(csv.DictReader(fh))
        assert len(got) == 2
        assert [int(r["m"]) for r in got] == [8, 10]
        assert all(float(r["v"]) > 0 for r in got)
        assert all(int(r["base_seed"]) == 12 for r in got)

    def test_det_csv(self, tmp_path):
        dets = run_det_study(d=2, m=5, T=400, model="linear", R=3, base_seed=13)
        path = tmp_path / "det.csv"
        write_det_csv(dets, path, model="linear", d=2, m=5, T=400, base_seed=13)
        with open(path, newline="") as fh:
            got = list(csv.DictReader(fh))
        assert len(got) == 3
        assert [int(r["rep"]) for r in got] == [0, 1, 2]
        assert all(r["model"] == "linear" for r in got)
        assert float(got[0]["det_scaled"]) == pytest.approx(dets[0])
