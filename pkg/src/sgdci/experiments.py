"""Replicated experiment harness: coverage, volume, and degeneracy studies.

Replication r of a study consumes the stream (base_seed, r) and nothing
else, so reports are reproducible and independent of scheduling. The SGD
recursions of all replications advance together on (R, d) arrays, drawing
each replication's noise in blocks from its own generator; this produces
draw-for-draw the same iterates as running the serial driver once per
replication (a tested equivalence), while keeping desk-scale tables in the
seconds-to-minutes range.

Every report embeds its full configuration. Wall-clock time is recorded for
convenience but is the one field outside the determinism contract.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .baselines import bmi_batch_count
from .batching import Allocation, BatchPlan, ideal_weights, make_plan
from .calibration import (
    LimitDrawSpec,
    QuantileCache,
    ScalingQuantile,
    estimate_alpha,
    f_quantile,
    spec_from_plan,
)
from .errors import ExcessDegeneracy, NotPositiveDefinite, SgdciError
from .inference import VolumeFactor, expected_volume_factor
from .linalg import SymMatrix, det_sqrt, quad_form_inv
from .models import linspace_params
from .sgd import StepSchedule
from .streams import derive_stream

DESK_REPLICATIONS = 300
DEFAULT_CAL_REPS = 200_000
DEFAULT_CAL_SEED = 1_000_003

METHODS = (
    "bm_joint",
    "bm_marginal",
    "sectioning_joint",
    "sectioning_marginal",
    "bmi_joint",
    "bmi_marginal",
)


def _run_chains(model: str, x_star, schedule: StepSchedule, burn_in: int,
                T: int, boundaries, gens):
    """Advance len(gens) independent recursions and return batch statistics.

    boundaries is any integer array 0 = tau_0 < ... < tau_m = T; returns
    (xi, xbar) with xi of shape (m, R, d) and xbar of shape (R, d). Chain j
    draws (d + 1) standard normals per step from gens[j], block-buffered, in
    exactly the order the serial driver would.
    """
    R = len(gens)
    x_star = np.asarray(x_star, dtype=float)
    d = x_star.shape[0]
    bounds = np.asarray(boundaries, dtype=np.int64)
    m = len(bounds) - 1
    sizes = np.diff(bounds).astype(float)
    step_batch = np.searchsorted(bounds, np.arange(T), side="right") - 1
    x = np.zeros((R, d))
    sums = np.zeros((m, R, d))
    total = burn_in + T
    chunk = max(64, min(4096, (1 << 21) // max(1, R * (d + 1))))
    noise = np.empty((chunk, R, d + 1))
    a_sched, r_sched = schedule.a, schedule.r
    t = 0
    while t < total:
        c = min(chunk, total - t)
        for j, g in enumerate(gens):
            noise[:c, j, :] = g.standard_normal((c, d + 1))
        for s in range(c):
            tt = t + s + 1
            gam = a_sched * tt ** (-r_sched)
            av = noise[s, :, :d]
            xa = np.einsum("rd,rd->r", av, x)
            if model == "linear":
                b = av @ x_star + noise[s, :, d]
                coef = -2.0 * (b - xa)
            else:
                u = ndtr(noise[s, :, d])
                lbl = np.where(u < expit(av @ x_star), 1.0, -1.0)
                coef = -lbl * expit(-lbl * xa)
            x = x - gam * (coef[:, None] * av)
            k = tt - burn_in - 1
            if k >= 0:
                sums[step_batch[k]] += x
        t += c
    xi = sums / sizes[:, None, None]
    xbar = sums.sum(axis=0) / float(T)
    return xi, xbar


@dataclass(frozen=True)
class CoverageConfig:
    model: str
    d: int
    T: int
    method: str
    m: int
    alloc: Allocation
    delta: float = 0.05
    replications: int = DESK_REPLICATIONS
    base_seed: int = 0
    schedule: StepSchedule = field(default_factory=StepSchedule)
    burn_in: int = 0
    cal_reps: int = DEFAULT_CAL_REPS
    cal_seed: int = DEFAULT_CAL_SEED

    def __post_init__(self):
        if self.model not in ("linear", "logistic"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.method in ("bm_joint", "sectioning_joint") and self.m <= self.d:
            raise ValueError(
                f"{self.method} needs m > d, got m={self.m}, d={self.d}"
            )


@dataclass
class CoverageReport:
    config: CoverageConfig
    hits: float
    degenerate: int
    coverage: float
    half_width: float
    alpha_used: Optional[float]
    replication_log: list
    wall_time: float

    def signature(self) -> tuple:
        """Everything the determinism contract covers (wall time excluded)."""
        return (
            self.config,
            self.hits,
            self.degenerate,
            self.coverage,
            self.half_width,
            self.alpha_used,
            tuple(tuple(sorted(r.items())) for r in self.replication_log),
        )


def _marginal_fraction(xbar_r, x_star, half) -> float:
    covered = np.abs(xbar_r - x_star) <= half
    return float(np.mean(covered))


def run_coverage(
    config: CoverageConfig,
    cache: Optional[QuantileCache] = None,
    threads: int = 1,
) -> CoverageReport:
    """Estimate the coverage rate of one method under one configuration.

    Degenerate replications (numerically rank-deficient covariance) are a
    third outcome, counted separately from hits and misses; the run aborts
    if they exceed one percent of replications. Marginal methods record the
    average coverage across the d coordinates of each replication.
    """
    t0 = time.perf_counter()
    cfg = config
    x_star = linspace_params(cfg.d).x_star
    R = cfg.replications
    d = cfg.d
    mth = cfg.method

    alpha_used = None
    if mth.startswith("sectioning"):
        sections = cfg.m
        sec_T = cfg.T // sections
        if sec_T < 1:
            raise ValueError(f"T={cfg.T} leaves empty sections at m={sections}")
        gens = [
            derive_stream(cfg.base_seed, rep, j).gen
            for rep in range(R)
            for j in range(sections)
        ]
        bounds = np.array([0, sec_T])
        _, chain_means = _run_chains(
            cfg.model, x_star, cfg.schedule, cfg.burn_in, sec_T, bounds, gens
        )
        means = chain_means.reshape(R, sections, d)
        if mth == "sectioning_joint":
            alpha_used = f_quantile(d, sections - d, 1.0 - cfg.delta)
            scale = d * (sections - 1) / (sections * (sections - d)) * alpha_used
        else:
            alpha_used = f_quantile(1, sections - 1, 1.0 - cfg.delta)
        hits, degenerate, log = 0.0, 0, []
        for rep in range(R):
            mu = means[rep]
            pooled = mu.mean(axis=0)
            dev = mu - pooled[None, :]
            if mth == "sectioning_joint":
                S = SymMatrix(dev.T @ dev / (sections - 1))
                try:
                    quad = quad_form_inv(S, pooled - x_star)
                except NotPositiveDefinite:
                    degenerate += 1
                    log.append({"rep": rep, "covered": None, "stat": None})
                    continue
                cov = bool(quad <= scale)
                hits += cov
                log.append({"rep": rep, "covered": cov, "stat": quad})
            else:
                sigma = np.sqrt((dev * dev).sum(axis=0) / (sections - 1))
                half = np.sqrt(alpha_used / sections) * sigma
                frac = _marginal_fraction(pooled, x_star, half)
                hits += frac
                log.append({"rep": rep, "covered": frac, "stat": float(half.mean())})
    else:
        if mth.startswith("bmi"):
            m_n = bmi_batch_count(cfg.T)
            alloc_r = cfg.alloc.r if cfg.alloc.kind in ("ibs", "dbs") else 2.0 / 3.0
            plan = make_plan(cfg.T, m_n, Allocation(kind="ibs", r=alloc_r))
        else:
            plan = make_plan(cfg.T, cfg.m, cfg.alloc)
        m = plan.m
        gens = [derive_stream(cfg.base_seed, rep).gen for rep in range(R)]
        xi, xbar = _run_chains(
            cfg.model, x_star, cfg.schedule, cfg.burn_in, cfg.T, plan.boundaries, gens
        )
        if mth == "bm_joint":
            sq = estimate_alpha(
                spec_from_plan(plan, d), cfg.delta, cfg.cal_reps, cfg.cal_seed,
                cache=cache, threads=threads,
            )
            alpha_used = sq.alpha_hat
            scale = d * (m - 1) / (m * (m - d)) * alpha_used
        elif mth == "bm_marginal":
            sq = estimate_alpha(
                LimitDrawSpec(1, m, tuple(plan.weights)), cfg.delta, cfg.cal_reps,
                cfg.cal_seed, cache=cache, threads=threads,
            )
            alpha_used = sq.alpha_hat
        else:
            z = ndtri(1.0 - cfg.delta / 2.0)
            z_joint = ndtri(1.0 - cfg.delta / (2.0 * d))
        hits, degenerate, log = 0.0, 0, []
        for rep in range(R):
            dev = xi[:, rep, :] - xbar[rep][None, :]
            if mth == "bm_joint":
                S = SymMatrix(dev.T @ dev / (m - 1))
                try:
                    quad = quad_form_inv(S, xbar[rep] - x_star)
                except NotPositiveDefinite:
                    degenerate += 1
                    log.append({"rep": rep, "covered": None, "stat": None})
                    continue
                cov = bool(quad <= scale)
                hits += cov
                log.append({"rep": rep, "covered": cov, "stat": quad})
            else:
                sigma = np.sqrt((dev * dev).sum(axis=0) / (m - 1))
                if mth == "bm_marginal":
                    half = np.sqrt(alpha_used / m) * sigma
                    frac = _marginal_fraction(xbar[rep], x_star, half)
                    hits += frac
                    log.append(
                        {"rep": rep, "covered": frac, "stat": float(half.mean())}
                    )
                elif mth == "bmi_marginal":
                    half = z * sigma / math.sqrt(m)
                    frac = _marginal_fraction(xbar[rep], x_star, half)
                    hits += frac
                    log.append(
                        {"rep": rep, "covered": frac, "stat": float(half.mean())}
                    )
                else:  # bmi_joint
                    half = z_joint * sigma / math.sqrt(m)
                    cov = bool(np.all(np.abs(xbar[rep] - x_star) <= half))
                    hits += cov
                    log.append({"rep": rep, "covered": cov, "stat": float(half.mean())})

    if degenerate > 0.01 * R:
        raise ExcessDegeneracy(
            f"{degenerate} of {R} replications degenerate (limit is 1%)"
        )
    effective = R - degenerate
    coverage = hits / effective if effective > 0 else float("nan")
    half_width = (
        1.96 * math.sqrt(coverage * (1.0 - coverage) / effective)
        if effective > 0
        else float("nan")
    )
    return CoverageReport(
        config=cfg,
        hits=hits,
        degenerate=degenerate,
        coverage=coverage,
        half_width=half_width,
        alpha_used=alpha_used,
        replication_log=log,
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class VolumeRow:
    d: int
    m: int
    allocation: str
    delta: float
    reps: int
    det_reps: int
    base_seed: int
    factor: VolumeFactor
    alpha: ScalingQuantile


def run_volume_study(
    d: int,
    m_list,
    allocation: Allocation,
    delta: float,
    reps: int,
    base_seed: int,
    det_reps: Optional[int] = None,
    cache: Optional[QuantileCache] = None,
    threads: int = 1,
) -> list:
    """Volume factor v_d(m, w) across batch counts, with standard errors."""
    rows = []
    det_n = det_reps if det_reps is not None else reps
    for m in m_list:
        if m <= d:
            raise ValueError(f"volume study needs m > d, got m={m}, d={d}")
        w = ideal_weights(m, allocation)
        sq = estimate_alpha(
            LimitDrawSpec(d, m, tuple(w)), delta, reps, base_seed,
            cache=cache, threads=threads,
        )
        vf = expected_volume_factor(
            d, m, w, sq, det_n, derive_stream(base_seed, 7_000_000 + m)
        )
        rows.append(
            VolumeRow(
                d=d, m=m, allocation=allocation.kind, delta=delta, reps=reps,
                det_reps=det_n, base_seed=base_seed, factor=vf, alpha=sq,
            )
        )
    return rows


def run_det_study(
    d: int,
    m: int,
    T: int,
    model: str,
    R: int,
    base_seed: int,
    alloc: Optional[Allocation] = None,
    schedule: Optional[StepSchedule] = None,
    burn_in: int = 0,
) -> np.ndarray:
    """R determinants of T * S_m(T); rank deficiency shows up as exact zeros.

    This study deliberately allows m <= d: with fewer batches than
    dimensions the covariance has rank at most m - 1 and the determinant
    collapses, which is the phenomenon being measured.
    """
    plan = make_plan(T, m, alloc or Allocation(kind="ibs"))
    sched = schedule or StepSchedule()
    x_star = linspace_params(d).x_star
    gens = [derive_stream(base_seed, rep).gen for rep in range(R)]
    xi, xbar = _run_chains(model, x_star, sched, burn_in, T, plan.boundaries, gens)
    dets = np.empty(R)
    for rep in range(R):
        dev = xi[:, rep, :] - xbar[rep][None, :]
        S_scaled = SymMatrix(float(T) * (dev.T @ dev / (m - 1)))
        dets[rep] = det_sqrt(S_scaled) ** 2
    return dets


@dataclass
class FailedCell:
    method: str
    error: str


def run_comparison(
    model: str,
    d: int,
    T: int,
    m: int,
    alloc: Allocation,
    delta: float,
    replications: int,
    base_seed: int,
    schedule: Optional[StepSchedule] = None,
    burn_in: int = 0,
    cal_reps: int = DEFAULT_CAL_REPS,
    cache: Optional[QuantileCache] = None,
    threads: int = 1,
) -> list:
    """All methods on one problem at an identical iteration budget.

    Returns one CoverageReport per method; a cell that raises a domain
    error is replaced by a FailedCell record and the run continues.
    """
    out = []
    for method in METHODS:
        try:
            cfg = CoverageConfig(
                model=model, d=d, T=T, method=method, m=m, alloc=alloc,
                delta=delta, replications=replications, base_seed=base_seed,
                schedule=schedule or StepSchedule(), burn_in=burn_in,
                cal_reps=cal_reps,
            )
            out.append(run_coverage(cfg, cache=cache, threads=threads))
        except (SgdciError, ValueError) as e:
            out.append(FailedCell(method=method, error=f"{type(e).__name__}: {e}"))
    return out


_COVERAGE_COLUMNS = [
    "model", "d", "T", "method", "m", "alloc", "alloc_r", "a", "r",
    "burn_in", "delta", "replications", "base_seed", "cal_reps", "cal_seed",
    "status", "coverage", "half_width", "hits", "degenerate", "alpha",
    "error", "wall_time",
]


def write_coverage_csv(reports, path) -> None:
    """One row per cell, full configuration echoed into every row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COVERAGE_COLUMNS)
        for rep in reports:
            if isinstance(rep, FailedCell):
                row = [""] * len(_COVERAGE_COLUMNS)
                row[_COVERAGE_COLUMNS.index("method")] = rep.method
                row[_COVERAGE_COLUMNS.index("status")] = "failed"
                row[_COVERAGE_COLUMNS.index("error")] = rep.error
                writer.writerow(row)
                continue
            c = rep.config
            writer.writerow(
                [
                    c.model, c.d, c.T, c.method, c.m, c.alloc.kind,
                    c.alloc.r if c.alloc.kind in ("ibs", "dbs") else "",
                    c.schedule.a, c.schedule.r, c.burn_in, c.delta,
                    c.replications, c.base_seed, c.cal_reps, c.cal_seed,
                    "ok", f"{rep.coverage:.6f}", f"{rep.half_width:.6f}",
                    rep.hits, rep.degenerate,
                    "" if rep.alpha_used is None else f"{rep.alpha_used:.8g}",
                    "", f"{rep.wall_time:.3f}",
                ]
            )


def write_volume_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "d", "m", "allocation", "delta", "reps", "det_reps", "base_seed",
                "v", "se", "alpha", "alpha_ci_low", "alpha_ci_high",
                "e_det_sqrt", "se_det_sqrt",
            ]
        )
        for r in rows:
            writer.writerow(
                [
                    r.d, r.m, r.allocation, r.delta, r.reps, r.det_reps,
                    r.base_seed, f"{r.factor.estimate:.8g}",
                    f"{r.factor.std_error:.8g}", f"{r.alpha.alpha_hat:.8g}",
                    f"{r.alpha.ci_low:.8g}", f"{r.alpha.ci_high:.8g}",
                    f"{r.factor.e_det_sqrt:.8g}", f"{r.factor.se_det_sqrt:.8g}",
                ]
            )


def write_det_csv(dets, path, *, model: str, d: int, m: int, T: int,
                  base_seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "d", "m", "T", "base_seed", "rep", "det_scaled"])
        for rep, val in enumerate(dets):
            writer.writerow([model, d, m, T, base_seed, rep, f"{val:.10g}"])
