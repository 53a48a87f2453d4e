"""Comparison methods: sectioning and BMI-style batch-means intervals.

Sectioning replaces the batches of one long run by m fully independent runs
of equal length. Independence makes the even-split limiting law exact, so
the scaling parameter is the F quantile itself rather than a Monte Carlo
estimate.

The BMI-style method ties the batch count to the sample size, m_n =
ceil(T^{1/4}), targets marginal intervals with standard normal quantiles
(its validity argument is asymptotic in m), and declares joint coverage
through a Bonferroni split of delta across the d coordinates. It is labeled
"BMI-style" in reports because the exact interval construction of the
original method is out of scope; the allocation reuses this package's
increasing batch-size planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .batching import Allocation, accumulate, make_plan
from .calibration import ScalingQuantile, f_quantile, weights_key
from .errors import DegenerateCovariance, NotPositiveDefinite
from .inference import ConfidenceRegion, MarginalIntervals
from .linalg import SymMatrix, cholesky
from .sgd import GradientOracle, SgdRunConfig, StepSchedule, run_sgd
from .streams import RandomStream, derive_stream

DEFAULT_SECTIONS = 30


@dataclass
class SectioningResult:
    section_means: np.ndarray  # (m, d)
    pooled_mean: np.ndarray
    cov: SymMatrix
    region: Optional[ConfidenceRegion]
    intervals: MarginalIntervals
    m: int
    section_T: int
    delta: float


class _MeanObserver:
    def __init__(self, d: int):
        self.sum = np.zeros(d)
        self.count = 0

    def __call__(self, x):
        self.sum += x
        self.count += 1

    @property
    def mean(self):
        return self.sum / self.count


def _exact_quantile(alpha: float, d: int, m: int, w, delta: float) -> ScalingQuantile:
    """Wrap an exact (non Monte Carlo) quantile; reps = 0 marks exactness."""
    return ScalingQuantile(
        alpha_hat=alpha,
        ci_low=alpha,
        ci_high=alpha,
        delta=delta,
        reps=0,
        key=(d, m, weights_key(w), float(delta), 0, -1),
    )


def sectioning_infer(
    oracle_factory: Callable[[int], GradientOracle],
    m: int,
    total_T: int,
    schedule: StepSchedule,
    delta: float,
    base_seed: int,
    burn_in: int = 0,
    x0=None,
    lineage_prefix: tuple = (),
) -> SectioningResult:
    """Independent replicated runs treated like equally weighted batches.

    Section j consumes the stream (base_seed, *lineage_prefix, j), so
    sections are disjoint by construction and the whole result is
    reproducible from the seed. The joint scaling parameter is the exact
    F(d, m-d) quantile; the marginal one is F(1, m-1).
    """
    if m < 2:
        raise ValueError(f"sectioning needs m >= 2, got {m}")
    section_T = total_T // m
    if section_T < 1:
        raise ValueError(f"total_T={total_T} leaves empty sections at m={m}")
    d = oracle_factory(0).dim
    means = np.empty((m, d))
    for j in range(m):
        oracle = oracle_factory(j)
        obs = _MeanObserver(d)
        cfg = SgdRunConfig(T=section_T, burn_in=burn_in, x0=x0, schedule=schedule)
        run_sgd(oracle, cfg, derive_stream(base_seed, *lineage_prefix, j), obs)
        means[j] = obs.mean
    pooled = means.mean(axis=0)
    dev = means - pooled[None, :]
    S = SymMatrix(dev.T @ dev / (m - 1))
    w_even = np.full(m, 1.0 / m)

    region = None
    if m > d:
        try:
            cholesky(S)
        except NotPositiveDefinite as e:
            raise DegenerateCovariance(str(e)) from e
        alpha_joint = f_quantile(d, m - d, 1.0 - delta)
        region = ConfidenceRegion(
            center=pooled.copy(),
            shape=S,
            scale=d * (m - 1) / (m * (m - d)) * alpha_joint,
            m=m,
            T=total_T,
            delta=delta,
            alpha=_exact_quantile(alpha_joint, d, m, w_even, delta),
        )
    alpha_1 = f_quantile(1, m - 1, 1.0 - delta)
    sigma = np.sqrt((dev * dev).sum(axis=0) / (m - 1))
    half = np.sqrt(alpha_1 / m) * sigma
    intervals = MarginalIntervals(
        lo=pooled - half,
        hi=pooled + half,
        sigma=sigma,
        center=pooled.copy(),
        alpha_1d=_exact_quantile(alpha_1, 1, m, w_even, delta),
    )
    return SectioningResult(
        section_means=means,
        pooled_mean=pooled,
        cov=S,
        region=region,
        intervals=intervals,
        m=m,
        section_T=section_T,
        delta=delta,
    )


@dataclass
class BmiResult:
    m_n: int
    center: np.ndarray
    sigma: np.ndarray
    marginal_lo: np.ndarray
    marginal_hi: np.ndarray
    joint_lo: np.ndarray
    joint_hi: np.ndarray
    delta: float


def bmi_batch_count(T: int) -> int:
    return math.ceil(T ** 0.25)


def bmi_from_stats(xbar: np.ndarray, sigma: np.ndarray, m_n: int, delta: float) -> BmiResult:
    """Normal-quantile intervals from batch-means statistics."""
    d = xbar.shape[0]
    z_marg = ndtri(1.0 - delta / 2.0)
    z_joint = ndtri(1.0 - delta / (2.0 * d))
    half_marg = z_marg * sigma / math.sqrt(m_n)
    half_joint = z_joint * sigma / math.sqrt(m_n)
    return BmiResult(
        m_n=m_n,
        center=xbar.copy(),
        sigma=sigma.copy(),
        marginal_lo=xbar - half_marg,
        marginal_hi=xbar + half_marg,
        joint_lo=xbar - half_joint,
        joint_hi=xbar + half_joint,
        delta=delta,
    )


def bmi_infer(
    oracle: GradientOracle,
    T: int,
    delta: float,
    stream: RandomStream,
    schedule: Optional[StepSchedule] = None,
    burn_in: int = 0,
    x0=None,
    alloc_r: float = 2.0 / 3.0,
) -> BmiResult:
    """Run averaged SGD with m_n = ceil(T^{1/4}) batches and build intervals.

    Marginal intervals use z at level delta; the joint declaration splits
    delta across coordinates (Bonferroni), i.e. uses z at delta / d.
    """
    if T < 16:
        raise ValueError(f"BMI-style inference needs T >= 16, got {T}")
    m_n = bmi_batch_count(T)
    plan = make_plan(T, m_n, Allocation(kind="ibs", r=alloc_r))
    acc = accumulate(plan, oracle.dim)
    cfg = SgdRunConfig(T=T, burn_in=burn_in, x0=x0, schedule=schedule or StepSchedule())
    run_sgd(oracle, cfg, stream, acc.feed)
    summary = acc.finalize()
    dev = summary.xi - summary.xbar[None, :]
    sigma = np.sqrt((dev * dev).sum(axis=0) / (m_n - 1))
    return bmi_from_stats(summary.xbar, sigma, m_n, delta)
