"""Synthetic data models and gradient oracles.

Two families: least squares with Gaussian noise, and logistic regression
with labels in {-1, +1}. Covariates are standard normal in both. Each
oracle consumes exactly d + 1 standard normal variates per step (d for the
covariate vector, one for the response channel); the logistic label turns
its normal variate into a uniform through the normal CDF. Keeping the
per-step noise budget fixed lets a replication-vectorized driver draw the
same stream in blocks and reproduce a serial run draw for draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .errors import ExhaustedData, LabelDomainError, ParseError
from .sgd import GradientOracle


@dataclass(frozen=True)
class TrueParams:
    x_star: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.x_star, dtype=float)
        if not np.all(np.isfinite(xs)):
            raise ValueError("true parameters must be finite")
        object.__setattr__(self, "x_star", xs)

    @property
    def d(self) -> int:
        return self.x_star.shape[0]


def linspace_params(d: int) -> TrueParams:
    """d coordinates linearly spaced over [0, 1]; the midpoint when d = 1."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if d == 1:
        return TrueParams(np.array([0.5]))
    return TrueParams(np.linspace(0.0, 1.0, d))


def linear_gradient(x: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Gradient of (b - x^T a)^2 at x."""
    return -2.0 * (b - x @ a) * a


def logistic_gradient(x: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Gradient of log(1 + exp(-b x^T a)) at x."""
    return -b * expit(-b * (x @ a)) * a


def linear_oracle(params: TrueParams) -> GradientOracle:
    """Draws a ~ N(0, I_d), b = x*^T a + eps with eps ~ N(0, 1)."""
    xs = params.x_star
    d = params.d

    def next_gradient(x, stream):
        n = stream.gen.standard_normal(d + 1)
        a = n[:d]
        b = xs @ a + n[d]
        return linear_gradient(x, a, b)

    return GradientOracle(dim=d, next_gradient=next_gradient)


def logistic_oracle(params: TrueParams) -> GradientOracle:
    """Draws a ~ N(0, I_d); b = +1 with probability (1 + exp(-x*^T a))^{-1}."""
    xs = params.x_star
    d = params.d

    def next_gradient(x, stream):
        n = stream.gen.standard_normal(d + 1)
        a = n[:d]
        u = ndtr(n[d])
        b = 1.0 if u < expit(xs @ a) else -1.0
        return logistic_gradient(x, a, b)

    return GradientOracle(dim=d, next_gradient=next_gradient)


@dataclass(frozen=True)
class Sample:
    a: np.ndarray
    b: float


def _replay_oracle(samples, model_kind: str) -> GradientOracle:
    d = samples[0].a.shape[0]
    grad = linear_gradient if model_kind == "linear" else logistic_gradient
    state = {"i": 0}

    def next_gradient(x, stream):
        i = state["i"]
        if i >= len(samples):
            raise ExhaustedData(
                f"data provides {len(samples)} rows; the run requested more"
            )
        state["i"] = i + 1
        s = samples[i]
        return grad(x, s.a, s.b)

    return GradientOracle(dim=d, next_gradient=next_gradient)


def ingest_csv(path, model_kind: str):
    """Read a header + numeric rows file into samples and a replay oracle.

    The header must be a_1,...,a_d,b. Each row becomes one SGD step, in file
    order. Logistic responses must be -1 or +1. Returns (samples, oracle);
    the oracle raises ExhaustedData when asked for more rows than the file
    holds.
    """
    if model_kind not in ("linear", "logistic"):
        raise ValueError(f"model_kind must be 'linear' or 'logistic', got {model_kind!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"a_{k}" for k in range(1, d + 1)] + ["b"]
        if d < 1 or header != expected:
            raise ParseError(
                f"{path}: header must be a_1,...,a_d,b; got {','.join(header)}"
            )
        samples = []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != d + 1:
                raise ParseError(
                    f"{path}: row {row_num} has {len(row)} fields, expected {d + 1}"
                )
            vals = np.empty(d + 1)
            for col, cell in enumerate(row):
                try:
                    vals[col] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_num}, column {col + 1}: "
                        f"could not parse {cell!r} as a number"
                    ) from None
            b = float(vals[d])
            if model_kind == "logistic" and b not in (-1.0, 1.0):
                raise LabelDomainError(
                    f"{path}: row {row_num}: logistic response must be -1 or +1, got {b}"
                )
            samples.append(Sample(a=vals[:d].copy(), b=b))
    if not samples:
        raise ParseError(f"{path}: no data rows")
    return samples, _replay_oracle(samples, model_kind)
