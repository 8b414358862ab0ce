"""Correlation criteria and residual-variance significance testing.

Implements the five-criterion protocol: logistic-mapped PLCC for accuracy,
SRCC for monotonicity, size-weighted averages across datasets, and a
one-sided two-sample F-test on prediction residuals with a kurtosis-based
Gaussianity gate that flags (never suppresses) verdicts.

The F-distribution CDF is computed in-package via the regularized
incomplete beta function with a continued-fraction evaluation; scipy is
deliberately not used here so tests can hold it up as an independent
oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .sqb import LogisticParams, apply_logistic, fit_logistic

BETTER = "better"
WORSE = "worse"
INDISTINGUISHABLE = "indistinguishable"

KURTOSIS_GATE = (2.0, 4.0)


class StatsError(ValueError):
    pass


def _vec(x, min_len: int = 1) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or len(v) < min_len:
        raise StatsError(f"need a 1-D vector of length >= {min_len}")
    return v


def plcc_raw(x, y) -> float:
    """Sample Pearson linear correlation coefficient."""
    x, y = _vec(x, 3), _vec(y, 3)
    if len(x) != len(y):
        raise StatsError("length mismatch")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = float(np.sqrt(dx @ dx)), float(np.sqrt(dy @ dy))
    if sx == 0 or sy == 0:
        raise StatsError("constant input has no correlation")
    return float((dx @ dy) / (sx * sy))


def srcc(x, y) -> float:
    """Spearman rank-order correlation: Pearson over average-tie ranks."""
    x, y = _vec(x, 3), _vec(y, 3)
    if len(x) != len(y):
        raise StatsError("length mismatch")
    return plcc_raw(rankdata(x, method="average"), rankdata(y, method="average"))


def weighted_average(values, weights) -> float:
    values, weights = _vec(values), _vec(weights)
    if len(values) != len(weights):
        raise StatsError("length mismatch")
    if np.any(weights <= 0):
        raise StatsError("weights must be positive")
    return float(np.sum(values * weights) / np.sum(weights))


@dataclass(frozen=True)
class EvalResult:
    plcc: float
    srcc: float
    n: int
    params: LogisticParams


def plcc_mapped(objective, subjective) -> EvalResult:
    """PLCC after the logistic mapping step, plus SRCC (mapping-free)."""
    objective, subjective = _vec(objective, 3), _vec(subjective, 3)
    try:
        params = fit_logistic(objective, subjective)
    except Exception as exc:
        raise StatsError(f"logistic mapping failed: {exc}") from exc
    mapped = apply_logistic(params, objective)
    return EvalResult(
        plcc=plcc_raw(mapped, subjective),
        srcc=srcc(objective, subjective),
        n=len(objective),
        params=params,
    )


def residuals(objective, subjective, params: LogisticParams | None = None) -> np.ndarray:
    """subjective - logistic-mapped objective (fitting the map if not given)."""
    objective, subjective = _vec(objective, 3), _vec(subjective, 3)
    if params is None:
        params = fit_logistic(objective, subjective)
    return subjective - apply_logistic(params, objective)


def kurtosis(v) -> float:
    """Population (non-excess) kurtosis m4 / m2^2; Gaussian = 3."""
    v = _vec(v, 4)
    d = v - v.mean()
    m2 = float(np.mean(d**2))
    if m2 == 0:
        raise StatsError("constant input has no kurtosis")
    return float(np.mean(d**4) / m2**2)


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise StatsError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), relative error below 1e-10 over the tested domain."""
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    if x <= 0:
        return 0.0
    return regularized_incomplete_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_critical_lower(alpha: float, d1: float, d2: float) -> float:
    """Lower-tail critical value: the F with CDF(F; d1, d2) = alpha."""
    if not 0 < alpha < 1:
        raise StatsError("alpha must be in (0, 1)")
    lo, hi = 0.0, 1.0
    while f_cdf(hi, d1, d2) < alpha:
        hi *= 2.0
        if hi > 1e12:
            raise StatsError("critical value search diverged")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, d1, d2) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Verdict:
    """Outcome of the two-directional residual-variance comparison.

    ``value`` is from the first argument's perspective. ``gaussian_ok``
    reports the kurtosis gate (2..4) per side; it flags, never blocks.
    """

    value: str
    gaussian_ok: tuple[bool, bool]

    def flipped(self) -> "Verdict":
        flip = {BETTER: WORSE, WORSE: BETTER, INDISTINGUISHABLE: INDISTINGUISHABLE}
        return Verdict(flip[self.value], (self.gaussian_ok[1], self.gaussian_ok[0]))


def _gate(res: np.ndarray) -> bool:
    try:
        k = kurtosis(res)
    except StatsError:
        return False  # too short or constant: Gaussianity cannot be assumed
    return KURTOSIS_GATE[0] <= k <= KURTOSIS_GATE[1]


def variance_f_test(res_a, res_b, alpha: float = 0.05) -> Verdict:
    """One-sided (left-tailed) two-sample F-test, run in both directions.

    A is better when var(A)/var(B) falls below the lower-tail critical
    value at ``alpha`` with (nA-1, nB-1) degrees of freedom; the reversed
    test decides "worse"; otherwise the methods are indistinguishable.
    """
    a, b = _vec(res_a, 2), _vec(res_b, 2)
    var_a, var_b = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    if var_a == 0 or var_b == 0:
        raise StatsError("zero residual variance on one side")
    gate = (_gate(a), _gate(b))
    p_a_better = f_cdf(var_a / var_b, len(a) - 1, len(b) - 1)
    p_b_better = f_cdf(var_b / var_a, len(b) - 1, len(a) - 1)
    if p_a_better < alpha:
        return Verdict(BETTER, gate)
    if p_b_better < alpha:
        return Verdict(WORSE, gate)
    return Verdict(INDISTINGUISHABLE, gate)


VERDICT_CODES = {BETTER: "1", INDISTINGUISHABLE: "-", WORSE: "0"}

ResidualTable = Mapping[tuple[str, str], Sequence[float]]


def significance_matrix(
    residual_table: ResidualTable,
    baseline: str,
    alpha: float = 0.05,
) -> dict[tuple[str, str], Verdict]:
    """Pairwise verdicts of ``baseline`` against every other method per dataset.

    Keys of ``residual_table`` are (method, dataset). Missing cells for a
    (method, dataset) seen elsewhere are an error, not a silent skip.
    Encode verdicts with VERDICT_CODES for the 1/-/0 table layout.
    """
    methods = sorted({m for m, _ in residual_table})
    datasets = sorted({d for _, d in residual_table})
    if baseline not in methods:
        raise StatsError(f"baseline method {baseline!r} has no residuals")
    missing = [(m, d) for m in methods for d in datasets if (m, d) not in residual_table]
    if missing:
        raise StatsError(f"missing residual cells: {missing}")
    out: dict[tuple[str, str], Verdict] = {}
    for dataset in datasets:
        base = residual_table[(baseline, dataset)]
        for method in methods:
            if method == baseline:
                out[(method, dataset)] = Verdict(INDISTINGUISHABLE, (_gate(_vec(base, 2)),) * 2)
            else:
                out[(method, dataset)] = variance_f_test(base, residual_table[(method, dataset)], alpha)
    return out


def gaussian_gate_rate(residual_table: ResidualTable) -> float:
    """Fraction of residual vectors passing the kurtosis gate."""
    if not residual_table:
        raise StatsError("empty residual table")
    flags = [_gate(_vec(res, 4)) for res in residual_table.values()]
    return float(np.mean(flags))
