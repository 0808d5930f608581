"""Student's t-tests with an explicit degenerate-case contract.

The t CDF is computed from scratch via the regularized incomplete beta
function (Lentz continued fraction), so an external statistics library can
serve as an independent cross-check in the tests rather than as the
implementation. Zero-variance inputs yield explicit status markers instead
of NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_CF_EPS = 1e-15
_CF_FPMIN = 1e-300
_CF_MAX_ITER = 300


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, by Lentz's method."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction stalled at a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a} b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # choose the side on which the continued fraction converges fast
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t with df degrees of freedom.

    p = I_x(df/2, 1/2) with x = df/(df + t^2). For small t the complement
    form I_y(1/2, df/2) with y = t^2/(df + t^2) is used so neither argument
    is formed by cancellation.
    """
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    tt = t * t
    if tt < df:
        y = tt / (df + tt)
        return 1.0 - regularized_incomplete_beta(0.5, df / 2.0, y)
    x = df / (df + tt)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


OK = "ok"
DEGENERATE = "degenerate"  # no variance, no mean difference: the test carries no information
ZERO_VARIANCE = "zero_variance"  # no variance but a mean difference: p pinned to 0


@dataclass(frozen=True)
class TestOutcome:
    """Result of one t-test; statistic/p_value are None only when degenerate."""

    statistic: float | None
    p_value: float | None
    df: int
    status: str

    @property
    def ok(self) -> bool:
        return self.status == OK


def unpaired_test(a: Sequence[float], b: Sequence[float]) -> TestOutcome:
    """Equal-variance two-sample Student's t-test, two-sided.

    t = (mean(a) - mean(b)) / sqrt(pooled * (1/n1 + 1/n2)), df = n1 + n2 - 2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise ValueError(f"need at least 2 samples per group, got {n1} and {n2}")
    df = n1 + n2 - 2
    mean_diff = float(a.mean() - b.mean())
    pooled = (float(((a - a.mean()) ** 2).sum()) + float(((b - b.mean()) ** 2).sum())) / df
    if pooled == 0.0:
        if mean_diff == 0.0:
            return TestOutcome(statistic=None, p_value=None, df=df, status=DEGENERATE)
        return TestOutcome(
            statistic=math.copysign(math.inf, mean_diff),
            p_value=0.0,
            df=df,
            status=ZERO_VARIANCE,
        )
    t = mean_diff / math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    return TestOutcome(statistic=t, p_value=t_two_sided_p(t, df), df=df, status=OK)


def paired_test(
    a: Sequence[float],
    b: Sequence[float],
    a_ids: Sequence[str] | None = None,
    b_ids: Sequence[str] | None = None,
) -> TestOutcome:
    """Paired Student's t-test on differences d = b - a, two-sided.

    When ids are given, b is aligned to a's id order first; a mismatched id
    set is a pairing error. One-sample t on d against mean 0, df = n - 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if (a_ids is None) != (b_ids is None):
        raise ValueError("give ids for both samples or neither")
    if a_ids is not None:
        if len(a_ids) != a.size or len(b_ids) != b.size:
            raise ValueError("id count does not match sample count")
        if set(a_ids) != set(b_ids) or len(set(a_ids)) != len(a_ids):
            raise ValueError(
                f"cannot pair samples: ids {sorted(set(a_ids) ^ set(b_ids))!r} unmatched"
            )
        order = [list(b_ids).index(i) for i in a_ids]
        b = b[order]
    if a.size != b.size:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    d = b - a
    df = n - 1
    mean_d = float(d.mean())
    var_d = float(((d - d.mean()) ** 2).sum()) / df
    if var_d == 0.0:
        if mean_d == 0.0:
            return TestOutcome(statistic=None, p_value=None, df=df, status=DEGENERATE)
        return TestOutcome(
            statistic=math.copysign(math.inf, mean_d),
            p_value=0.0,
            df=df,
            status=ZERO_VARIANCE,
        )
    t = mean_d / math.sqrt(var_d / n)
    return TestOutcome(statistic=t, p_value=t_two_sided_p(t, df), df=df, status=OK)
