"""Correlation and significance tests.

Test statistics are computed here; scipy supplies only the Student-t
distribution tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _st

from cfpipe.errors import ConfigError, LengthMismatch, TooFewSamples, ZeroVariance


def pearson_with_p(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r and its two-sided p-value (t-distribution, n - 2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"x and y lengths differ: {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise TooFewSamples("need at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("input has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(_st.t.sf(abs(t), n - 2))
    return r, min(1.0, p)


@dataclass(frozen=True)
class SignificanceResult:
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    t_statistic: float
    p_value: float
    n_a: int
    n_b: int
    dof: float
    method: str

    @property
    def significant(self) -> bool:
        return self.p_value <= 0.05

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def one_tailed_t_test(
    baseline: Sequence[float], treatment: Sequence[float], method: str = "welch"
) -> SignificanceResult:
    """Test mean(treatment) > mean(baseline).

    ``method`` is ``welch`` (unequal variances, Welch-Satterthwaite dof),
    ``student`` (pooled variance) or ``paired`` (per-index differences).
    """
    a = np.asarray(baseline, dtype=np.float64)
    b = np.asarray(treatment, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise TooFewSamples("each sample needs at least 2 observations")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    na, nb = a.size, b.size

    if method == "paired":
        if na != nb:
            raise LengthMismatch("paired test needs equal-length samples")
        d = b - a
        vd = float(d.var(ddof=1))
        dof = na - 1.0
        num, se = float(d.mean()), math.sqrt(vd / na)
    elif method == "welch":
        qa, qb = va / na, vb / nb
        num, se = mb - ma, math.sqrt(qa + qb)
        dof = (qa + qb) ** 2 / (qa**2 / (na - 1) + qb**2 / (nb - 1)) if se > 0 else na + nb - 2.0
    elif method == "student":
        dof = na + nb - 2.0
        sp2 = ((na - 1) * va + (nb - 1) * vb) / dof
        num, se = mb - ma, math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    else:
        raise ConfigError(f"unknown t-test method {method!r}")

    if se == 0.0:
        if num == 0.0:
            t, p = 0.0, 0.5
        else:
            t = math.copysign(math.inf, num)
            p = 0.0 if num > 0 else 1.0
    else:
        t = num / se
        p = float(_st.t.sf(t, dof))
    return SignificanceResult(
        mean_a=ma, mean_b=mb, std_a=math.sqrt(va), std_b=math.sqrt(vb),
        t_statistic=float(t), p_value=p, n_a=na, n_b=nb, dof=float(dof), method=method,
    )
