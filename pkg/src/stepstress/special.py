"""Normal and chi-square distribution functions.

The regularized incomplete gamma function uses the usual series /
continued-fraction split; quantiles are polished by root finding.
"""

import math

from scipy.optimize import brentq

from .errors import DomainError

_EPS = 1e-16
_TINY = 1e-300
_MAXIT = 10_000


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAXIT):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma ``Q(a, x)``."""
    if a <= 0 or x < 0:
        raise DomainError(f"gamma_q needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_survival(x: float, df: int) -> float:
    """Upper tail probability ``P(X > x)`` for ``X ~ chi2(df)``."""
    if df < 1 or x < 0 or not math.isfinite(x):
        raise DomainError(f"chi2_survival needs df >= 1 and finite x >= 0, got x={x}, df={df}")
    return gamma_q(df / 2.0, x / 2.0)


def chi2_quantile(alpha: float, df: int) -> float:
    """Upper ``alpha`` quantile of ``chi2(df)``: the ``x`` with survival ``alpha``."""
    if df < 1 or not 0 < alpha < 1:
        raise DomainError(f"chi2_quantile needs df >= 1 and 0 < alpha < 1, got alpha={alpha}, df={df}")
    hi = max(1.0, 2.0 * df)
    while chi2_survival(hi, df) > alpha:
        hi *= 2.0
    return brentq(lambda x: chi2_survival(x, df) - alpha, 0.0, hi, xtol=1e-12, rtol=1e-14)


def norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# rational approximation to the normal quantile (P. J. Acklam)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def norm_ppf(p: float) -> float:
    """Standard normal quantile, rational start refined by Halley steps."""
    if not 0 < p < 1:
        raise DomainError(f"norm_ppf needs 0 < p < 1, got {p}")
    if p > 0.5:
        # 1 - p is exact here, while the lower-tail residual below is not
        return -norm_ppf(1.0 - p)
    z = _acklam(p)
    for _ in range(2):
        err = norm_cdf(z) - p
        u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
        z -= u / (1.0 + 0.5 * z * u)
    return z


def z_upper(alpha: float) -> float:
    """Upper ``alpha`` quantile of the standard normal; ``z_upper(0.5) == 0``."""
    if alpha == 0.5:
        return 0.0
    return -norm_ppf(alpha)
