"""Ratio K_{nu+1}(x) / K_nu(x) of modified Bessel functions of the second kind.

The orders that show up in the two-layer NN estimator are ``(n1 - p)/2``,
easily in the hundreds, where K_nu itself overflows binary64.  The ratio is
computed without ever forming K_nu:

* split ``nu = mu + n`` with ``|mu| <= 1/2``;
* get ``K_{mu+1}/K_mu`` from Steed's continued fraction (x >= 2) or from
  exponentially scaled values at small order (x < 2);
* recur upward in ratio form, ``r_{k} = 2 (mu + k) / x + 1 / r_{k-1}``,
  which is the stable direction for K.
"""

from __future__ import annotations

import math

from scipy import special

from .model import DomainError

EPS = 1e-16
MAXIT = 100_000
MAX_ORDER = 1e6


def _cf2_ratio(mu: float, x: float) -> float:
    """K_{mu+1}(x)/K_mu(x) for |mu| <= 1/2, x >= 2 (Steed/Temme CF2)."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1, q2 = 0.0, 1.0
    a1 = 0.25 - mu * mu
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels) < EPS * abs(s) and abs(delh) < EPS * abs(h):
            break
    else:
        raise ArithmeticError(f"CF2 did not converge for mu={mu}, x={x}")
    h *= a1
    return (mu + x + 0.5 - h) / x


def _small_order_ratio(m1: float, m0: float, x: float) -> float:
    """K_m1(x)/K_m0(x) for orders in [0, 1.5] via scaled values."""
    # kve returns nan for subnormal orders; K is even in the order, so the
    # order-zero value is exact to O(m^2)
    m1 = 0.0 if m1 < 1e-150 else m1
    m0 = 0.0 if m0 < 1e-150 else m0
    k1 = special.kve(m1, x)
    k0 = special.kve(m0, x)
    if not (math.isfinite(k1) and math.isfinite(k0)) or k0 == 0:
        raise ArithmeticError(f"K ratio out of range at x={x}")
    return k1 / k0


def _ratio_nonneg(nu: float, x: float) -> float:
    n = math.floor(nu + 0.5)
    mu = nu - n
    if x >= 2.0:
        r = _cf2_ratio(mu, x)
    else:
        r = _small_order_ratio(abs(mu + 1.0), abs(mu), x)
    for k in range(1, n + 1):
        r = 2.0 * (mu + k) / x + 1.0 / r
    return r


def bessel_k_ratio(nu: float, q: float) -> float:
    """K_{nu+1}(q) / K_nu(q) for real ``nu`` and ``q > 0``."""
    nu = float(nu)
    q = float(q)
    if not q > 0 or not math.isfinite(q):
        raise DomainError(f"argument must be positive and finite, got {q}")
    if not abs(nu) <= MAX_ORDER:
        raise DomainError(f"|order| must be <= {MAX_ORDER:g}, got {nu}")
    if nu >= 0:
        return _ratio_nonneg(nu, q)
    if nu <= -1:
        # K_{-v} = K_v: K_{nu+1}/K_nu = K_{m}/K_{m+1} with m = -nu - 1 >= 0
        return 1.0 / _ratio_nonneg(-nu - 1.0, q)
    # -1 < nu < 0: K_{1+nu} / K_{-nu}, both orders in (0, 1)
    if q >= 2.0:
        # K_{1+nu}/K_{-nu} = K_{mu+1}/K_mu * K_{mu}/K_{-nu} with mu = nu, K_nu = K_{-nu}
        return _cf2_ratio(nu, q) if nu >= -0.5 else 1.0 / _cf2_ratio(-nu - 1.0, q)
    return _small_order_ratio(1.0 + nu, -nu, q)
