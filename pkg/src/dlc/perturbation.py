"""Large-width expansions of the RF and NN learning curves.

Expansions are in ``lam = alpha / gamma`` around the linear-regression
curve, in units of the noise scale ``1 - alpha + eta^2``.  Unequal widths
are only supported at first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import Architecture, DomainError, Scenario, sigma_tilde2
from .theory import epsilon_lr, epsilon_nn, epsilon_rf

MAX_DEPTH = 64


@dataclass(frozen=True)
class SeriesExpansion:
    base: float
    coefficients: tuple[float, ...]
    lam: float
    scale: float

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def correction(self) -> float:
        # Horner in lam; the series has no constant term
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * self.lam + c
        return self.scale * acc * self.lam

    def value(self) -> float:
        return self.base + self.correction()


def binomials(n: int, kmax: int) -> list[float]:
    """C(n, j) for j = 0..kmax, by multiplicative recurrence; zero past n."""
    if not 0 <= n <= MAX_DEPTH:
        raise DomainError(f"depth must lie in [0, {MAX_DEPTH}], got {n}")
    out = [1.0]
    c = 1.0
    for j in range(1, kmax + 1):
        c = c * (n - j + 1) / j if j <= n else 0.0
        out.append(c)
    return out


def _first_order_coeff(ell: float, st2: float) -> float:
    # shared by both models so their first-order terms agree bit for bit
    return ell * (1.0 - st2)


def _check_under(s: Scenario) -> None:
    if s.alpha >= 1:
        raise DomainError(f"expansion needs alpha < 1, got {s.alpha}")


def _check_equal(gamma: float, ell: int, s: Scenario) -> None:
    _check_under(s)
    if not gamma > s.alpha:
        raise DomainError(f"expansion needs alpha < gamma, got alpha={s.alpha}, gamma={gamma}")
    if not 1 <= ell <= MAX_DEPTH:
        raise DomainError(f"depth must lie in [1, {MAX_DEPTH}], got {ell}")


def rf_first_order(arch: Architecture, s: Scenario) -> float:
    """``[(1-alpha)(1-sigma2) + eta^2] * sum_l alpha/gamma_l``, identical for NN."""
    _check_under(s)
    lam_sum = math.fsum(s.alpha / g for g in sorted(arch.widths))
    return s.noise_scale() * _first_order_coeff(1.0, sigma_tilde2(s)) * lam_sum


nn_first_order = rf_first_order


def rf_series(gamma: float, ell: int, s: Scenario, order: int) -> SeriesExpansion:
    """Equal-width RF series, ``c_j = (-1)^j st2 C(ell, j) + ell``."""
    _check_equal(gamma, ell, s)
    if order < 1:
        raise DomainError("order must be >= 1")
    st2 = sigma_tilde2(s)
    binom = binomials(ell, order)
    coeffs = [_first_order_coeff(ell, st2)]
    for j in range(2, order + 1):
        coeffs.append((-1) ** j * st2 * binom[j] + ell)
    return SeriesExpansion(
        base=epsilon_lr(s).epsilon,
        coefficients=tuple(coeffs[:order]),
        lam=s.alpha / gamma,
        scale=s.noise_scale(),
    )


def nn_second_order(gamma: float, ell: int, s: Scenario) -> SeriesExpansion:
    _check_equal(gamma, ell, s)
    st2 = sigma_tilde2(s)
    c1 = _first_order_coeff(ell, st2)
    c2 = ell * (ell - 1) * st2 / 2.0 - ell * (ell + 1) / (2.0 * st2) + ell
    return SeriesExpansion(
        base=epsilon_lr(s).epsilon,
        coefficients=(c1, c2),
        lam=s.alpha / gamma,
        scale=s.noise_scale(),
    )


def rf_nn_gap_leading(gamma: float, ell: int, s: Scenario) -> float:
    """Leading RF-minus-NN gap, ``scale * ell(ell+1)/(2 st2) * lam^2``."""
    _check_equal(gamma, ell, s)
    lam = s.alpha / gamma
    return s.noise_scale() * ell * (ell + 1) / (2.0 * sigma_tilde2(s)) * lam * lam


def gap_exact_two_layer(gamma1: float, s: Scenario) -> float:
    """``epsilon_rf - epsilon_nn`` for one hidden layer of width ``gamma1``."""
    _check_equal(gamma1, 1, s)
    arch = Architecture([gamma1])
    return epsilon_rf(arch, s).epsilon - epsilon_nn(arch, s).epsilon


def gap_psi_form(gamma1: float, s: Scenario) -> float:
    """Two-layer gap as ``scale * [lam/psi - 2 lam / (psi + sqrt(psi^2 + 4 lam/st2))]``.

    Algebraically equal to ``1/psi - 1 + st2 (psi - sqrt(psi^2 + 4 lam/st2)) / 2``
    but free of cancellation, so it is non-negative in floating point.
    """
    _check_equal(gamma1, 1, s)
    lam = s.alpha / gamma1
    psi = 1.0 - lam
    st2 = sigma_tilde2(s)
    root = math.sqrt(psi * psi + 4.0 * lam / st2)
    return s.noise_scale() * (lam / psi - 2.0 * lam / (psi + root))
