"""Optimal width and depth for RF models; width monotonicity for NN models."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Architecture, DomainError, Scenario, sigma_tilde2
from .theory import epsilon_lr, epsilon_rf

# log(st2)/log(gamma/(gamma-alpha)) this close to an integer counts as a tie
TIE_RTOL = 1e-9
UNIT_RTOL = 1e-12


class Regime(enum.Enum):
    WIDER_ALWAYS_BETTER = "WiderAlwaysBetter"
    WIDTH_IRRELEVANT = "WidthIrrelevant"
    FINITE_OPTIMUM = "FiniteOptimum"
    NARROWER_ALWAYS_BETTER = "NarrowerAlwaysBetter"
    SHALLOWER_ALWAYS_BETTER = "ShallowerAlwaysBetter"


@dataclass(frozen=True)
class WidthRegimeReport:
    regime: Regime
    optimum: Optional[tuple[float, ...]]
    sigma_tilde2: float


def _under(s: Scenario) -> float:
    if s.alpha >= 1:
        raise DomainError(f"needs alpha < 1, got {s.alpha}")
    return sigma_tilde2(s)


def rf_optimal_width(ell: int, s: Scenario) -> WidthRegimeReport:
    st2 = _under(s)
    if ell < 1:
        raise DomainError("depth must be >= 1")
    if st2 <= 1:
        return WidthRegimeReport(Regime.WIDER_ALWAYS_BETTER, None, st2)
    # st2^(1/(l+1)) - 1 via expm1 to keep precision near st2 = 1
    log_t = math.log(st2) / (ell + 1)
    gamma_star = s.alpha * math.exp(log_t) / math.expm1(log_t)
    return WidthRegimeReport(Regime.FINITE_OPTIMUM, (gamma_star,), st2)


def depth_ratio(gamma: float, s: Scenario) -> float:
    """``log(st2) / log(gamma / (gamma - alpha))``."""
    return math.log(sigma_tilde2(s)) / -math.log1p(-s.alpha / gamma)


def rf_optimal_depth(gamma: float, s: Scenario) -> WidthRegimeReport:
    st2 = _under(s)
    if not gamma > s.alpha:
        raise DomainError(f"needs alpha < gamma, got alpha={s.alpha}, gamma={gamma}")
    if st2 <= 1:
        return WidthRegimeReport(Regime.SHALLOWER_ALWAYS_BETTER, (0,), st2)
    ratio = depth_ratio(gamma, s)
    j = round(ratio)
    if j >= 1 and abs(ratio - j) <= TIE_RTOL * max(1.0, ratio):
        return WidthRegimeReport(Regime.FINITE_OPTIMUM, (j, j - 1), st2)
    return WidthRegimeReport(Regime.FINITE_OPTIMUM, (math.floor(ratio),), st2)


def rf_equal_width_epsilon(gamma: float, ell: float, s: Scenario) -> float:
    """Equal-width RF curve, continued to real depth ``ell >= 0``."""
    st2 = _under(s)
    psi = (gamma - s.alpha) / gamma
    return epsilon_lr(s).epsilon + s.noise_scale() * (
        st2 * (psi**ell - 1.0) + ell * (1.0 / psi - 1.0)
    )


def nn_width_monotonicity(s: Scenario) -> WidthRegimeReport:
    """Sign of d(epsilon_nn)/d(gamma) from the rescaled prior variance."""
    st2 = _under(s)
    if abs(st2 - 1.0) <= UNIT_RTOL:
        regime = Regime.WIDTH_IRRELEVANT
    elif st2 < 1:
        regime = Regime.WIDER_ALWAYS_BETTER
    else:
        regime = Regime.NARROWER_ALWAYS_BETTER
    return WidthRegimeReport(regime, None, st2)


@dataclass(frozen=True)
class StationarityReport:
    gamma_star: float
    gradient: np.ndarray
    gradient_scale: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    analytic_eigenvalues: np.ndarray
    multiplicities: tuple[int, int]
    max_rel_error: float
    ok: bool
    message: str


def _eps_rf(widths, s: Scenario) -> float:
    return epsilon_rf(Architecture(widths), s).epsilon


def fd_gradient(widths: np.ndarray, s: Scenario, h: float) -> np.ndarray:
    g = np.empty(len(widths))
    for i in range(len(widths)):
        e = np.zeros(len(widths))
        e[i] = h
        g[i] = (_eps_rf(widths + e, s) - _eps_rf(widths - e, s)) / (2 * h)
    return g


def fd_hessian(widths: np.ndarray, s: Scenario, h: float) -> np.ndarray:
    n = len(widths)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = h
            v = (
                _eps_rf(widths + ei + ej, s)
                - _eps_rf(widths + ei - ej, s)
                - _eps_rf(widths - ei + ej, s)
                + _eps_rf(widths - ei - ej, s)
            ) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def hessian_eigenvalue(ell: int, s: Scenario, gamma_star: float) -> float:
    """Unit eigenvalue of the analytic Hessian at the symmetric optimum."""
    st2 = sigma_tilde2(s)
    return s.alpha**2 * s.noise_scale() * st2 ** (3.0 / (ell + 1)) / gamma_star**4


def verify_stationarity(
    ell: int, s: Scenario, grad_rtol: float = 1e-6, eig_rtol: float = 1e-3
) -> StationarityReport:
    """Finite-difference check that the symmetric optimum is a strict minimum."""
    report = rf_optimal_width(ell, s)
    if report.optimum is None:
        raise DomainError("stationary point only exists for sigma_tilde > 1")
    gs = report.optimum[0]
    h = max(1e-5, 1e-5 * gs)
    x = np.full(ell, gs)
    grad = fd_gradient(x, s, h)
    H = fd_hessian(x, s, h)
    eig = np.sort(np.linalg.eigvalsh(H))
    lam = hessian_eigenvalue(ell, s, gs)
    analytic = np.sort(np.array([lam] * (ell - 1) + [lam * (ell + 1)]))
    rel = np.abs(eig - analytic) / np.abs(analytic)
    scale = s.alpha * s.noise_scale() / gs**2
    n_unit = int(np.sum(np.abs(eig - lam) <= eig_rtol * lam))
    n_top = int(np.sum(np.abs(eig - lam * (ell + 1)) <= eig_rtol * lam * (ell + 1)))
    problems = []
    if np.max(np.abs(grad)) > grad_rtol * scale:
        problems.append(f"gradient {np.max(np.abs(grad)):.3e} exceeds {grad_rtol * scale:.3e}")
    if np.any(eig <= 0):
        problems.append(f"non-positive eigenvalue {eig.min():.6e}")
    if rel.max() > eig_rtol:
        worst = int(np.argmax(rel))
        problems.append(f"eigenvalue {eig[worst]:.6e} vs analytic {analytic[worst]:.6e}")
    if ell > 1 and (n_unit, n_top) != (ell - 1, 1):
        problems.append(f"multiplicities {(n_unit, n_top)} != {(ell - 1, 1)}")
    return StationarityReport(
        gamma_star=gs,
        gradient=grad,
        gradient_scale=scale,
        hessian=H,
        eigenvalues=eig,
        analytic_eigenvalues=analytic,
        multiplicities=(n_unit, n_top),
        max_rel_error=float(rel.max()),
        ok=not problems,
        message="; ".join(problems) or "ok",
    )
