"""Learning curves for the LR, RF and NN models.

LR and RF curves are closed forms.  The NN curve needs the non-negative
root ``z`` of

    z**(l+1) = sigma2 (1 - alpha) * prod_l (a_l z + b_l),
    a_l = (gamma_l - alpha) / gamma_l,  b_l = alpha (1 - alpha + eta^2) / gamma_l,

restricted to roots where every factor ``a_l z + b_l`` is positive (which
also makes every layer overlap ``C_l`` positive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    Architecture,
    DomainError,
    ModelKind,
    PhaseKind,
    Scenario,
    TheoryResult,
    classify_phase,
    divergent_result,
)

RESIDUAL_RTOL = 1e-12
BISECT_RTOL = 1e-14
QUADRATIC_RTOL = 1e-10
SCAN_POINTS = 512


class NoPhysicalRoot(ArithmeticError):
    """No root of the NN polynomial passes the physicality filters."""


class MultipleRoots(ArithmeticError):
    """More than one root passes the physicality filters."""

    def __init__(self, candidates: Sequence[float]):
        self.candidates = tuple(candidates)
        super().__init__(f"multiple admissible roots: {self.candidates}")


def epsilon_lr(s: Scenario) -> TheoryResult:
    phase = classify_phase(ModelKind.LR, s)
    if phase.is_boundary:
        return divergent_result(phase)
    a, e2 = s.alpha, s.eta2
    if a < 1:
        eps = (1.0 + s.sigma2) * (1.0 - a) + a * e2 / (1.0 - a)
    else:
        eps = e2 / (a - 1.0)
    return TheoryResult(epsilon=eps, phase=phase)


def epsilon_rf(arch: Architecture, s: Scenario) -> TheoryResult:
    phase = classify_phase(ModelKind.RF, s, arch)
    if phase.is_boundary:
        return divergent_result(phase)
    a, e2 = s.alpha, s.eta2
    if phase.kind is PhaseKind.UNDER_SAMPLED:
        # sorted so the result is bit-identical under width permutations
        widths = sorted(arch.widths)
        if any(g == a for g in widths):
            # interior pole of the formula, invisible behind the gamma_min one
            return divergent_result(phase)
        prod = math.prod((g - a) / g for g in widths)
        poles = math.fsum(a / (g - a) for g in widths)
        eps = (1.0 - a) * (1.0 + s.sigma2 * prod + poles) + (a / (1.0 - a) + poles) * e2
    elif phase.kind is PhaseKind.BOTTLENECKED:
        g = arch.gamma_min()
        eps = a * (1.0 - g) / (a - g) + g / (a - g) * e2
    else:
        eps = e2 / (a - 1.0)
    return TheoryResult(epsilon=eps, phase=phase)


@dataclass(frozen=True)
class RootCondition:
    a: tuple[float, ...]
    b: tuple[float, ...]
    prefactor: float

    @property
    def depth(self) -> int:
        return len(self.a)

    def factors(self, z: float) -> list[float]:
        return [ai * z + bi for ai, bi in zip(self.a, self.b)]

    def rhs(self, z: float) -> float:
        return self.prefactor * math.prod(self.factors(z))

    def residual(self, z: float) -> float:
        return abs(z ** (self.depth + 1) - self.rhs(z))

    def overlaps(self, z: float) -> list[float]:
        """Layer overlaps ``C_l = z^-l prod_{l' >= l} (a_l' z + b_l')``."""
        f = self.factors(z)
        return [math.prod(f[l:]) / z ** (l + 1) for l in range(self.depth)]


def build_root_condition(arch: Architecture, s: Scenario) -> RootCondition:
    if s.alpha >= 1:
        raise DomainError("the NN root condition only governs alpha < 1")
    a0, scale = s.alpha, s.noise_scale()
    widths = sorted(arch.widths)
    return RootCondition(
        a=tuple((g - a0) / g for g in widths),
        b=tuple(a0 * scale / g for g in widths),
        prefactor=s.sigma2 * (1.0 - a0),
    )


@dataclass(frozen=True)
class RootDiagnostics:
    residual: float
    candidates: tuple[float, ...]
    admissible: tuple[bool, ...]
    method: str
    quadratic_gap: float | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)


def _log_gap(rc: RootCondition, z: float) -> float:
    """log RHS - log LHS; strictly decreasing in z on the admissible interval."""
    return (
        math.log(rc.prefactor)
        + math.fsum(math.log(ai * z + bi) for ai, bi in zip(rc.a, rc.b))
        - (rc.depth + 1) * math.log(z)
    )


def _sign_f(rc: RootCondition, z: float) -> int:
    """Sign of z^(l+1) - RHS without overflow."""
    fac = rc.factors(z)
    if any(f == 0 for f in fac):
        return 1
    neg = sum(f < 0 for f in fac) % 2
    if neg:
        return 1
    gap = math.log(rc.prefactor) + math.fsum(math.log(abs(f)) for f in fac) - (
        rc.depth + 1
    ) * math.log(z)
    return (gap < 0) - (gap > 0)


def _bisect(sign, lo: float, hi: float, s_lo: int) -> float:
    # geometric bisection while the bracket spans decades, then arithmetic
    for _ in range(2000):
        if hi - lo <= BISECT_RTOL * hi * 0.5:
            break
        mid = math.sqrt(lo * hi) if hi > 4 * lo else 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s_mid = sign(mid)
        if s_mid == 0:
            return mid
        if s_mid == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _is_admissible(rc: RootCondition, z: float) -> bool:
    if not z > 0:
        return False
    if any(f <= 0 for f in rc.factors(z)):
        return False
    return all(c > 0 for c in rc.overlaps(z))


def _admissible_root(rc: RootCondition) -> float:
    z_hi = max(1.0, rc.prefactor * math.prod(max(ai, 0.0) + bi for ai, bi in zip(rc.a, rc.b)))
    limits = [bi / -ai for ai, bi in zip(rc.a, rc.b) if ai < 0]
    if limits:
        z_hi = min(z_hi * (1 + 1e-12), min(limits))
    else:
        z_hi *= 1 + 1e-12
    z_lo = 0.5 * z_hi
    while _log_gap(rc, z_lo) <= 0:
        z_lo *= 1e-3
        if z_lo < 1e-300:
            raise NoPhysicalRoot("could not bracket the admissible root from below")

    def sign(z: float) -> int:
        g = _log_gap(rc, z)
        return (g < 0) - (g > 0)

    return _bisect(sign, z_lo, z_hi, -1)


def _scan_roots(rc: RootCondition) -> list[float]:
    """All positive sign changes of f, located on a log grid plus breakpoints."""
    z_all = max(1.0, rc.prefactor * math.prod(abs(ai) + bi for ai, bi in zip(rc.a, rc.b)))
    z_all *= 1 + 1e-9
    grid = set(np.geomspace(z_all * 1e-14, z_all, SCAN_POINTS).tolist())
    for ai, bi in zip(rc.a, rc.b):
        if ai < 0:
            zb = bi / -ai
            if zb < z_all:
                grid.update((zb * (1 - 1e-12), zb * (1 + 1e-12)))
    pts = sorted(grid)
    roots = []
    signs = [_sign_f(rc, z) for z in pts]
    for (z0, s0), (z1, s1) in zip(zip(pts, signs), zip(pts[1:], signs[1:])):
        if s0 == 0:
            roots.append(z0)
        elif s0 != s1 and s1 != 0:
            roots.append(_bisect(lambda z: _sign_f(rc, z), z0, z1, s0))
    return roots


def _dedupe(values: Sequence[float], rtol: float = 1e-9) -> list[float]:
    out: list[float] = []
    for v in sorted(values):
        if not out or abs(v - out[-1]) > rtol * max(abs(v), 1e-300):
            out.append(v)
    return out


def quadratic_root(rc: RootCondition) -> float:
    """Positive root of ``z^2 = P (a z + b)`` without cancellation."""
    if rc.depth != 1:
        raise DomainError("closed form only exists for a single hidden layer")
    P, a, b = rc.prefactor, rc.a[0], rc.b[0]
    pa = P * a
    disc = math.sqrt(pa * pa + 4.0 * P * b)
    if pa >= 0:
        return 0.5 * (pa + disc)
    return 2.0 * P * b / (disc - pa)


def solve_z(rc: RootCondition) -> tuple[float, RootDiagnostics]:
    if rc.prefactor <= 0 or any(bi <= 0 for bi in rc.b):
        raise DomainError("root condition needs a positive prefactor and b_l > 0")
    admissible_root = _admissible_root(rc)
    others = [
        z for z in _scan_roots(rc)
        if abs(z - admissible_root) > 1e-9 * admissible_root
    ]
    candidates = _dedupe(others + [admissible_root])
    ok = [_is_admissible(rc, z) for z in candidates]
    physical = [z for z, good in zip(candidates, ok) if good]
    if not physical:
        raise NoPhysicalRoot(f"no admissible root among {candidates}")
    if len(physical) > 1:
        raise MultipleRoots(physical)
    z = physical[0]
    method = "bisection"
    qgap = None
    if rc.depth == 1:
        zq = quadratic_root(rc)
        qgap = abs(zq - z) / max(abs(zq), 1e-300)
        if qgap > QUADRATIC_RTOL:
            raise ArithmeticError(
                f"quadratic cross-check failed: closed form {zq}, bisection {z}"
            )
        z, method = zq, "quadratic"
    res = rc.residual(z)
    flags = ()
    if res > RESIDUAL_RTOL * max(1.0, abs(z) ** (rc.depth + 1)):
        flags = ("residual_bound",)
    diag = RootDiagnostics(
        residual=res,
        candidates=tuple(candidates),
        admissible=tuple(ok),
        method=method,
        quadratic_gap=qgap,
        flags=flags,
    )
    return z, diag


def epsilon_nn(arch: Architecture, s: Scenario) -> TheoryResult:
    phase = classify_phase(ModelKind.NN, s, arch)
    if phase.is_boundary:
        return divergent_result(phase)
    lr = epsilon_lr(s).epsilon
    if phase.kind is PhaseKind.OVER_SAMPLED:
        return TheoryResult(epsilon=lr, phase=phase)
    rc = build_root_condition(arch, s)
    z, diag = solve_z(rc)
    return TheoryResult(
        epsilon=lr + z - s.sigma2 * (1.0 - s.alpha),
        phase=phase,
        z=z,
        residual=diag.residual,
        flags=diag.flags,
    )


def epsilon(kind: "ModelKind | str", s: Scenario, arch: Architecture | None = None) -> TheoryResult:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.LR:
        return epsilon_lr(s)
    if arch is None:
        raise DomainError(f"{kind.value} model needs an architecture")
    if kind is ModelKind.RF:
        return epsilon_rf(arch, s)
    return epsilon_nn(arch, s)
