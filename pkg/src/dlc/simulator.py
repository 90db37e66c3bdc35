"""Monte Carlo estimates of the zero-temperature generalization error.

Each replicate draws a dataset ``y = X w*/sqrt(d) + eta xi`` (and, for RF,
the feature matrices) and evaluates the exact fixed-data posterior error
``eps_b + eps_v``: the squared distance of the posterior mean from the
teacher plus the trace of the posterior covariance, both per dimension.

Randomness is keyed by ``(seed, replicate, stream)`` so any replicate can be
regenerated alone, and RF/NN runs with the same seed share ``X, w*, xi``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from .bessel import bessel_k_ratio
from .model import DomainError, Scenario

DEFAULT_D = 100
DEFAULT_REPS = 10
MAX_CONDITION = 1e12

STREAM_X, STREAM_TEACHER, STREAM_NOISE, STREAM_FEATURES = 0, 1, 2, 3


class IllConditioned(ArithmeticError):
    pass


class RegimeAmbiguous(DomainError):
    pass


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    se: float
    n: int
    d: int
    p: int
    widths: tuple[int, ...]
    seed: int
    regime: str = ""
    bias: np.ndarray = field(default=None, repr=False, compare=False)
    variance: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def samples(self) -> np.ndarray:
        return self.bias + self.variance


@dataclass(frozen=True)
class DisorderSample:
    X: np.ndarray
    w_star: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    seed: int
    rep: int


def stream(seed: int, rep: int, tag: int, sub: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one (seed, replicate, stream)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep), int(tag), int(sub)))
    return np.random.Generator(np.random.Philox(ss))


def draw_disorder(
    d: int, p: int, s: Scenario, seed: int, rep: int, teacher_seed: Optional[int] = None
) -> DisorderSample:
    X = stream(seed, rep, STREAM_X).standard_normal((p, d))
    t_seed = seed if teacher_seed is None else teacher_seed
    w = stream(t_seed, rep, STREAM_TEACHER).standard_normal(d)
    w *= math.sqrt(d) / np.linalg.norm(w)
    xi = stream(seed, rep, STREAM_NOISE).standard_normal(p)
    y = X @ w / math.sqrt(d) + s.eta * xi
    return DisorderSample(X=X, w_star=w, xi=xi, y=y, seed=seed, rep=rep)


def _spd_factor(A: np.ndarray):
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise IllConditioned(f"matrix of size {A.shape[0]} is not positive definite") from exc
    anorm = np.linalg.norm(A, 1)
    rcond, info = linalg.lapack.dpocon(c[0], anorm, uplo="L")
    if info != 0 or rcond * MAX_CONDITION < 1.0:
        raise IllConditioned(f"condition number ~{1.0 / max(rcond, 1e-300):.3e} exceeds {MAX_CONDITION:.0e}")
    return c


def _spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return linalg.cho_solve(_spd_factor(A), B, check_finite=False)


def rf_regime(d: int, p: int, widths: Sequence[int]) -> str:
    """Which closed form applies: 'full', 'woodbury' or 'bottleneck'."""
    nmin = min(widths) if widths else d
    edge = min(d, nmin)
    if p == edge:
        raise RegimeAmbiguous(f"p={p} sits on the regime boundary min(d, n_min)={edge}")
    if p < edge:
        return "woodbury"
    if nmin >= d:
        return "full"
    return "bottleneck"


def _check_sizes(d: int, p: int, widths: Sequence[int], n_reps: int) -> None:
    if d < 1 or p < 1 or any(n < 1 for n in widths):
        raise DomainError("d, p and every width must be >= 1")
    if n_reps < 2:
        raise DomainError("need at least two replicates for a standard error")


def _feature_gram(widths: Sequence[int], d: int, seed: int, rep: int) -> np.ndarray:
    """U_1 ... U_l U_l^T ... U_1^T without materialising a wide last layer."""
    dims = [d, *widths]
    ell = len(widths)
    rows, df = dims[ell - 1], dims[ell]
    g = stream(seed, rep, STREAM_FEATURES, ell)
    if df >= rows:
        # Bartlett draw of U_l U_l^T ~ Wishart(n_l, I)
        G = stats.wishart.rvs(df=df, scale=np.eye(rows), random_state=g)
        G = np.atleast_2d(G)
    else:
        U = g.standard_normal((rows, df))
        G = U @ U.T
    for l in range(ell - 1, 0, -1):
        U = stream(seed, rep, STREAM_FEATURES, l).standard_normal((dims[l - 1], dims[l]))
        G = U @ G @ U.T
    return G


def _feature_prefix(widths: Sequence[int], d: int, upto: int, seed: int, rep: int) -> np.ndarray:
    """Unnormalised U_1 ... U_upto (d x n_upto)."""
    dims = [d, *widths]
    A = None
    for l in range(1, upto + 1):
        U = stream(seed, rep, STREAM_FEATURES, l).standard_normal((dims[l - 1], dims[l]))
        A = U if A is None else A @ U
    return A


def _bias(mean_over_sqrt_d: np.ndarray, w_star: np.ndarray) -> float:
    r = mean_over_sqrt_d - w_star / math.sqrt(len(w_star))
    return float(r @ r)


def _min_norm_over(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(X^T X)^-1 X^T y for p > d."""
    return _spd_solve(X.T @ X, X.T @ y)


def _min_norm_under(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """X^T (X X^T)^-1 y for p < d, with (X X^T)^-1 y."""
    c = _spd_solve(X @ X.T, y)
    return X.T @ c, c


def _woodbury(M: np.ndarray, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    XM = X @ M
    K = XM @ X.T
    K = 0.5 * (K + K.T)
    fac = _spd_factor(K)
    c = linalg.cho_solve(fac, y, check_finite=False)
    eps_b = _bias(XM.T @ c, w)
    KiXM = linalg.cho_solve(fac, XM, check_finite=False)
    eps_v = float(np.trace(M) - np.sum(KiXM * XM))
    return eps_b, eps_v


def rf_replicate(
    widths: Sequence[int], d: int, p: int, s: Scenario, seed: int, rep: int,
    teacher_seed: Optional[int] = None,
) -> tuple[float, float]:
    """(eps_b, eps_v) for one draw of data and features."""
    regime = rf_regime(d, p, widths)
    ds = draw_disorder(d, p, s, seed, rep, teacher_seed)
    X, y, w = ds.X, ds.y, ds.w_star
    if regime == "full":
        return _bias(_min_norm_over(X, y), w), 0.0
    if regime == "woodbury":
        c2 = s.sigma2 / (d * math.prod(widths))
        M = c2 * _feature_gram(widths, d, seed, rep)
        return _woodbury(M, X, y, w)
    lmin = int(np.argmin(widths)) + 1
    A = _feature_prefix(widths, d, lmin, seed, rep)
    A *= math.sqrt(s.sigma2 / (d * math.prod(widths[:lmin])))
    XA = X @ A
    G = XA.T @ XA
    coef = _spd_solve(0.5 * (G + G.T), XA.T @ y)
    return _bias(A @ coef, w), 0.0


def lr_replicate(
    d: int, p: int, s: Scenario, seed: int, rep: int, teacher_seed: Optional[int] = None
) -> tuple[float, float]:
    if p == d:
        raise RegimeAmbiguous("p == d sits on the LR regime boundary")
    ds = draw_disorder(d, p, s, seed, rep, teacher_seed)
    if p > d:
        return _bias(_min_norm_over(ds.X, ds.y), ds.w_star), 0.0
    M = (s.sigma2 / d) * np.eye(d)
    return _woodbury(M, ds.X, ds.y, ds.w_star)


def nn_two_layer_replicate(
    n1: int, d: int, p: int, s: Scenario, seed: int, rep: int,
    teacher_seed: Optional[int] = None,
) -> tuple[float, float]:
    """(eps_b, eps_v) with the first layer integrated out exactly.

    eps_v = (1 - p/d) (sigma2/n1) q K_{nu+1}(q)/K_nu(q), nu = (n1 - p)/2,
    q^2 = (n1 d / sigma2) y^T (X X^T)^-1 y.
    """
    if p == d:
        raise RegimeAmbiguous("p == d sits on the NN regime boundary")
    ds = draw_disorder(d, p, s, seed, rep, teacher_seed)
    if p > d:
        return _bias(_min_norm_over(ds.X, ds.y), ds.w_star), 0.0
    mean, c = _min_norm_under(ds.X, ds.y)
    eps_b = _bias(mean, ds.w_star)
    q = math.sqrt(n1 * d / s.sigma2 * float(ds.y @ c))
    nu = 0.5 * (n1 - p)
    eps_v = (1.0 - p / d) * (s.sigma2 / n1) * q * bessel_k_ratio(nu, q)
    return eps_b, eps_v


def nn_perturbative_replicate(
    widths: Sequence[int], d: int, p: int, s: Scenario, seed: int, rep: int
) -> tuple[float, float]:
    """Fixed-data large-width NN error, first order in sum_l p/n_l (p < d)."""
    if not p < d:
        raise DomainError("the fixed-data perturbative form needs p < d")
    ds = draw_disorder(d, p, s, seed, rep)
    mean, c = _min_norm_under(ds.X, ds.y)
    eps_b = _bias(mean, ds.w_star)
    lam = sum(p / n for n in widths)
    eps_v = (1.0 - p / d) * (s.sigma2 + lam * (d / p * float(ds.y @ c) - s.sigma2))
    return eps_b, eps_v


def _threads() -> int:
    env = os.environ.get("DLC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run(
    fn: Callable[[int], tuple[float, float]], n_reps: int, workers: Optional[int]
) -> tuple[np.ndarray, np.ndarray]:
    workers = _threads() if workers is None else workers
    if workers > 1 and n_reps > 1:
        with ThreadPoolExecutor(max_workers=min(workers, n_reps)) as ex:
            out = list(ex.map(fn, range(n_reps)))
    else:
        out = [fn(r) for r in range(n_reps)]
    arr = np.array(out, dtype=float)
    return arr[:, 0], arr[:, 1]


def _estimate(bias, var, d, p, widths, seed, regime) -> SimEstimate:
    tot = bias + var
    n = len(tot)
    return SimEstimate(
        mean=float(np.mean(tot)),
        se=float(np.std(tot, ddof=1) / math.sqrt(n)),
        n=n, d=d, p=p, widths=tuple(int(w) for w in widths), seed=int(seed),
        regime=regime, bias=bias, variance=var,
    )


def simulate_rf_error(
    widths: Sequence[int], d: int, p: int, s: Scenario, n_reps: int = DEFAULT_REPS,
    seed: int = 0, teacher_seed: Optional[int] = None, workers: Optional[int] = None,
) -> SimEstimate:
    widths = [int(n) for n in widths]
    _check_sizes(d, p, widths, n_reps)
    regime = rf_regime(d, p, widths)
    bias, var = _run(
        lambda r: rf_replicate(widths, d, p, s, seed, r, teacher_seed), n_reps, workers
    )
    return _estimate(bias, var, d, p, widths, seed, regime)


def simulate_lr_error(
    d: int, p: int, s: Scenario, n_reps: int = DEFAULT_REPS, seed: int = 0,
    teacher_seed: Optional[int] = None, workers: Optional[int] = None,
) -> SimEstimate:
    _check_sizes(d, p, [], n_reps)
    bias, var = _run(lambda r: lr_replicate(d, p, s, seed, r, teacher_seed), n_reps, workers)
    return _estimate(bias, var, d, p, (), seed, "woodbury" if p < d else "full")


def simulate_nn_error_two_layer(
    n1: int, d: int, p: int, s: Scenario, n_reps: int = DEFAULT_REPS, seed: int = 0,
    teacher_seed: Optional[int] = None, workers: Optional[int] = None,
) -> SimEstimate:
    _check_sizes(d, p, [n1], n_reps)
    bias, var = _run(
        lambda r: nn_two_layer_replicate(n1, d, p, s, seed, r, teacher_seed), n_reps, workers
    )
    return _estimate(bias, var, d, p, (n1,), seed, "bessel" if p < d else "full")


def simulate_nn_perturbative(
    widths: Sequence[int], d: int, p: int, s: Scenario, n_reps: int = DEFAULT_REPS,
    seed: int = 0, workers: Optional[int] = None,
) -> SimEstimate:
    widths = [int(n) for n in widths]
    _check_sizes(d, p, widths, n_reps)
    bias, var = _run(
        lambda r: nn_perturbative_replicate(widths, d, p, s, seed, r), n_reps, workers
    )
    return _estimate(bias, var, d, p, widths, seed, "perturbative")


def inverse_wishart_trace(d: int, p: int, n_reps: int = DEFAULT_REPS, seed: int = 0) -> SimEstimate:
    """tr[(X X^T)^-1] over replicates; its expectation is p / (d - p - 1)."""
    if not p < d:
        raise DomainError("needs p < d")
    vals = []
    for r in range(n_reps):
        X = stream(seed, r, STREAM_X).standard_normal((p, d))
        fac = _spd_factor(X @ X.T)
        vals.append(float(np.trace(linalg.cho_solve(fac, np.eye(p), check_finite=False))))
    vals = np.array(vals)
    return _estimate(vals, np.zeros_like(vals), d, p, (), seed, "wishart")
