"""Latent-space plausibility: hypersphere regularizers and annulus regions.

Everything here assumes a standard Gaussian prior over an ``n_z``-dimensional
latent space, so the norm of a latent code follows a chi distribution with
``n_z`` degrees of freedom and annulus masses reduce to regularized incomplete
gamma functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

GAMMA_TOL = 1e-14
GAMMA_MAX_ITER = 100_000
_TINY = 1e-300


def chi_mean(n_z):
    """Mean norm of a standard Gaussian vector in ``n_z`` dimensions.

    Evaluated as a ratio of gamma functions in log space; direct gamma values
    overflow long before ``n_z`` gets large.
    """
    if int(n_z) != n_z or n_z < 1:
        raise InputError("n_z must be a positive integer")
    return math.sqrt(2.0) * math.exp(math.lgamma((n_z + 1) / 2.0) - math.lgamma(n_z / 2.0))


def _gamma_prefactor(s, x):
    return math.exp(-x + s * math.log(x) - math.lgamma(s))


def _series_p(s, x):
    term = 1.0 / s
    total = term
    ap = s
    for _ in range(GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * GAMMA_TOL:
            return total * _gamma_prefactor(s, x)
    raise NumericError(f"incomplete gamma series did not converge for s={s}, x={x}")


def _continued_fraction_q(s, x):
    # modified Lentz evaluation
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAX_ITER):
        an = -i * (i - s)
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
        if abs(delta - 1.0) < GAMMA_TOL:
            return h * _gamma_prefactor(s, x)
    raise NumericError(f"incomplete gamma fraction did not converge for s={s}, x={x}")


def _check_gamma_args(s, x):
    if not (s > 0) or not math.isfinite(s):
        raise InputError(f"incomplete gamma needs s > 0, got {s}")
    if not (x >= 0):
        raise InputError(f"incomplete gamma needs x >= 0, got {x}")


def reg_gamma_P(s, x):
    """Regularized lower incomplete gamma function P(s, x)."""
    _check_gamma_args(s, x)
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return _series_p(s, x)
    return 1.0 - _continued_fraction_q(s, x)


def reg_gamma_Q(s, x):
    """Regularized upper incomplete gamma function Q(s, x) = 1 - P(s, x)."""
    _check_gamma_args(s, x)
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return 1.0 - _series_p(s, x)
    return _continued_fraction_q(s, x)


@dataclass(frozen=True)
class AnnulusRegion:
    """Latent codes whose norm lies in ``[a, b]``."""

    a: float
    b: float
    n_z: int

    def __post_init__(self):
        if not (0 <= self.a <= self.b):
            raise InputError(f"annulus needs 0 <= a <= b, got a={self.a}, b={self.b}")
        if int(self.n_z) != self.n_z or self.n_z < 1:
            raise InputError("n_z must be a positive integer")

    @classmethod
    def band(cls, n_z, kappa):
        """Thickened sphere of half-width ``kappa`` around the chi mean."""
        c = chi_mean(n_z)
        return cls(max(0.0, c - kappa), c + kappa, n_z)


def prior_mass(region):
    s = region.n_z / 2.0
    return reg_gamma_P(s, region.b**2 / 2.0) - reg_gamma_P(s, region.a**2 / 2.0)


def empirical_mass(latents, region):
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or len(latents) == 0:
        raise InputError("latents must be a nonempty 2-D array")
    norms = np.linalg.norm(latents, axis=1)
    return float(np.mean((norms >= region.a) & (norms <= region.b)))


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "hypersphere"
    beta: float = 0.0
    c: float | None = None

    def __post_init__(self):
        if self.kind not in ("hypersphere", "loglik", "none"):
            raise InputError(f"unknown regularizer kind {self.kind!r}")
        if self.beta < 0:
            raise InputError("regularizer weight beta must be >= 0")
        if self.kind == "hypersphere" and (self.c is None or self.c <= 0):
            raise InputError("hypersphere regularizer needs a positive radius c")

    @classmethod
    def hypersphere(cls, beta, n_z):
        return cls("hypersphere", beta, chi_mean(n_z))


def omega(z, spec):
    """Value and gradient of the latent plausibility penalty at ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if spec.kind == "none" or spec.beta == 0:
        return 0.0, np.zeros_like(z)
    if spec.kind == "loglik":
        return float(spec.beta * z @ z), 2.0 * spec.beta * z
    r = float(np.linalg.norm(z))
    value = spec.beta * (r - spec.c) ** 2
    if r == 0.0:
        # singular point; gradient set to 0 by convention
        return value, np.zeros_like(z)
    return value, 2.0 * spec.beta * (r - spec.c) * z / r


def _log_ball_volume_coeff(n_z):
    return 0.5 * n_z * math.log(math.pi) - math.lgamma(n_z / 2.0 + 1.0)


def annulus_volume(a, b, n_z, eta=1.0):
    """``eta`` times the Lebesgue volume of the annulus, via logs.

    ``a`` and ``b`` may be broadcastable arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    log_c = math.log(eta) + _log_ball_volume_coeff(n_z)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_a, log_b = np.log(a), np.log(b)
        vol = np.where(
            b > a, np.exp(log_c + n_z * log_b) * -np.expm1(n_z * (log_a - log_b)), 0.0
        )
    if not np.all(np.isfinite(vol)):
        raise NumericError("annulus volume overflows float64")
    return vol if vol.ndim else float(vol)


def _inner_terms(n_z, a):
    """Expected squared distance contributed by codes inside radius ``a``."""
    r = chi_mean(n_z)
    x = a * a / 2.0
    return (
        a * a * reg_gamma_P(n_z / 2.0, x)
        - 2.0 * r * a * reg_gamma_P((n_z + 1) / 2.0, x)
        + n_z * reg_gamma_P(n_z / 2.0 + 1.0, x)
    )


def _outer_terms(n_z, b):
    """Expected squared distance contributed by codes outside radius ``b``."""
    r = chi_mean(n_z)
    x = b * b / 2.0
    return (
        b * b * reg_gamma_Q(n_z / 2.0, x)
        - 2.0 * r * b * reg_gamma_Q((n_z + 1) / 2.0, x)
        + n_z * reg_gamma_Q(n_z / 2.0 + 1.0, x)
    )


def expected_distance(region):
    """Expected squared distance from a prior sample to the annulus."""
    return _inner_terms(region.n_z, region.a) + _outer_terms(region.n_z, region.b)


def region_objective(region, eta):
    """Expected squared distance to the annulus plus ``eta`` times its volume."""
    if not eta > 0:
        raise InputError("eta must be positive")
    return expected_distance(region) + annulus_volume(region.a, region.b, region.n_z, eta)


def verify_optimal_region(n_z, eta, grid_points=1000, radius_max=10.0):
    """Grid search of the region objective over ``0 <= a <= b <= radius_max``.

    Returns ``(a_best, b_best, objective)``; ties go to the lexicographically
    smallest ``(a, b)``.
    """
    if grid_points < 100:
        raise InputError("grid search needs at least 100 points per axis")
    if not eta > 0:
        raise InputError("eta must be positive")
    grid = np.linspace(0.0, radius_max, int(grid_points))
    inner = np.array([_inner_terms(n_z, a) for a in grid])
    outer = np.array([_outer_terms(n_z, b) for b in grid])
    vol = annulus_volume(grid[:, None], grid[None, :], n_z, eta)
    total = inner[:, None] + outer[None, :] + vol
    total[np.tril_indices(len(grid), k=-1)] = np.inf
    i, j = np.unravel_index(np.argmin(total), total.shape)
    return float(grid[i]), float(grid[j]), float(total[i, j])


TABLE1_KAPPAS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)


def mass_table(n_z, kappas=TABLE1_KAPPAS, latents=None):
    """Prior (and optionally empirical) percentage of codes in each band."""
    rows = []
    for kappa in kappas:
        region = AnnulusRegion.band(n_z, kappa)
        row = {"kappa": kappa, "prior_pct": 100.0 * prior_mass(region)}
        if latents is not None:
            row["empirical_pct"] = 100.0 * empirical_mass(latents, region)
        rows.append(row)
    return rows
