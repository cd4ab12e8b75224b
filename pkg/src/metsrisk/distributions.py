"""Random-variate generators and log-densities for the model's distribution families.

All samplers take an :class:`~metsrisk.rng.RngStream`; densities are pure
functions of their arguments. The half-Cauchy auxiliary pair implements the
inverse-gamma scale-mixture used by the conjugate shrinkage updates:
``x^2 | a ~ InvGamma(1/2, 1/a)``, ``a ~ InvGamma(1/2, 1)`` marginalizes to a
standard half-Cauchy on ``x`` (a test obligation, not an assumption).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln, multigammaln

from .rng import RngStream

__all__ = [
    "SpdMatrix",
    "mvn_sample",
    "mvn_logpdf",
    "inverse_wishart_sample",
    "inverse_wishart_logpdf",
    "half_cauchy_sample",
    "half_cauchy_logpdf",
    "aux_pair_sample",
    "inverse_gamma_sample",
    "student_t_sample",
    "gamma_sample",
    "gamma_logpdf",
]

_LOG_2PI = math.log(2.0 * math.pi)


class SpdMatrix:
    """A symmetric positive-definite matrix with a cached Cholesky factor.

    Raises ``ValueError`` if the input is asymmetric beyond 1e-12 or not
    positive definite.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("matrix has non-finite entries")
        asym = np.max(np.abs(values - values.T)) if values.size else 0.0
        if asym > 1e-12 * max(1.0, np.max(np.abs(values))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        try:
            chol = cholesky(values, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("matrix is not positive definite") from exc
        if np.any(np.diag(chol) <= 0):
            raise ValueError("matrix is not positive definite")
        self.values = values
        self.cholesky = chol
        self.dimension = values.shape[0]

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SpdMatrix":
        return cls(scale * np.eye(dim))

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))

    def inverse(self) -> np.ndarray:
        return cho_solve((self.cholesky, True), np.eye(self.dimension))

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dimension})"


def _as_spd(cov) -> SpdMatrix:
    return cov if isinstance(cov, SpdMatrix) else SpdMatrix(np.asarray(cov, dtype=float))


def mvn_sample(mean: np.ndarray, cov, rng: RngStream) -> np.ndarray:
    """Draw from N(mean, cov)."""
    cov = _as_spd(cov)
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (cov.dimension,):
        raise ValueError(f"mean has shape {mean.shape}, cov dimension is {cov.dimension}")
    eps = rng.generator.standard_normal(cov.dimension)
    return mean + cov.cholesky @ eps


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov) -> float:
    cov = _as_spd(cov)
    d = cov.dimension
    resid = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    w = solve_triangular(cov.cholesky, resid, lower=True)
    return -0.5 * (d * _LOG_2PI + cov.log_det + float(w @ w))


def inverse_wishart_sample(nu: float, scale, rng: RngStream) -> SpdMatrix:
    """Draw from IW(nu, scale) via a Bartlett factor of the Wishart on the inverse scale.

    The mean of repeated draws converges to scale / (nu - dim - 1).
    """
    scale = _as_spd(scale)
    d = scale.dimension
    if nu <= d - 1:
        raise ValueError(f"degrees of freedom {nu} must exceed dim - 1 = {d - 1}")
    # W ~ Wishart(nu, scale^{-1}), returned draw is W^{-1}.
    inv_scale = scale.inverse()
    # enforce exact symmetry before the factorization
    inv_scale = 0.5 * (inv_scale + inv_scale.T)
    l_inv = cholesky(inv_scale, lower=True)
    a = np.zeros((d, d))
    g = rng.generator
    for i in range(d):
        a[i, i] = math.sqrt(g.chisquare(nu - i))
        for j in range(i):
            a[i, j] = g.standard_normal()
    m = l_inv @ a  # chol factor of W
    m_inv = solve_triangular(m, np.eye(d), lower=True)
    draw = m_inv.T @ m_inv
    return SpdMatrix(0.5 * (draw + draw.T))


def inverse_wishart_logpdf(x, nu: float, scale) -> float:
    x = _as_spd(x)
    scale = _as_spd(scale)
    d = x.dimension
    tr = float(np.trace(cho_solve((x.cholesky, True), scale.values)))
    return (
        0.5 * nu * scale.log_det
        - 0.5 * nu * d * math.log(2.0)
        - multigammaln(0.5 * nu, d)
        - 0.5 * (nu + d + 1) * x.log_det
        - 0.5 * tr
    )


def half_cauchy_sample(rng: RngStream, size=None):
    """Draw |C(0,1)| by inverting the CDF: x = tan(pi * u / 2)."""
    u = rng.generator.random(size)
    return np.tan(0.5 * math.pi * u)


def half_cauchy_logpdf(x: float) -> float:
    if x < 0:
        return -math.inf
    return math.log(2.0 / math.pi) - math.log1p(x * x)


def inverse_gamma_sample(shape: float, rate: float, rng: RngStream, size=None):
    """Draw from InvGamma(shape, rate) with density propto x^(-shape-1) exp(-rate/x)."""
    if shape <= 0 or np.any(np.asarray(rate) <= 0):
        raise ValueError("inverse-gamma parameters must be positive")
    return rate / rng.generator.standard_gamma(shape, size)


def aux_pair_sample(rng: RngStream, size=None):
    """Draw (scale^2, auxiliary) from the half-Cauchy scale-mixture representation.

    Marginally over the auxiliary, sqrt(scale^2) is standard half-Cauchy.
    """
    aux = inverse_gamma_sample(0.5, 1.0, rng, size)
    scale_sq = inverse_gamma_sample(0.5, 1.0 / aux, rng)
    return scale_sq, aux


def student_t_sample(df: float, rng: RngStream, size=None):
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return rng.generator.standard_t(df, size)


def gamma_sample(shape: float, rate: float, rng: RngStream, size=None):
    if shape <= 0 or rate <= 0:
        raise ValueError("gamma parameters must be positive")
    return rng.generator.standard_gamma(shape, size) / rate


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x
