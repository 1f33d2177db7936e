"""Parametric density families used as sampling policies and as targets.

Everything is evaluated in log space. Points are always handled as 2-D
arrays of shape ``(n, d)``; a single point of shape ``(d,)`` is promoted.

Sampling is prefix-consistent: drawing ``n`` points in one call consumes the
generator exactly like ``n`` successive single-point calls, so stage-scale and
sample-scale AIS runs fed by the same generator see the same points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import special


class Family(str, enum.Enum):
    STUDENT_T = "student_t"
    GAUSSIAN = "gaussian"


class DensityError(ValueError):
    """Invalid density parameters or mismatched point dimension."""


def as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise DensityError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return pts


def _lower_matvec(chol: np.ndarray, z: np.ndarray) -> np.ndarray:
    # Row-wise L @ z written as elementwise column updates, so that the result
    # for one row never depends on how many rows are in the batch.
    d = chol.shape[0]
    out = np.zeros_like(z)
    for i in range(d):
        acc = np.zeros(z.shape[0])
        for k in range(i + 1):
            acc = acc + chol[i, k] * z[:, k]
        out[:, i] = acc
    return out


def _lower_solve(chol: np.ndarray, r: np.ndarray) -> np.ndarray:
    d = chol.shape[0]
    y = np.empty_like(r)
    for i in range(d):
        acc = r[:, i].copy()
        for k in range(i):
            acc = acc - chol[i, k] * y[:, k]
        y[:, i] = acc / chol[i, i]
    return y


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Location/scale parameters of a Student-t or Gaussian density.

    ``scale`` is the Student scale matrix, not its covariance; use
    :func:`covariance_of` to convert. ``dof`` is ignored for the Gaussian
    family.
    """

    family: Family
    location: np.ndarray
    scale: np.ndarray
    dof: float = 3.0
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        family = Family(self.family)
        loc = np.array(self.location, dtype=float).reshape(-1)
        scale = np.array(self.scale, dtype=float)
        d = loc.shape[0]
        if scale.shape != (d, d):
            raise DensityError(f"scale must be {d}x{d}, got {scale.shape}")
        if not np.allclose(scale, scale.T, rtol=1e-10, atol=1e-12):
            raise DensityError("scale matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise DensityError("scale matrix is not positive definite") from exc
        if family is Family.STUDENT_T and not self.dof > 2:
            raise DensityError(f"Student dof must exceed 2, got {self.dof}")
        loc.setflags(write=False)
        scale.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", float(self.dof))
        object.__setattr__(self, "chol", chol)

    @classmethod
    def student(cls, location, scale, dof: float = 3.0) -> "PolicyParams":
        return cls(Family.STUDENT_T, location, _as_matrix(scale, np.size(location)), dof)

    @classmethod
    def gaussian(cls, location, scale) -> "PolicyParams":
        return cls(Family.GAUSSIAN, location, _as_matrix(scale, np.size(location)))

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    def with_params(self, location=None, scale=None) -> "PolicyParams":
        return replace(
            self,
            location=self.location if location is None else location,
            scale=self.scale if scale is None else scale,
        )

    def log_pdf(self, x) -> np.ndarray:
        return log_pdf(self, x)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return sample(self, rng, count)

    def covariance(self) -> np.ndarray:
        return covariance_of(self)

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.family is other.family
            and self.dof == other.dof
            and np.array_equal(self.location, other.location)
            and np.array_equal(self.scale, other.scale)
        )

    __hash__ = None


def _as_matrix(scale, dim: int) -> np.ndarray:
    s = np.asarray(scale, dtype=float)
    if s.ndim == 0:
        return float(s) * np.eye(dim)
    if s.ndim == 1:
        return np.diag(s)
    return s


def mahalanobis_sq(params: PolicyParams, x) -> np.ndarray:
    pts = as_points(x, params.dim)
    y = _lower_solve(params.chol, pts - params.location)
    return np.sum(y * y, axis=1)


def log_pdf(params: PolicyParams, x) -> np.ndarray:
    """Log-density at each row of ``x``; returns an array of shape ``(n,)``."""
    d = params.dim
    m = mahalanobis_sq(params, x)
    half_logdet = float(np.sum(np.log(np.diag(params.chol))))
    if params.family is Family.GAUSSIAN:
        return -0.5 * d * math.log(2 * math.pi) - half_logdet - 0.5 * m
    nu = params.dof
    const = (
        special.gammaln(0.5 * (nu + d))
        - special.gammaln(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - half_logdet
    )
    return const - 0.5 * (nu + d) * np.log1p(m / nu)


def _chi2_from_normal(u: np.ndarray, dof: float) -> np.ndarray:
    # Quantile transform of a standard normal into chi-square(dof); each tail
    # is inverted from its own side to keep full precision.
    lower = u <= 0
    w = np.empty_like(u)
    if np.any(lower):
        w[lower] = 2.0 * special.gammaincinv(0.5 * dof, special.ndtr(u[lower]))
    if np.any(~lower):
        w[~lower] = special.chdtri(dof, special.ndtr(-u[~lower]))
    return w


def sample(params: PolicyParams, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. points, shape ``(count, d)``.

    Gaussian: ``mu + L z``. Student: ``mu + L z / sqrt(w / nu)`` with ``w``
    chi-square(nu), obtained from one extra standard normal per point.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    d = params.dim
    if count == 0:
        return np.empty((0, d))
    if params.family is Family.GAUSSIAN:
        z = rng.standard_normal((count, d))
        return params.location + _lower_matvec(params.chol, z)
    raw = rng.standard_normal((count, d + 1))
    w = _chi2_from_normal(raw[:, d], params.dof)
    step = _lower_matvec(params.chol, raw[:, :d])
    return params.location + step / np.sqrt(w / params.dof)[:, None]


def covariance_of(params: PolicyParams) -> np.ndarray:
    if params.family is Family.GAUSSIAN:
        return params.scale.copy()
    nu = params.dof
    return params.scale * (nu / (nu - 2.0))


def scale_for_covariance(cov, dof: float) -> np.ndarray:
    """Student scale matrix whose covariance is ``cov``; identity map for dof=inf."""
    cov = np.asarray(cov, dtype=float)
    if math.isinf(dof):
        return cov
    return cov * ((dof - 2.0) / dof)


class TargetKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TargetSpec:
    """Target density known through its unnormalized log-density.

    ``log_density`` maps an ``(n, d)`` array to ``(n,)``. ``normalizing_constant``
    is the integral of ``exp(log_density)`` when known (test targets only);
    estimators never use it.
    """

    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]
    kind: TargetKind = TargetKind.CUSTOM
    normalizing_constant: Optional[float] = None
    params: Optional[PolicyParams] = None

    @classmethod
    def gaussian(cls, mean, sigma: float, log_scale: float = 0.0) -> "TargetSpec":
        """Isotropic Gaussian N(mean, sigma^2 I), optionally multiplied by exp(log_scale)."""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        params = PolicyParams.gaussian(mean, sigma**2)

        def logf(x):
            return log_pdf(params, x) + log_scale

        return cls(
            dim=mean.shape[0],
            log_density=logf,
            kind=TargetKind.GAUSSIAN,
            normalizing_constant=math.exp(log_scale),
            params=params,
        )

    @classmethod
    def from_policy(cls, params: PolicyParams) -> "TargetSpec":
        return cls(
            dim=params.dim,
            log_density=params.log_pdf,
            kind=TargetKind.GAUSSIAN if params.family is Family.GAUSSIAN else TargetKind.CUSTOM,
            normalizing_constant=1.0,
            params=params,
        )

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.log_density(as_points(x, self.dim)), dtype=float)
