"""Asymptotic variance, delta-method contraction and CLT intervals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .ais import AisState, AisTrace, StageRecord
from .densities import PolicyParams

QUAD_POINTS_1D = 4096
QUAD_POINTS_2D = 256
QUAD_HALF_WIDTH = 40.0  # in policy standard deviations


class VarianceMethod(str, enum.Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class VarianceMatrix:
    matrix: np.ndarray
    estimator_kind: VarianceMethod
    n_used: int

    def is_psd(self, rtol: float = 1e-8) -> bool:
        eig = np.linalg.eigvalsh(self.matrix)
        return bool(eig.min() >= -rtol * max(np.trace(self.matrix), 1e-300))


def _grid(q: PolicyParams, points: Optional[int]):
    d = q.dim
    std = np.sqrt(np.diag(q.covariance()))
    n = points or (QUAD_POINTS_1D if d == 1 else QUAD_POINTS_2D)
    axes = [np.linspace(m - QUAD_HALF_WIDTH * s, m + QUAD_HALF_WIDTH * s, n) for m, s in zip(q.location, std)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wts_1d = [np.full(n, a[1] - a[0]) for a in axes]
    for w in wts_1d:
        w[0] *= 0.5
        w[-1] *= 0.5
    wts = wts_1d[0]
    for w in wts_1d[1:]:
        wts = np.multiply.outer(wts, w).ravel()
    return pts, wts


def quadrature(fn: Callable[[np.ndarray], np.ndarray], q: PolicyParams, points: Optional[int] = None) -> np.ndarray:
    """Trapezoid integral of ``fn`` over the policy-centered window (d <= 2)."""
    if q.dim > 2:
        raise ValueError("quadrature supports d <= 2; use the Monte Carlo estimator")
    pts, wts = _grid(q, points)
    vals = np.asarray(fn(pts), dtype=float)
    return np.tensordot(wts, vals, axes=(0, 0))


def asymptotic_variance(
    q: PolicyParams,
    phi: Callable[[np.ndarray], np.ndarray],
    integral_phi,
    method: str = "quadrature",
    budget: int = 100_000,
    rng: Optional[np.random.Generator] = None,
    points: Optional[int] = None,
) -> VarianceMatrix:
    """``V(q, phi) = int (phi - q I)(phi - q I)^T / q`` for ``I = int phi``.

    ``quadrature`` integrates on a trapezoid grid (d <= 2); ``monte_carlo``
    averages ``(phi/q - I)(phi/q - I)^T`` over ``budget`` fresh draws from q.
    """
    method = VarianceMethod(method)
    I = np.atleast_1d(np.asarray(integral_phi, dtype=float))
    if method is VarianceMethod.QUADRATURE:
        if q.dim > 2:
            raise ValueError(f"quadrature requested for d={q.dim} > 2; use method='monte_carlo'")
        pts, wts = _grid(q, points)
        qv = np.exp(q.log_pdf(pts))
        vals = np.asarray(phi(pts), dtype=float).reshape(len(pts), -1)
        resid = vals - qv[:, None] * I
        with np.errstate(divide="ignore", invalid="ignore"):
            integrand = np.where(qv[:, None, None] > 0, resid[:, :, None] * resid[:, None, :] / qv[:, None, None], 0.0)
        mat = np.tensordot(wts, integrand, axes=(0, 0))
        n_used = len(pts)
    else:
        if rng is None:
            rng = np.random.default_rng()
        x = q.sample(rng, budget)
        vals = np.asarray(phi(x), dtype=float).reshape(budget, -1)
        delta = vals / np.exp(q.log_pdf(x))[:, None] - I
        mat = delta.T @ delta / budget
        n_used = budget
    mat = 0.5 * (mat + mat.T)
    return VarianceMatrix(mat, method, n_used)


def delta_method_variance(V, integral_phi_pi):
    """Asymptotic variance of the self-normalized estimator.

    ``V`` is the variance of the stacked payload ``(phi*pi, pi)``; with
    ``u = (1, -int phi pi)`` the result is ``u^T V u`` (a float for scalar
    ``phi``). For vector ``phi`` of length p, ``U V U^T`` with
    ``U = [I_p, -int phi pi]`` is returned.
    """
    mat = V.matrix if isinstance(V, VarianceMatrix) else np.asarray(V, dtype=float)
    I = np.atleast_1d(np.asarray(integral_phi_pi, dtype=float))
    p = I.shape[0]
    if mat.shape != (p + 1, p + 1):
        raise ValueError(f"variance matrix must be {(p + 1, p + 1)}, got {mat.shape}")
    U = np.hstack([np.eye(p), -I[:, None]])
    out = U @ mat @ U.T
    return float(out[0, 0]) if p == 1 else out


@dataclass(frozen=True)
class CltReport:
    estimate: np.ndarray
    variance: VarianceMatrix
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n: int
    level: float

    def covers(self, truth) -> np.ndarray:
        truth = np.atleast_1d(truth)
        return (self.ci_lower <= truth) & (truth <= self.ci_upper)


def confidence_interval(estimate, V_est, n: int, level: float = 0.95) -> CltReport:
    """Componentwise CLT intervals ``estimate +/- z * sqrt(V_ii / n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(V_est, VarianceMatrix):
        V_est = VarianceMatrix(np.atleast_2d(np.asarray(V_est, dtype=float)), VarianceMethod.MONTE_CARLO, n)
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    z = stats.norm.ppf(0.5 + 0.5 * level)
    half = z * np.sqrt(np.maximum(np.diag(V_est.matrix), 0.0) / n)
    return CltReport(est, V_est, est - half, est + half, n, level)


def effective_sample_size(stages: Sequence[StageRecord]) -> float:
    """Sum of the importance weights ``f/q`` over all recorded samples."""
    return float(sum(st.denominator_sum for st in stages))


@dataclass(frozen=True)
class MartingaleReport:
    stage_means: np.ndarray  # (T, p) mean of phi/q - truth per stage
    stage_ses: np.ndarray
    z_scores: np.ndarray
    max_abs_z: float


def martingale_residuals(trace, truth) -> MartingaleReport:
    """Per-stage means of the increments ``phi/q - truth`` and their SEs."""
    if isinstance(trace, AisTrace):
        stages = trace.final_state.stages()
    elif isinstance(trace, AisState):
        stages = trace.stages()
    else:
        stages = list(trace)
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    means, ses = [], []
    for st in stages:
        n = st.size
        m = st.integrand_sum / n
        var = np.maximum(st.integrand_sq_sum / n - m * m, 0.0)
        se = np.sqrt(var / max(n - 1, 1))
        means.append(m - truth)
        ses.append(se)
    means = np.array(means)
    ses = np.array(ses)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ses > 0, means / ses, np.where(means == 0, 0.0, np.inf))
    return MartingaleReport(means, ses, z, float(np.max(np.abs(z))) if z.size else 0.0)


def final_policy_variance(trace: AisTrace, phi, integral_phi, budget: int = 100_000, rng=None) -> VarianceMatrix:
    """Monte Carlo estimate of ``V_*`` using the last policy of an adaptive run."""
    return asymptotic_variance(trace.final_policy, phi, integral_phi, "monte_carlo", budget, rng)
