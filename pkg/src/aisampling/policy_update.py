"""Exploit-step policy updates.

Every rule here minimizes an importance-weighted empirical risk accumulated
over *all* past samples::

    R_t(theta) = sum_{s<=t} sum_i m_theta(x_{s,i}) / q_{s-1}(x_{s,i})

The accumulator keeps weighted sufficient statistics (enough for the moment
and Gaussian-KL updates) and, when a rule needs it, every retained sample.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

from ._accum import seq_add
from .densities import DensityError, Family, PolicyParams, as_points, scale_for_covariance


class UpdateError(RuntimeError):
    """Raised when a policy update cannot produce a valid parameter."""

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class RiskKind(str, enum.Enum):
    MOMENTS = "moments"
    GMM = "gmm"
    KL = "kl"
    VARIANCE = "variance_risk"


class RegMode(str, enum.Enum):
    SIG_FULL = "sig_1"
    SIG_DIAG = "sig_1/2"
    SIG_FIXED = "sig_0"


@dataclass(frozen=True)
class RegularizationMode:
    mode: RegMode = RegMode.SIG_FIXED
    sigma0: float = 5.0
    nu: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "mode", RegMode(self.mode))
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    @property
    def fixed_scale_factor(self) -> float:
        if math.isinf(self.nu):
            return self.sigma0
        return self.sigma0 * (self.nu - 2.0) / self.nu

    def fixed_scale(self, dim: int) -> np.ndarray:
        return self.fixed_scale_factor * np.eye(dim)


def regularize_covariance(sigma, n_eff: float, reg: RegularizationMode) -> np.ndarray:
    """Apply the ridge/diagonal/fixed regularization to a fitted scale matrix.

    The ridge ``sigma0 / sqrt(max(1, n_eff))`` shrinks as the effective sample
    size grows.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    if reg.mode is RegMode.SIG_FIXED:
        return reg.fixed_scale(d)
    ridge = reg.sigma0 / math.sqrt(max(1.0, float(n_eff)))
    base = 0.5 * (sigma + sigma.T)
    if reg.mode is RegMode.SIG_DIAG:
        base = np.diag(np.diag(base))
    return base + ridge * np.eye(d)


@dataclass
class RiskAccumulator:
    """Running importance-weighted statistics with weights ``w = f / q``.

    ``sum_w``, ``sum_wx`` and ``sum_wxx`` are the weighted sufficient
    statistics. When ``retain`` is set, every point is also kept together with
    the log-density of the policy that generated it, ``log f`` and the
    integrand value.
    """

    dim: int
    kind: RiskKind = RiskKind.MOMENTS
    retain: bool = False
    count: int = 0
    sum_w: float = 0.0
    sum_wx: np.ndarray = None
    sum_wxx: np.ndarray = None
    points: List[np.ndarray] = field(default_factory=list)
    log_q: List[np.ndarray] = field(default_factory=list)
    log_f: List[np.ndarray] = field(default_factory=list)
    phi: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.kind = RiskKind(self.kind)
        if self.sum_wx is None:
            self.sum_wx = np.zeros(self.dim)
        if self.sum_wxx is None:
            self.sum_wxx = np.zeros((self.dim, self.dim))

    @property
    def n_eff(self) -> float:
        return self.sum_w

    def retained(self) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
        if not self.retain:
            raise UpdateError("accumulator does not retain samples")
        if not self.points:
            empty = np.empty(0)
            return np.empty((0, self.dim)), empty, empty, None
        pts = np.concatenate(self.points)
        lq = np.concatenate(self.log_q)
        lf = np.concatenate(self.log_f) if self.log_f else None
        ph = np.concatenate(self.phi) if self.phi else None
        return pts, lq, lf, ph

    def weights(self) -> np.ndarray:
        _, lq, lf, _ = self.retained()
        if lf is None:
            raise UpdateError("no target values were accumulated")
        return np.exp(lf - lq)

    def risk(self, loss: Callable[[np.ndarray], np.ndarray]) -> float:
        """Evaluate ``sum_j loss(x_j) / q_{j-1}(x_j)`` over retained samples."""
        pts, lq, _, _ = self.retained()
        return float(np.sum(np.asarray(loss(pts), dtype=float) / np.exp(lq)))

    def copy(self) -> "RiskAccumulator":
        return RiskAccumulator(
            dim=self.dim,
            kind=self.kind,
            retain=self.retain,
            count=self.count,
            sum_w=self.sum_w,
            sum_wx=self.sum_wx.copy(),
            sum_wxx=self.sum_wxx.copy(),
            points=list(self.points),
            log_q=list(self.log_q),
            log_f=list(self.log_f),
            phi=list(self.phi),
        )


def accumulate(acc: RiskAccumulator, x, log_q, log_f=None, phi=None) -> RiskAccumulator:
    """Advance ``acc`` with a batch of points drawn from the current policy.

    ``log_q`` is the log-density of the generating policy at ``x``; ``log_f``
    the log of the targeted density (unnormalized is fine). ``phi`` is only
    needed for the variance risk. Mutates and returns ``acc``.
    """
    pts = as_points(x, acc.dim)
    lq = np.atleast_1d(np.asarray(log_q, dtype=float))
    if lq.shape != (pts.shape[0],):
        raise ValueError("log_q must have one value per point")
    if log_f is not None:
        lf = np.atleast_1d(np.asarray(log_f, dtype=float))
        with np.errstate(over="ignore"):
            w = np.exp(lf - lq)
        if not np.all(np.isfinite(w)):
            bad = int(np.flatnonzero(~np.isfinite(w))[0])
            raise UpdateError(f"non-finite importance weight at point {pts[bad].tolist()}")
        acc.sum_w = float(seq_add(acc.sum_w, w))
        acc.sum_wx = seq_add(acc.sum_wx, w[:, None] * pts)
        acc.sum_wxx = seq_add(acc.sum_wxx, w[:, None, None] * pts[:, :, None] * pts[:, None, :])
    else:
        lf = None
    acc.count += pts.shape[0]
    if acc.retain:
        acc.points.append(pts.copy())
        acc.log_q.append(lq.copy())
        if lf is not None:
            acc.log_f.append(lf.copy())
        if phi is not None:
            ph = np.asarray(phi, dtype=float).reshape(pts.shape[0], -1)
            if not np.all(np.isfinite(ph)):
                raise UpdateError("non-finite integrand value")
            acc.phi.append(ph.copy())
    return acc


@dataclass(frozen=True)
class PolicyFit:
    """Unregularized output of an update rule (scale may be singular)."""

    location: np.ndarray
    scale: np.ndarray
    objective: float = 0.0


def _weighted_moments(acc: RiskAccumulator) -> Tuple[np.ndarray, np.ndarray]:
    if not acc.sum_w > 0:
        raise UpdateError("total importance weight is zero")
    mu = acc.sum_wx / acc.sum_w
    cov = acc.sum_wxx / acc.sum_w - np.outer(mu, mu)
    cov = 0.5 * (cov + cov.T)
    return mu, cov


def update_student_moments(acc: RiskAccumulator, nu: float) -> PolicyFit:
    """Weighted location and Student scale matching the first two moments.

    ``mu = sum(w x) / sum(w)`` and ``Sigma = (nu - 2)/nu * weighted cov``.
    ``nu = inf`` gives the Gaussian weighted MLE.
    """
    mu, cov = _weighted_moments(acc)
    return PolicyFit(mu, scale_for_covariance(cov, nu))


# ---------------------------------------------------------------------------
# parametrization shared by the iterative updates

def _pack(location, chol, free_scale: bool) -> np.ndarray:
    if not free_scale:
        return np.array(location, dtype=float)
    d = len(location)
    tril = np.array(chol, dtype=float)
    tril[np.diag_indices(d)] = np.log(np.diag(tril))
    return np.concatenate([location, tril[np.tril_indices(d)]])


def _unpack(theta, d: int, free_scale: bool, fixed_chol) -> Tuple[np.ndarray, np.ndarray]:
    mu = theta[:d]
    if not free_scale:
        return mu, fixed_chol
    chol = np.zeros((d, d))
    chol[np.tril_indices(d)] = theta[d:]
    chol[np.diag_indices(d)] = np.exp(np.diag(chol))
    return mu, chol


def _pack_grad(g_mu, g_chol, chol, free_scale: bool) -> np.ndarray:
    if not free_scale:
        return g_mu
    d = len(g_mu)
    g = np.tril(g_chol).copy()
    g[np.diag_indices(d)] *= np.diag(chol)
    return np.concatenate([g_mu, g[np.tril_indices(d)]])


def _log_density_and_grad(points, family: Family, dof: float, mu, chol):
    """Per-point log q_theta and its gradient pieces.

    Returns ``(logq, a, Y, Z)`` with ``Y = L^{-1}(x - mu)`` row-wise,
    ``Z = Y L^{-1}`` (rows are ``L^{-T} y``) and ``a`` the Student factor
    ``(nu + d)/(nu + |y|^2)`` (1 for the Gaussian). Then
    ``d logq/d mu = a z`` and ``d logq/d L = -diag(1/L_ii) + a tril(z y^T)``.
    """
    d = points.shape[1]
    Y = linalg.solve_triangular(chol, (points - mu).T, lower=True).T
    m = np.sum(Y * Y, axis=1)
    half_logdet = np.sum(np.log(np.diag(chol)))
    if family is Family.GAUSSIAN:
        logq = -0.5 * d * math.log(2 * math.pi) - half_logdet - 0.5 * m
        a = np.ones_like(m)
    else:
        nu = dof
        const = (
            special.gammaln(0.5 * (nu + d))
            - special.gammaln(0.5 * nu)
            - 0.5 * d * math.log(nu * math.pi)
            - half_logdet
        )
        logq = const - 0.5 * (nu + d) * np.log1p(m / nu)
        a = (nu + d) / (nu + m)
    Z = linalg.solve_triangular(chol, Y.T, lower=True, trans="T").T
    return logq, a, Y, Z


def _weighted_loglik_grad(points, s, family, dof, mu, chol):
    """``sum_j s_j log q(x_j)`` and its gradient in ``(mu, L)``."""
    logq, a, Y, Z = _log_density_and_grad(points, family, dof, mu, chol)
    sa = s * a
    g_mu = Z.T @ sa
    g_chol = (Z * sa[:, None]).T @ Y
    g_chol = np.tril(g_chol) - np.sum(s) * np.diag(1.0 / np.diag(chol))
    return float(np.dot(s, logq)), logq, g_mu, g_chol


def _minimize(objective, starts: Sequence[np.ndarray], what: str):
    best = None
    last = None
    for x0 in starts:
        res = optimize.minimize(
            objective, x0, jac=True, method="BFGS", options={"gtol": 1e-8, "maxiter": 500}
        )
        gnorm = float(np.max(np.abs(res.jac))) if res.jac is not None else float("inf")
        last = (res.x, gnorm)
        ok = np.isfinite(res.fun) and (res.success or gnorm <= 1e-6)
        if ok and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise UpdateError(f"{what}: minimizer did not converge", last_iterate=last[0], grad_norm=last[1])
    return best


def _safe_chol(scale, dim: int) -> np.ndarray:
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    try:
        return np.linalg.cholesky(0.5 * (scale + scale.T))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (scale + scale.T))
        w = np.maximum(w, 1e-8 * max(1.0, float(np.max(np.abs(w)))))
        return np.linalg.cholesky((v * w) @ v.T)


def _run_with_tiebreak(objective, current: PolicyParams, starts, free_scale, fixed_chol, what):
    d = current.dim
    x_cur = _pack(current.location, current.chol if free_scale else fixed_chol, free_scale)
    f_cur, _ = objective(x_cur)
    best = _minimize(objective, [x_cur] + list(starts), what)
    if np.isfinite(f_cur) and f_cur <= best.fun + 1e-12 * (1.0 + abs(f_cur)):
        mu, chol = current.location, (current.chol if free_scale else fixed_chol)
        return PolicyFit(np.array(mu), chol @ chol.T, float(f_cur))
    mu, chol = _unpack(best.x, d, free_scale, fixed_chol)
    return PolicyFit(np.array(mu), chol @ chol.T, float(best.fun))


# ---------------------------------------------------------------------------
# generalized method of moments

class MomentMap:
    """A moment function ``g`` together with its closed-form expectation."""

    name = "generic"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def expected(self, family: Family, dof: float, mu, chol) -> np.ndarray:
        raise NotImplementedError

    def expected_grad(self, family, dof, mu, chol, resid):
        """Gradient of ``|E_theta(g) - target|^2`` given ``resid = E - target``.

        ``None`` means no analytic gradient (finite differences are used).
        """
        return None

    def empirical(self, acc: RiskAccumulator) -> np.ndarray:
        pts, lq, lf, _ = acc.retained()
        if lf is None:
            raise UpdateError("no target values were accumulated")
        w = np.exp(lf - lq)
        if not np.sum(w) > 0:
            raise UpdateError("total importance weight is zero")
        return (w @ self(pts)) / np.sum(w)

    def invert(self, moments, family: Family, dof: float):
        """Parameters matching ``moments`` exactly, or ``None`` if unknown/infeasible."""
        return None


def _cov_factor(family: Family, dof: float) -> float:
    return 1.0 if family is Family.GAUSSIAN else dof / (dof - 2.0)


class FirstMoment(MomentMap):
    name = "x"

    def __call__(self, x):
        return np.asarray(x, dtype=float)

    def expected(self, family, dof, mu, chol):
        return np.asarray(mu, dtype=float)

    def expected_grad(self, family, dof, mu, chol, resid):
        return 2.0 * resid, np.zeros_like(chol)

    def empirical(self, acc):
        if not acc.sum_w > 0:
            raise UpdateError("total importance weight is zero")
        return acc.sum_wx / acc.sum_w

    def invert(self, moments, family, dof):
        return np.asarray(moments, dtype=float), None


class FirstSecondMoment(MomentMap):
    """``g(x) = (x, vec(x x^T))``."""

    name = "x,xx"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        outer = x[:, :, None] * x[:, None, :]
        return np.concatenate([x, outer.reshape(x.shape[0], -1)], axis=1)

    def expected(self, family, dof, mu, chol):
        cov = _cov_factor(family, dof) * chol @ chol.T
        return np.concatenate([mu, (cov + np.outer(mu, mu)).ravel()])

    def expected_grad(self, family, dof, mu, chol, resid):
        d = len(mu)
        r1 = resid[:d]
        R2 = resid[d:].reshape(d, d)
        S = R2 + R2.T
        g_mu = 2.0 * r1 + 2.0 * S @ mu
        g_chol = 2.0 * _cov_factor(family, dof) * S @ chol
        return g_mu, g_chol

    def empirical(self, acc):
        if not acc.sum_w > 0:
            raise UpdateError("total importance weight is zero")
        return np.concatenate([acc.sum_wx, acc.sum_wxx.ravel()]) / acc.sum_w

    def invert(self, moments, family, dof):
        moments = np.asarray(moments, dtype=float)
        d = int(round((-1 + math.sqrt(1 + 4 * len(moments))) / 2))
        mu = moments[:d]
        second = moments[d:].reshape(d, d)
        cov = second - np.outer(mu, mu)
        cov = 0.5 * (cov + cov.T)
        return mu, cov / _cov_factor(family, dof)


def update_gmm(
    acc: RiskAccumulator,
    family: Family,
    moment_map: MomentMap,
    current: PolicyParams,
    free_scale: bool = True,
    fixed_scale=None,
    use_closed_form: bool = True,
) -> PolicyFit:
    """Minimize ``|E_theta(g) - weighted mean of g|^2`` over the family.

    When the map can be inverted exactly and the inversion is feasible, the
    inverted parameters are a zero of the objective and are returned as is;
    otherwise a quasi-Newton search runs from the current parameters and the
    moment-matching solution.
    """
    family = Family(family)
    d = current.dim
    dof = current.dof
    target = moment_map.empirical(acc)
    fixed_chol = _safe_chol(current.scale if fixed_scale is None else fixed_scale, d)

    def obj_at(mu, chol):
        return moment_map.expected(family, dof, mu, chol) - target

    if use_closed_form:
        inv = moment_map.invert(target, family, dof)
        if inv is not None:
            mu, scale = inv
            if not free_scale:
                scale = fixed_chol @ fixed_chol.T
            elif scale is None:
                scale = current.scale.copy()
            if np.all(np.linalg.eigvalsh(scale) > 0):
                resid = obj_at(mu, np.linalg.cholesky(scale))
                if np.dot(resid, resid) <= 1e-20 * (1.0 + np.dot(target, target)):
                    return PolicyFit(np.array(mu), np.array(scale), float(np.dot(resid, resid)))

    def objective(theta):
        mu, chol = _unpack(theta, d, free_scale, fixed_chol)
        resid = obj_at(mu, chol)
        val = float(np.dot(resid, resid))
        grads = moment_map.expected_grad(family, dof, mu, chol, resid)
        if grads is None:
            g = optimize.approx_fprime(theta, lambda t: float(np.sum(obj_at(*_unpack(t, d, free_scale, fixed_chol)) ** 2)), 1e-7)
            return val, g
        return val, _pack_grad(grads[0], grads[1], chol, free_scale)

    starts = []
    inv = moment_map.invert(target, family, dof)
    if inv is not None:
        mu0, sc0 = inv
        sc0 = current.scale if sc0 is None else sc0
        starts.append(_pack(mu0, _safe_chol(sc0, d) if free_scale else fixed_chol, free_scale))
    return _run_with_tiebreak(objective, current, starts, free_scale, fixed_chol, "gmm update")


# ---------------------------------------------------------------------------
# Kullback-Leibler risk

def update_kl(
    acc: RiskAccumulator,
    family: Family,
    current: PolicyParams,
    free_scale: bool = True,
    fixed_scale=None,
    closed_form: bool = True,
) -> PolicyFit:
    """Minimize ``-sum w log q_theta(x)`` over retained (or summarized) samples.

    The Gaussian family has the weighted MLE as closed form and only needs the
    sufficient statistics; other families use the iterative search.
    """
    family = Family(family)
    d = current.dim
    fixed_chol = _safe_chol(current.scale if fixed_scale is None else fixed_scale, d)
    if family is Family.GAUSSIAN and closed_form:
        mu, cov = _weighted_moments(acc)
        return PolicyFit(mu, cov if free_scale else fixed_chol @ fixed_chol.T)

    pts, lq, lf, _ = acc.retained()
    if lf is None or pts.shape[0] == 0:
        raise UpdateError("KL update needs retained samples with target values")
    w = np.exp(lf - lq)
    total = float(np.sum(w))
    if not total > 0:
        raise UpdateError("total importance weight is zero")
    s = w / total

    def objective(theta):
        mu, chol = _unpack(theta, d, free_scale, fixed_chol)
        val, _, g_mu, g_chol = _weighted_loglik_grad(pts, s, family, current.dof, mu, chol)
        return -val, -_pack_grad(g_mu, g_chol, chol, free_scale)

    mom = update_student_moments(acc, math.inf if family is Family.GAUSSIAN else current.dof) if acc.sum_w > 0 else None
    starts = []
    if mom is not None:
        starts.append(_pack(mom.location, _safe_chol(mom.scale, d) if free_scale else fixed_chol, free_scale))
    fit = _run_with_tiebreak(objective, current, starts, free_scale, fixed_chol, "kl update")
    return PolicyFit(fit.location, fit.scale, fit.objective)


def kl_objective(acc: RiskAccumulator, params: PolicyParams) -> float:
    """Normalized KL risk ``-sum w log q / sum w`` at ``params``."""
    w = acc.weights()
    pts = acc.retained()[0]
    return float(-np.dot(w, params.log_pdf(pts)) / np.sum(w))


# ---------------------------------------------------------------------------
# variance risk

def update_variance_risk(
    acc: RiskAccumulator,
    family: Family,
    current: PolicyParams,
    free_scale: bool = False,
    fixed_scale=None,
) -> PolicyFit:
    """Minimize ``sum_j phi(x_j)^2 / (q_theta(x_j) q_{j-1}(x_j))``.

    The objective is minimized on the log scale (same minimizer, better
    conditioned). Only scalar integrands are supported.
    """
    family = Family(family)
    d = current.dim
    pts, lq, _, ph = acc.retained()
    if ph is None:
        raise UpdateError("variance risk needs retained integrand values")
    if ph.shape[1] != 1:
        raise UpdateError("variance risk is defined for scalar integrands only")
    fixed_chol = _safe_chol(current.scale if fixed_scale is None else fixed_scale, d)
    phi = ph[:, 0]
    nz = phi != 0
    if not np.any(nz):
        return PolicyFit(current.location.copy(), fixed_chol @ fixed_chol.T if not free_scale else current.scale.copy(), 0.0)
    pts, lq, phi = pts[nz], lq[nz], phi[nz]
    log_c = 2.0 * np.log(np.abs(phi)) - lq

    def objective(theta):
        mu, chol = _unpack(theta, d, free_scale, fixed_chol)
        logq, a, Y, Z = _log_density_and_grad(pts, family, current.dof, mu, chol)
        terms = log_c - logq
        val = float(special.logsumexp(terms))
        s = np.exp(terms - val)
        sa = s * a
        g_mu = Z.T @ sa
        g_chol = np.tril((Z * sa[:, None]).T @ Y) - np.diag(1.0 / np.diag(chol))
        return val, -_pack_grad(g_mu, g_chol, chol, free_scale)

    starts = []
    if acc.sum_w > 0:
        mom = update_student_moments(acc, current.dof if family is Family.STUDENT_T else math.inf)
        starts.append(_pack(mom.location, _safe_chol(mom.scale, d) if free_scale else fixed_chol, free_scale))
    # the point carrying the largest |phi|^2/q is a natural start for the location
    j = int(np.argmax(log_c))
    starts.append(_pack(pts[j], current.chol if free_scale else fixed_chol, free_scale))
    fit = _run_with_tiebreak(objective, current, starts, free_scale, fixed_chol, "variance update")
    return fit


def variance_objective(acc: RiskAccumulator, params: PolicyParams) -> float:
    """``sum phi^2 / (q_theta q_prev)`` at ``params`` (linear scale)."""
    pts, lq, _, ph = acc.retained()
    with np.errstate(over="ignore"):
        return float(np.sum(ph[:, 0] ** 2 * np.exp(-params.log_pdf(pts) - lq)))


# ---------------------------------------------------------------------------
# updaters driven by the AIS loop

class PolicyUpdater:
    """Base class: accumulate each stage, refresh the policy at stage ends."""

    kind: Optional[RiskKind] = None
    retain = False

    def new_accumulator(self, dim: int) -> RiskAccumulator:
        return RiskAccumulator(dim=dim, kind=self.kind or RiskKind.MOMENTS, retain=self.retain)

    def accumulate(self, acc, x, log_q, log_f, phi):
        return accumulate(acc, x, log_q, log_f, phi if self.retain else None)

    def update(self, acc: RiskAccumulator, current: PolicyParams) -> Tuple[PolicyParams, List[str]]:
        raise NotImplementedError


class IdentityUpdater(PolicyUpdater):
    """Never changes the policy (plain importance sampling)."""

    def accumulate(self, acc, x, log_q, log_f, phi):
        return acc

    def update(self, acc, current):
        return current, []


@dataclass
class _RegularizedUpdater(PolicyUpdater):
    reg: RegularizationMode = field(default_factory=RegularizationMode)

    @property
    def free_scale(self) -> bool:
        return self.reg.mode is not RegMode.SIG_FIXED

    def _fit(self, acc, current) -> PolicyFit:
        raise NotImplementedError

    def _fallback_fit(self, acc, current) -> PolicyFit:
        nu = current.dof if current.family is Family.STUDENT_T else math.inf
        return update_student_moments(acc, nu)

    def update(self, acc, current):
        warnings = []
        try:
            fit = self._fit(acc, current)
        except UpdateError as exc:
            if acc.sum_w > 0:
                warnings.append("minimizer_fallback")
                fit = self._fallback_fit(acc, current)
            else:
                warnings.append("weight_collapse")
                return current, warnings
        scale = regularize_covariance(fit.scale, acc.n_eff, self.reg)
        if not np.all(np.isfinite(fit.location)) or not np.all(np.isfinite(scale)):
            return current, warnings + ["update_nonfinite"]
        try:
            return current.with_params(location=fit.location, scale=scale), warnings
        except DensityError:
            diag = RegularizationMode(RegMode.SIG_DIAG, self.reg.sigma0, self.reg.nu)
            try:
                scale = regularize_covariance(fit.scale, acc.n_eff, diag)
                return current.with_params(location=fit.location, scale=scale), warnings + ["update_fallback"]
            except DensityError:
                return current, warnings + ["update_fallback"]


@dataclass
class MomentUpdater(_RegularizedUpdater):
    """Weighted moment matching (location, and the scale unless ``sig_0``)."""

    kind = RiskKind.MOMENTS

    def _fit(self, acc, current):
        nu = current.dof if current.family is Family.STUDENT_T else math.inf
        return update_student_moments(acc, nu)


@dataclass
class GmmUpdater(_RegularizedUpdater):
    moment_map: MomentMap = field(default_factory=FirstMoment)

    kind = RiskKind.GMM

    def __post_init__(self):
        # generic maps need the raw samples to evaluate g
        self.retain = type(self.moment_map) not in (FirstMoment, FirstSecondMoment)

    def _fit(self, acc, current):
        fixed = None if self.free_scale else self.reg.fixed_scale(current.dim)
        return update_gmm(acc, current.family, self.moment_map, current, self.free_scale, fixed)


@dataclass
class KlUpdater(_RegularizedUpdater):
    kind = RiskKind.KL

    retain = True

    def _fit(self, acc, current):
        fixed = None if self.free_scale else self.reg.fixed_scale(current.dim)
        return update_kl(acc, current.family, current, self.free_scale, fixed)


@dataclass
class VarianceRiskUpdater(_RegularizedUpdater):
    kind = RiskKind.VARIANCE

    retain = True

    def _fit(self, acc, current):
        fixed = None if self.free_scale else self.reg.fixed_scale(current.dim)
        return update_variance_risk(acc, current.family, current, self.free_scale, fixed)


def make_updater(name: str, reg: RegularizationMode) -> PolicyUpdater:
    name = name.lower()
    if name in ("identity", "none"):
        return IdentityUpdater()
    if name == "moments":
        return MomentUpdater(reg)
    if name == "gmm":
        return GmmUpdater(reg)
    if name == "kl":
        return KlUpdater(reg)
    if name in ("variance", "variance_risk"):
        return VarianceRiskUpdater(reg)
    raise ValueError(f"unknown updater {name!r}")
