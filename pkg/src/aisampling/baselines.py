"""Comparison samplers: adaptive Metropolis-Hastings and fixed-policy IS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ais import AisTrace, AllocationPolicy, estimate_normalized, run_ais
from .densities import PolicyParams, TargetSpec
from .policy_update import IdentityUpdater


@dataclass(frozen=True)
class AmhConfig:
    chain_length: int
    seed: int = 0
    i0: int = 1000
    epsilon: float = 0.05
    scale_factor: Optional[float] = None  # defaults to 2.4^2 / d

    def __post_init__(self):
        if self.i0 < 1:
            raise ValueError("i0 must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.chain_length < 1:
            raise ValueError("chain_length must be >= 1")


@dataclass
class AmhResult:
    chain: np.ndarray  # (n + 1, d), X_0 first
    running_mean: np.ndarray  # (n, d): mean of X_1..X_i
    accepted: int
    covariance: np.ndarray  # empirical covariance of the whole chain

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / (len(self.chain) - 1)


class RunningCovariance:
    """Welford-style running mean and (population) covariance."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def push(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + np.outer(delta, x - self.mean)

    @property
    def cov(self) -> np.ndarray:
        c = self.m2 / self.n
        return 0.5 * (c + c.T)


def accept_probability(log_target_current: float, log_target_proposal: float) -> float:
    if not math.isfinite(log_target_proposal):
        return 0.0
    return math.exp(min(0.0, log_target_proposal - log_target_current))


def adaptive_mh_run(target: TargetSpec, cfg: AmhConfig, x0=None, keep_covariances_at: Sequence[int] = ()) -> AmhResult:
    """Adaptive random-walk Metropolis chain.

    Step ``i`` proposes from ``N(x, I)`` while ``i <= i0`` and from
    ``N(x, s_d (C_i + eps I))`` afterwards, ``C_i`` being the empirical
    covariance of ``X_0..X_{i-1}``. Proposals with a non-finite target value
    are rejected.
    """
    d = target.dim
    rng = np.random.default_rng(cfg.seed)
    n = cfg.chain_length
    sd = cfg.scale_factor if cfg.scale_factor is not None else 2.4**2 / d
    z = rng.standard_normal((n, d))
    log_u = np.log(rng.random(n))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    lp = float(target(x)[0])
    chain = np.empty((n + 1, d))
    chain[0] = x
    stats = RunningCovariance(d)
    stats.push(x)
    eye = np.eye(d)
    accepted = 0
    for i in range(1, n + 1):
        if i <= cfg.i0:
            y = x + z[i - 1]
        else:
            chol = np.linalg.cholesky(sd * (stats.cov + cfg.epsilon * eye))
            y = x + chol @ z[i - 1]
        lq = float(target(y)[0])
        if math.isfinite(lq) and log_u[i - 1] < lq - lp:
            x, lp = y, lq
            accepted += 1
        chain[i] = x
        stats.push(x)
    running = np.cumsum(chain[1:], axis=0) / np.arange(1, n + 1)[:, None]
    return AmhResult(chain, running, accepted, stats.cov)


@dataclass
class OracleTrace:
    budgets: list
    estimates: np.ndarray
    ais_trace: AisTrace


def oracle_is_run(
    policy: PolicyParams,
    integrand: Callable[[np.ndarray], np.ndarray],
    target: TargetSpec,
    n: int,
    rng,
    record_budgets: Optional[Sequence[int]] = None,
) -> OracleTrace:
    """Self-normalized IS with a fixed policy, recorded at the given budgets.

    This is exactly the AIS loop with the identity updater.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    budgets = list(record_budgets) if record_budgets is not None else [n]
    trace = run_ais(integrand, target, policy, AllocationPolicy((n,)), IdentityUpdater(), rng, record_budgets=budgets)
    est = np.array([estimate_normalized(e.state) for e in trace.entries])
    return OracleTrace([e.budget for e in trace.entries], est, trace)
