"""Fast invariant checks behind ``aisampling check``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy import integrate

from ..ais import (
    AllocationPolicy,
    compute_stage_weights,
    estimate_normalized,
    estimate_weighted,
    run_ais,
    run_ais_sample_scale,
    stage_weights_from_stats,
)
from ..baselines import RunningCovariance
from ..densities import PolicyParams, TargetSpec
from ..diagnostics import asymptotic_variance, delta_method_variance, quadrature
from ..policy_update import (
    FirstMoment,
    MomentUpdater,
    RegularizationMode,
    RiskAccumulator,
    accumulate,
    update_gmm,
    update_student_moments,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _density_normalization(seed):
    # full-line integral; a finite window misses ~1e-5 of t_3 tail mass
    worst = 0.0
    for p in (PolicyParams.gaussian([0.3], 2.0), PolicyParams.student([-1.0], 0.5, 3.0)):
        total, _ = integrate.quad(lambda t: math.exp(p.log_pdf([t])[0]), -np.inf, np.inf, epsabs=1e-12)
        worst = max(worst, abs(total - 1.0))
    return worst < 1e-6, f"max |integral - 1| = {worst:.2e}"


def _sampling_determinism(seed):
    p = PolicyParams.student([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]], 3.0)
    a = p.sample(np.random.default_rng(seed), 50)
    b = np.vstack([p.sample(np.random.default_rng(seed), 50)])
    rng = np.random.default_rng(seed)
    c = np.vstack([p.sample(rng, 1) for _ in range(50)])
    return bool(np.array_equal(a, b) and np.array_equal(a, c)), "batch == repeated == one-at-a-time"


def _algorithm_equivalence(seed):
    d = 2
    target = TargetSpec.gaussian(np.full(d, 5.0), 1.0)
    reg = RegularizationMode("sig_0", 5.0, 3.0)
    q0 = PolicyParams.student(np.zeros(d), reg.fixed_scale(d), 3.0)
    ok = True
    for sched in ((2, 3), (1, 1, 1, 1, 1)):
        for s in range(seed, seed + 20):
            a = run_ais(lambda x: x, target, q0, AllocationPolicy(sched), MomentUpdater(reg), np.random.default_rng(s))
            b = run_ais_sample_scale(lambda x: x, target, q0, AllocationPolicy(sched), MomentUpdater(reg), np.random.default_rng(s))
            ok &= all(np.array_equal(x.state.sum_S, y.state.sum_S) for x, y in zip(a.entries, b.entries))
    return ok, "stage scale vs sample scale, 20 seeds x 2 schedules"


def _weight_constraint(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(2000):
        T = int(rng.integers(1, 30))
        n = rng.integers(1, 500, size=T)
        s = np.exp(rng.uniform(-30, 30, size=T)) * rng.integers(0, 2, size=T)
        alpha = stage_weights_from_stats(n, s).alphas
        worst = max(worst, abs(np.dot(n, alpha) - n.sum()) / n.sum())
    return worst <= 1e-10, f"max relative violation {worst:.1e}"


def _gmm_moment_equivalence(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 5))
        x = rng.normal(size=(30, d)) * 3
        lq = rng.normal(size=30)
        lf = rng.normal(size=30)
        acc = accumulate(RiskAccumulator(d), x, lq, lf)
        cur = PolicyParams.student(np.zeros(d), np.eye(d), 3.0)
        a = update_student_moments(acc, 3.0).location
        b = update_gmm(acc, "student_t", FirstMoment(), cur).location
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst <= 1e-12, f"max |difference| = {worst:.1e}"


def _normalization_invariance(seed):
    q0 = PolicyParams.student([0.0], 3.0, 3.0)
    a = run_ais(lambda x: x, TargetSpec.gaussian([1.0], 1.0), q0, AllocationPolicy((200,)), None, np.random.default_rng(seed))
    b = run_ais(lambda x: x, TargetSpec.gaussian([1.0], 1.0, log_scale=math.log(1e6)), q0, AllocationPolicy((200,)), None, np.random.default_rng(seed))
    ea, eb = estimate_normalized(a.final_state), estimate_normalized(b.final_state)
    wa, wb = estimate_weighted(a.final_state), estimate_weighted(b.final_state)
    ok = np.allclose(ea, eb, rtol=1e-12) and np.allclose(wa, wb, rtol=1e-12)
    return ok, f"|delta| = {float(np.max(np.abs(ea - eb))):.1e}"


def _delta_identity(seed):
    q = PolicyParams.student([0.5], 2.0, 3.0)
    pi = PolicyParams.gaussian([0.0], 1.0)
    phi = lambda x: x[:, 0] ** 2  # noqa: E731
    I = 1.0

    def payload(x):
        p = np.exp(pi.log_pdf(x))
        return np.stack([phi(x) * p, p], axis=1)

    V = asymptotic_variance(q, payload, [I, 1.0])
    lhs = delta_method_variance(V, I)
    rhs = float(quadrature(lambda x: np.exp(2 * pi.log_pdf(x) - q.log_pdf(x)) * (phi(x) - I) ** 2, q))
    rel = abs(lhs - rhs) / rhs
    return rel < 0.01, f"relative gap {rel:.1e}"


def _online_covariance(seed):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(500, 3)) + 4
    rc = RunningCovariance(3)
    worst = 0.0
    for i, x in enumerate(xs, start=1):
        rc.push(x)
        if i in (10, 100, 500):
            worst = max(worst, float(np.max(np.abs(rc.cov - np.cov(xs[:i].T, bias=True)))))
    return worst <= 1e-10, f"max |online - batch| = {worst:.1e}"


def _stage_weight_floor(seed):
    target = TargetSpec.gaussian([0.0], 1.0)
    perfect = PolicyParams.gaussian([0.0], 1.0)
    run = run_ais(lambda x: x, target, perfect, AllocationPolicy((50,)), None, np.random.default_rng(seed))
    st = run.final_state.stages()
    w = compute_stage_weights(st, norm_const=1.0).alphas
    return bool(np.all(np.isfinite(w))), "perfect stage gives finite weights"


CHECKS: List[tuple] = [
    ("density normalization", _density_normalization),
    ("prefix-consistent sampling", _sampling_determinism),
    ("algorithm-scale equivalence", _algorithm_equivalence),
    ("stage weight constraint", _weight_constraint),
    ("gmm/moment equivalence", _gmm_moment_equivalence),
    ("normalized invariance", _normalization_invariance),
    ("delta-method identity", _delta_identity),
    ("online covariance", _online_covariance),
    ("degenerate stage weights", _stage_weight_floor),
]


def run_checks(seed: int = 0, only: Callable[[str], bool] = lambda name: True) -> List[CheckResult]:
    results = []
    for name, fn in CHECKS:
        if not only(name):
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(seed)
        except Exception as exc:  # report, keep going
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results
