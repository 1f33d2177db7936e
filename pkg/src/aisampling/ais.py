"""The adaptive importance sampling loop and its estimators.

Two drivers share one state object:

* :func:`run_ais` works stage by stage (draw ``n_t`` points from ``q_{t-1}``,
  accumulate, update the policy);
* :func:`run_ais_sample_scale` does the same one point at a time, updating the
  policy whenever the running count hits a stage boundary.

Sums are accumulated strictly sequentially and sampling is prefix-consistent,
so both drivers produce bit-identical running sums for the same generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ._accum import seq_add
from .densities import PolicyParams, TargetSpec, as_points
from .policy_update import IdentityUpdater, PolicyUpdater, RiskAccumulator

# floor applied to a stage's weight-variance statistic, per sample
STAGE_STAT_FLOOR = 1e-12


class AisError(RuntimeError):
    pass


@dataclass(frozen=True)
class AllocationPolicy:
    """Number of points drawn at each stage, ``(n_1, ..., n_T)``."""

    stage_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.stage_sizes)
        if not sizes:
            raise ValueError("allocation policy needs at least one stage")
        if any(n < 1 for n in sizes):
            raise ValueError("every stage size must be >= 1")
        object.__setattr__(self, "stage_sizes", sizes)

    @classmethod
    def constant(cls, stages: int, size: int) -> "AllocationPolicy":
        return cls((size,) * stages)

    @property
    def num_stages(self) -> int:
        return len(self.stage_sizes)

    @property
    def boundaries(self) -> List[int]:
        return [int(b) for b in np.cumsum(self.stage_sizes)]

    @property
    def total(self) -> int:
        return sum(self.stage_sizes)


@dataclass(frozen=True)
class StageRecord:
    """Per-stage sums needed by the estimators.

    With ``w = pi_u(x)/q(x)`` and ``phi`` the integrand:
    ``integrand_sum = sum phi/q``, ``numerator_sum = sum phi w``,
    ``denominator_sum = sum w``, ``weight_sq_sum = sum w^2``.
    """

    stage_index: int
    size: int
    policy: PolicyParams
    integrand_sum: np.ndarray
    integrand_sq_sum: np.ndarray
    numerator_sum: np.ndarray
    denominator_sum: float
    weight_sq_sum: float
    points: Optional[np.ndarray] = None

    def weight_var_stat(self, norm_const: float) -> float:
        """``sum_i (w_i / Z - 1)^2`` for a given normalizing constant ``Z``."""
        if not norm_const > 0:
            return math.inf
        z = norm_const
        stat = self.weight_sq_sum / z**2 - 2.0 * self.denominator_sum / z + self.size
        return max(stat, 0.0)


class _OpenStage:
    def __init__(self, index: int, policy: PolicyParams, p: int, keep_points: bool):
        self.index = index
        self.policy = policy
        self.size = 0
        self.integrand_sum = np.zeros(p)
        self.integrand_sq_sum = np.zeros(p)
        self.numerator_sum = np.zeros(p)
        self.denominator_sum = 0.0
        self.weight_sq_sum = 0.0
        self.points = [] if keep_points else None

    def freeze(self) -> StageRecord:
        pts = None
        if self.points is not None:
            pts = np.concatenate(self.points) if self.points else np.empty((0, self.policy.dim))
        return StageRecord(
            stage_index=self.index,
            size=self.size,
            policy=self.policy,
            integrand_sum=self.integrand_sum.copy(),
            integrand_sq_sum=self.integrand_sq_sum.copy(),
            numerator_sum=self.numerator_sum.copy(),
            denominator_sum=float(self.denominator_sum),
            weight_sq_sum=float(self.weight_sq_sum),
            points=pts,
        )


class AisState:
    """Running accumulators of an AIS run at sample scale.

    ``sum_S`` is ``S_j = sum phi(x_j)/q_{j-1}(x_j)`` and ``count`` is ``j``.
    The normalized sums ``sum_num``/``sum_den`` are only advanced when target
    log-densities are supplied.
    """

    def __init__(self, dim_out: int, policy: Optional[PolicyParams] = None, keep_points: bool = False):
        self.dim_out = dim_out
        self.sum_S = np.zeros(dim_out)
        self.sum_num = np.zeros(dim_out)
        self.sum_den = 0.0
        self.count = 0
        self.stage_records: List[StageRecord] = []
        self.keep_points = keep_points
        self._open: Optional[_OpenStage] = None
        self.risk_state: Optional[RiskAccumulator] = None
        if policy is not None:
            self.open_stage(policy)

    def open_stage(self, policy: PolicyParams):
        if self._open is not None and self._open.size > 0:
            self.stage_records.append(self._open.freeze())
        self._open = _OpenStage(len(self.stage_records) + 1, policy, self.dim_out, self.keep_points)

    def close_stage(self):
        if self._open is not None and self._open.size > 0:
            self.stage_records.append(self._open.freeze())
        self._open = None

    @property
    def current_policy(self) -> Optional[PolicyParams]:
        return None if self._open is None else self._open.policy

    def stages(self) -> List[StageRecord]:
        """Closed stages plus the open one if it holds any points."""
        out = list(self.stage_records)
        if self._open is not None and self._open.size > 0:
            out.append(self._open.freeze())
        return out

    def add_batch(self, x, log_q, integrand_values, log_target=None) -> "AisState":
        """Advance by a batch of points generated by the open stage's policy."""
        if self._open is None:
            raise AisError("no open stage; call open_stage first")
        log_q = np.atleast_1d(np.asarray(log_q, dtype=float))
        vals = np.asarray(integrand_values, dtype=float).reshape(log_q.shape[0], -1)
        if vals.shape[1] != self.dim_out:
            raise AisError(f"integrand returned {vals.shape[1]} values, expected {self.dim_out}")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(vals), axis=1))[0])
            raise AisError(f"non-finite integrand value at point {np.atleast_2d(x)[bad].tolist()}")
        q = np.exp(log_q)[:, None]
        ratio = vals / q
        st = self._open
        self.sum_S = seq_add(self.sum_S, ratio)
        st.integrand_sum = seq_add(st.integrand_sum, ratio)
        st.integrand_sq_sum = seq_add(st.integrand_sq_sum, ratio * ratio)
        if log_target is not None:
            w = np.exp(np.asarray(log_target, dtype=float) - log_q)
            num = vals * w[:, None]
            self.sum_num = seq_add(self.sum_num, num)
            self.sum_den = float(seq_add(self.sum_den, w))
            st.numerator_sum = seq_add(st.numerator_sum, num)
            st.denominator_sum = float(seq_add(st.denominator_sum, w))
            st.weight_sq_sum = float(seq_add(st.weight_sq_sum, w * w))
        if st.points is not None:
            st.points.append(np.atleast_2d(np.asarray(x, dtype=float)).copy())
        st.size += log_q.shape[0]
        self.count += log_q.shape[0]
        return self

    def copy(self) -> "AisState":
        new = AisState.__new__(AisState)
        new.dim_out = self.dim_out
        new.sum_S = self.sum_S.copy()
        new.sum_num = self.sum_num.copy()
        new.sum_den = self.sum_den
        new.count = self.count
        new.stage_records = list(self.stage_records)
        new.keep_points = self.keep_points
        new.risk_state = None
        new._open = None
        if self._open is not None:
            new._open = _OpenStage(self._open.index, self._open.policy, self.dim_out, False)
            o = self._open
            new._open.size = o.size
            new._open.integrand_sum = o.integrand_sum.copy()
            new._open.integrand_sq_sum = o.integrand_sq_sum.copy()
            new._open.numerator_sum = o.numerator_sum.copy()
            new._open.denominator_sum = o.denominator_sum
            new._open.weight_sq_sum = o.weight_sq_sum
            if o.points is not None:
                new._open.points = list(o.points)
        return new


def step_sample(state: AisState, x, log_q: float, integrand_value, log_target: Optional[float] = None) -> AisState:
    """Add one point: ``S_j = S_{j-1} + phi(x_j)/q_{j-1}(x_j)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lt = None if log_target is None else np.atleast_1d(float(log_target))
    return state.add_batch(x, np.atleast_1d(float(log_q)), np.atleast_2d(integrand_value), lt)


def estimate_unnormalized(state: AisState) -> np.ndarray:
    """``S_j / j``: unbiased for the integral of the integrand."""
    if state.count < 1:
        raise AisError("no samples yet")
    return state.sum_S / state.count


def estimate_unnormalized_target(state: AisState) -> np.ndarray:
    """``sum phi pi_u / q / j``: the unnormalized estimate of ``int phi pi_u``."""
    if state.count < 1:
        raise AisError("no samples yet")
    return state.sum_num / state.count


def estimate_normalized(state: AisState) -> np.ndarray:
    """Self-normalized estimate ``sum(phi w) / sum(w)`` with ``w = pi_u/q``."""
    if not state.sum_den > 0:
        raise AisError("importance weights sum to zero: the policy misses the target mass")
    return state.sum_num / state.sum_den


@dataclass(frozen=True)
class StageWeights:
    alphas: np.ndarray


def stage_weights_from_stats(sizes: Sequence[int], stats: Sequence[float]) -> StageWeights:
    """Weights ``alpha_t = c / s_t`` scaled so that ``sum n_t alpha_t = N_T``.

    Each ``s_t`` is floored at ``1e-12 * n_t`` before inversion.
    """
    n = np.asarray(sizes, dtype=float)
    s = np.maximum(np.asarray(stats, dtype=float), STAGE_STAT_FLOOR * n)
    if n.size == 0:
        raise ValueError("need at least one stage")
    inv = 1.0 / s
    c = n.sum() / np.dot(n, inv)
    return StageWeights(c * inv)


def compute_stage_weights(stages: Sequence[StageRecord], norm_const: Optional[float] = None) -> StageWeights:
    """Inverse weight-variance stage weights.

    ``pi`` is only known up to a constant, so the normalizing constant is
    estimated by ``sum w / N_T`` over all stages unless given.
    """
    if not stages:
        raise ValueError("need at least one stage")
    sizes = [st.size for st in stages]
    if norm_const is None:
        norm_const = sum(st.denominator_sum for st in stages) / sum(sizes)
    stats = [st.weight_var_stat(norm_const) for st in stages]
    return stage_weights_from_stats(sizes, stats)


def estimate_weighted(state_or_stages, weights: Optional[StageWeights] = None) -> np.ndarray:
    """Weighted normalized estimate over stages.

    ``sum_t alpha_t num_t / sum_t alpha_t den_t``; the ``N_T^{-1}`` factors
    cancel. Computes the default weights when none are given.
    """
    stages = state_or_stages.stages() if isinstance(state_or_stages, AisState) else list(state_or_stages)
    if weights is None:
        weights = compute_stage_weights(stages)
    alphas = np.asarray(weights.alphas, dtype=float)
    if alphas.shape[0] != len(stages):
        raise AisError("stage weights do not match the number of stages")
    num = sum(a * st.numerator_sum for a, st in zip(alphas, stages))
    den = sum(a * st.denominator_sum for a, st in zip(alphas, stages))
    if not den > 0:
        raise AisError("weighted importance weights sum to zero")
    return num / den


@dataclass
class TraceEntry:
    budget: int
    state: AisState
    policy: PolicyParams
    warnings: List[str] = field(default_factory=list)


@dataclass
class AisTrace:
    entries: List[TraceEntry]
    final_state: AisState
    final_policy: PolicyParams
    warnings: List[str]

    def budgets(self) -> List[int]:
        return [e.budget for e in self.entries]

    def at(self, budget: int) -> TraceEntry:
        for e in self.entries:
            if e.budget == budget:
                return e
        raise KeyError(budget)


Integrand = Callable[[np.ndarray], np.ndarray]


def _eval_integrand(integrand: Integrand, x: np.ndarray) -> np.ndarray:
    return np.asarray(integrand(x), dtype=float).reshape(x.shape[0], -1)


def _record_points(alloc: AllocationPolicy, record_every, record_budgets) -> List[int]:
    total = alloc.total
    if record_budgets is not None:
        pts = sorted({int(b) for b in record_budgets if 0 < int(b) <= total})
    elif record_every:
        pts = list(range(int(record_every), total + 1, int(record_every)))
    else:
        pts = alloc.boundaries
    return pts


def _output_dim(integrand: Integrand, q0: PolicyParams) -> int:
    probe = _eval_integrand(integrand, q0.location[None, :])
    return probe.shape[1]


def run_ais(
    integrand: Integrand,
    target: Optional[TargetSpec],
    q0: PolicyParams,
    alloc: AllocationPolicy,
    updater: Optional[PolicyUpdater],
    rng: np.random.Generator,
    record_every: Optional[int] = None,
    record_budgets: Optional[Sequence[int]] = None,
    keep_points: bool = False,
) -> AisTrace:
    """Run AIS stage by stage.

    At stage ``t``: draw ``n_t`` points from ``q_{t-1}``, update the running
    sums, then refresh the policy from everything accumulated so far. The
    trace holds state snapshots at stage boundaries by default, or at the
    requested budgets (which may fall inside a stage).

    ``target`` supplies ``log pi_u`` for normalized estimates and for the
    updater's weights; with ``target=None`` only the unnormalized sum is kept
    and the updater must be the identity.
    """
    updater = updater or IdentityUpdater()
    if target is None and not isinstance(updater, IdentityUpdater):
        raise AisError("adaptive updates need a target density")
    p = _output_dim(integrand, q0)
    state = AisState(p, keep_points=keep_points)
    acc = updater.new_accumulator(q0.dim)
    state.risk_state = acc
    records = _record_points(alloc, record_every, record_budgets)
    rec_i = 0
    entries: List[TraceEntry] = []
    all_warnings: List[str] = []
    policy = q0
    for t, n_t in enumerate(alloc.stage_sizes, start=1):
        state.open_stage(policy)
        drawn = 0
        while drawn < n_t:
            # split the stage at any recorded budget falling inside it
            stop = n_t
            if rec_i < len(records) and records[rec_i] < state.count + (n_t - drawn):
                stop = drawn + (records[rec_i] - state.count)
            k = stop - drawn
            x = policy.sample(rng, k)
            lq = policy.log_pdf(x)
            vals = _eval_integrand(integrand, x)
            lt = target(x) if target is not None else None
            state.add_batch(x, lq, vals, lt)
            updater.accumulate(acc, x, lq, lt, vals)
            drawn = stop
            if rec_i < len(records) and state.count == records[rec_i] and drawn < n_t:
                entries.append(TraceEntry(state.count, state.copy(), policy, []))
                rec_i += 1
        new_policy, warns = updater.update(acc, policy)
        if warns:
            all_warnings.extend(f"stage{t}:{w}" for w in warns)
        if rec_i < len(records) and state.count == records[rec_i]:
            snap = state.copy()
            snap.close_stage()
            entries.append(TraceEntry(state.count, snap, new_policy, list(warns)))
            rec_i += 1
        policy = new_policy
    state.close_stage()
    return AisTrace(entries, state, policy, all_warnings)


def run_ais_sample_scale(
    integrand: Integrand,
    target: Optional[TargetSpec],
    q0: PolicyParams,
    alloc: AllocationPolicy,
    updater: Optional[PolicyUpdater],
    rng: np.random.Generator,
) -> AisTrace:
    """Run AIS one point at a time; the policy changes only when ``j`` is a
    stage boundary ``N_t``. The trace records the state at every boundary."""
    updater = updater or IdentityUpdater()
    p = _output_dim(integrand, q0)
    state = AisState(p, policy=q0)
    acc = updater.new_accumulator(q0.dim)
    state.risk_state = acc
    boundaries = set(alloc.boundaries)
    policy = q0
    entries: List[TraceEntry] = []
    warnings: List[str] = []
    for j in range(1, alloc.total + 1):
        x = policy.sample(rng, 1)
        lq = policy.log_pdf(x)
        vals = _eval_integrand(integrand, x)
        lt = target(x) if target is not None else None
        step_sample(state, x[0], lq[0], vals[0], None if lt is None else lt[0])
        updater.accumulate(acc, x, lq, lt, vals)
        if j in boundaries:
            policy, warns = updater.update(acc, policy)
            warnings.extend(warns)
            state.open_stage(policy)
            snap = state.copy()
            snap.close_stage()
            entries.append(TraceEntry(j, snap, policy, list(warns)))
    state.close_stage()
    return AisTrace(entries, state, policy, warnings)
