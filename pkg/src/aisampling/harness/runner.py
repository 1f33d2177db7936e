"""Replicate sweeps producing one result row per (run, budget)."""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..ais import AllocationPolicy, estimate_normalized, estimate_unnormalized_target, estimate_weighted, run_ais
from ..baselines import AmhConfig, adaptive_mh_run, oracle_is_run
from ..policy_update import make_updater
from .config import ExperimentConfig

log = logging.getLogger(__name__)

AIS_METHODS = ("ais", "wais", "ais_unnormalized")


@dataclass
class ResultRow:
    method: str
    variant: str
    dim: int
    replicate: int
    budget: int
    estimate: Tuple[float, ...]
    squared_error: float
    warnings: List[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(w.startswith("error") for w in self.warnings)


def stable_hash(*parts) -> int:
    """CRC32 of the ``|``-joined parts; stable across processes and runs."""
    return zlib.crc32("|".join(str(p) for p in parts).encode("utf-8"))


def run_seed(base_seed: int, replicate: int, *label) -> np.random.SeedSequence:
    """Seed for one run: ``base_seed + replicate`` mixed with a hash of the
    method/schedule/variant/dimension label."""
    return np.random.SeedSequence([int(base_seed) + int(replicate), stable_hash(*label)])


def schedule_label(t: int, n: int) -> str:
    return f"T={t},n={n}"


@dataclass(frozen=True)
class Task:
    dim: int
    group: str  # "ais", "amh" or "oracle"
    schedule: Tuple[int, int]
    variant: str
    replicate: int


def _rows_for(task: Task, methods, variant_label, budgets, estimates, mu_star, warnings):
    rows = []
    for method in methods:
        for b in budgets:
            est = estimates[method].get(b)
            if est is None:
                continue
            est = tuple(float(v) for v in est)
            se = float(np.sum((np.asarray(est) - mu_star) ** 2))
            rows.append(ResultRow(method, variant_label, task.dim, task.replicate, b, est, se, list(warnings)))
    return rows


def _error_rows(task, methods, variant_label, budgets, d, message):
    nan = tuple([math.nan] * d)
    return [
        ResultRow(m, variant_label, task.dim, task.replicate, b, nan, math.nan, [f"error:{message}"])
        for m in methods
        for b in budgets
    ]


def run_task(cfg: ExperimentConfig, task: Task) -> List[ResultRow]:
    d = task.dim
    budgets = cfg.budgets()
    mu_star = cfg.mu_star(d)
    target = cfg.target_spec(d)
    identity = np.eye(d)
    phi = lambda x: x  # noqa: E731
    if task.group == "ais":
        methods = [m for m in cfg.methods if m in AIS_METHODS]
        t, n = task.schedule
        label = f"{task.variant}|{schedule_label(t, n)}"
        seed = run_seed(cfg.base_seed, task.replicate, "ais", schedule_label(t, n), task.variant, d)
        try:
            updater = make_updater(cfg.updater.kind, cfg.regularization(task.variant))
            trace = run_ais(
                phi, target, cfg.initial_policy(d), AllocationPolicy.constant(t, n), updater,
                np.random.default_rng(seed), record_budgets=budgets,
            )
            est = {m: {} for m in methods}
            for entry in trace.entries:
                s = entry.state
                if "ais" in est:
                    est["ais"][entry.budget] = estimate_normalized(s)
                if "wais" in est:
                    est["wais"][entry.budget] = estimate_weighted(s)
                if "ais_unnormalized" in est:
                    est["ais_unnormalized"][entry.budget] = estimate_unnormalized_target(s)
            return _rows_for(task, methods, label, budgets, est, mu_star, trace.warnings)
        except Exception as exc:  # row-level failure, the sweep continues
            log.warning("run failed: %s: %s", task, exc)
            return _error_rows(task, methods, label, budgets, d, type(exc).__name__)
    if task.group == "amh":
        label = f"i0={cfg.amh.i0},eps={cfg.amh.epsilon}"
        seed = run_seed(cfg.base_seed, task.replicate, "amh", "", "", d)
        try:
            amh_cfg = AmhConfig(
                chain_length=max(budgets), seed=seed, i0=cfg.amh.i0, epsilon=cfg.amh.epsilon
            )
            res = adaptive_mh_run(target, amh_cfg, x0=cfg.initial_policy(d).location)
            est = {"amh": {b: res.running_mean[b - 1] for b in budgets}}
            return _rows_for(task, ["amh"], label, budgets, est, mu_star, [])
        except Exception as exc:
            log.warning("run failed: %s: %s", task, exc)
            return _error_rows(task, ["amh"], label, budgets, d, type(exc).__name__)
    if task.group == "oracle":
        label = f"sigma={cfg.target.sigma_star}"
        seed = run_seed(cfg.base_seed, task.replicate, "oracle", "", "", d)
        try:
            tr = oracle_is_run(cfg.oracle_policy(d), phi, target, max(budgets), np.random.default_rng(seed), budgets)
            est = {"oracle": dict(zip(tr.budgets, tr.estimates))}
            return _rows_for(task, ["oracle"], label, budgets, est, mu_star, [])
        except Exception as exc:
            log.warning("run failed: %s: %s", task, exc)
            return _error_rows(task, ["oracle"], label, budgets, d, type(exc).__name__)
    raise ValueError(f"unknown task group {task.group!r}")


def plan_tasks(cfg: ExperimentConfig) -> List[Task]:
    tasks = []
    want_ais = any(m in AIS_METHODS for m in cfg.methods)
    for d in cfg.dim:
        for r in range(cfg.replicates):
            if want_ais:
                for t, n in cfg.alloc:
                    for variant in cfg.updater.regularization:
                        tasks.append(Task(d, "ais", (t, n), variant, r))
            if "amh" in cfg.methods:
                tasks.append(Task(d, "amh", (0, 0), "", r))
            if "oracle" in cfg.methods:
                tasks.append(Task(d, "oracle", (0, 0), "", r))
    return tasks


def _run_task_star(args):
    cfg_dict, task = args
    return run_task(ExperimentConfig.from_dict(cfg_dict), task)


def sort_rows(rows: Iterable[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda r: (r.dim, r.method, r.variant, r.replicate, r.budget))


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> List[ResultRow]:
    """Run every method x schedule x variant x replicate of ``cfg``.

    Replicate ``r`` of every method draws from a stream seeded by
    ``base_seed + r`` (mixed with a label hash), so method comparisons are
    paired by replicate. Output order does not depend on ``threads``.
    """
    tasks = plan_tasks(cfg)
    rows: List[ResultRow] = []
    if threads <= 1:
        for task in tasks:
            rows.extend(run_task(cfg, task))
    else:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(_run_task_star, [(cfg_dict, t) for t in tasks], chunksize=4):
                rows.extend(chunk)
    return sort_rows(rows)


@dataclass(frozen=True)
class MseAggregate:
    method: str
    variant: str
    dim: int
    budget: int
    n: int
    mse: float

    @property
    def log10_mse(self) -> float:
        return math.log10(self.mse) if self.mse > 0 else -math.inf


def compute_mse(rows: Sequence[ResultRow], group_keys=("method", "variant", "dim", "budget")) -> List[MseAggregate]:
    """Mean squared error per group; failed rows are left out."""
    groups: Dict[tuple, List[float]] = {}
    for r in rows:
        key = tuple(getattr(r, k) for k in group_keys)
        groups.setdefault(key, [])
        if not r.failed:
            groups[key].append(r.squared_error)
    out = []
    for key, errs in groups.items():
        if not errs:
            raise ValueError(f"no usable rows in group {dict(zip(group_keys, key))}")
        fields = dict(zip(group_keys, key))
        out.append(
            MseAggregate(
                method=fields.get("method", ""),
                variant=fields.get("variant", ""),
                dim=fields.get("dim", 0),
                budget=fields.get("budget", 0),
                n=len(errs),
                mse=float(np.mean(errs)),
            )
        )
    return sorted(out, key=lambda a: (a.dim, a.method, a.variant, a.budget))
