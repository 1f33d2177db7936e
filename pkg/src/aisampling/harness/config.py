"""Experiment configuration and presets.

The JSON config mirrors :class:`ExperimentConfig` field for field::

    {
      "dim": [2, 4],
      "target": {"mu_star": 5.0, "sigma_star": 1.0},
      "family": {"name": "student_t", "nu": 3.0},
      "sigma0": 5.0,
      "q0_location": 0.0,
      "updater": {"kind": "moments", "regularization": ["sig_0"]},
      "alloc": [[50, 400]],
      "methods": ["ais", "wais", "amh", "oracle"],
      "replicates": 50,
      "base_seed": 0,
      "record_budgets": null,
      "output_dir": "out"
    }

Scalars given for ``mu_star`` / ``q0_location`` are broadcast to every
coordinate. ``record_budgets: null`` records at every stage boundary of every
schedule.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..densities import Family, PolicyParams, TargetSpec
from ..policy_update import RegMode, RegularizationMode, make_updater

METHODS = ("ais", "wais", "ais_unnormalized", "amh", "oracle")


class ConfigError(ValueError):
    pass


@dataclass
class TargetConfig:
    mu_star: Union[float, List[float]] = 5.0
    sigma_star: float = 1.0


@dataclass
class FamilyConfig:
    name: str = "student_t"
    nu: float = 3.0


@dataclass
class UpdaterConfig:
    kind: str = "moments"
    regularization: List[str] = field(default_factory=lambda: ["sig_0"])


@dataclass
class AmhSettings:
    i0: int = 1000
    epsilon: float = 0.05


@dataclass
class ExperimentConfig:
    dim: List[int] = field(default_factory=lambda: [2])
    target: TargetConfig = field(default_factory=TargetConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    sigma0: float = 5.0
    q0_location: Union[float, List[float]] = 0.0
    updater: UpdaterConfig = field(default_factory=UpdaterConfig)
    alloc: List[List[int]] = field(default_factory=lambda: [[50, 400]])
    methods: List[str] = field(default_factory=lambda: ["ais", "wais", "amh", "oracle"])
    replicates: int = 50
    base_seed: int = 0
    record_budgets: Optional[List[int]] = None
    output_dir: str = "out"
    amh: AmhSettings = field(default_factory=AmhSettings)

    def __post_init__(self):
        if isinstance(self.dim, int):
            self.dim = [self.dim]
        if isinstance(self.target, dict):
            self.target = TargetConfig(**self.target)
        if isinstance(self.family, dict):
            self.family = FamilyConfig(**self.family)
        elif isinstance(self.family, str):
            self.family = FamilyConfig(name=self.family)
        if isinstance(self.updater, dict):
            self.updater = UpdaterConfig(**self.updater)
        elif isinstance(self.updater, str):
            self.updater = UpdaterConfig(kind=self.updater)
        if isinstance(self.amh, dict):
            self.amh = AmhSettings(**self.amh)
        self.alloc = [[int(t), int(n)] for t, n in self.alloc]
        self.validate()

    def validate(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.dim or any(d < 1 for d in self.dim):
            raise ConfigError("dim must list positive integers")
        if not self.alloc:
            raise ConfigError("alloc needs at least one (T, n_t) schedule")
        if any(t < 1 or n < 1 for t, n in self.alloc):
            raise ConfigError("every schedule needs T >= 1 and n_t >= 1")
        totals = {t * n for t, n in self.alloc}
        if len(totals) > 1:
            raise ConfigError(f"compared schedules must share the total budget, got {sorted(totals)}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")
        Family(self.family.name)
        for r in self.updater.regularization:
            RegMode(r)
        make_updater(self.updater.kind, RegularizationMode())
        if self.record_budgets is not None and any(b < 1 or b > self.total_budget for b in self.record_budgets):
            raise ConfigError("record_budgets must lie in [1, total budget]")

    @property
    def total_budget(self) -> int:
        t, n = self.alloc[0]
        return t * n

    def budgets(self) -> List[int]:
        if self.record_budgets is not None:
            return sorted(set(int(b) for b in self.record_budgets))
        out = set()
        for t, n in self.alloc:
            out.update(n * k for k in range(1, t + 1))
        return sorted(out)

    # problem construction -------------------------------------------------

    def _vector(self, value, d: int) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            return np.full(d, float(arr[0]))
        if arr.size != d:
            raise ConfigError(f"vector of length {arr.size} given for d={d}")
        return arr

    def mu_star(self, d: int) -> np.ndarray:
        return self._vector(self.target.mu_star, d)

    def target_spec(self, d: int) -> TargetSpec:
        return TargetSpec.gaussian(self.mu_star(d), self.target.sigma_star)

    def regularization(self, variant: str) -> RegularizationMode:
        nu = self.family.nu if Family(self.family.name) is Family.STUDENT_T else float("inf")
        return RegularizationMode(RegMode(variant), self.sigma0, nu)

    def initial_policy(self, d: int) -> PolicyParams:
        loc = self._vector(self.q0_location, d)
        reg = self.regularization("sig_0")
        fam = Family(self.family.name)
        return PolicyParams(fam, loc, reg.fixed_scale(d), self.family.nu)

    def oracle_policy(self, d: int) -> PolicyParams:
        return PolicyParams.gaussian(self.mu_star(d), self.target.sigma_star**2)

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**copy.deepcopy(data))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_config_dict(path))


def read_config_dict(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def preset(name: str) -> ExperimentConfig:
    """``desk``: N_T = 2e4, 50 replicates, d in {1, 2, 4}.
    ``full``: N_T = 1e5, 100 replicates, d in {2, 4, 8, 16}, n_t = 2e3."""
    if name == "desk":
        return ExperimentConfig(dim=[1, 2, 4], alloc=[[50, 400]], replicates=50)
    if name == "full":
        return ExperimentConfig(dim=[2, 4, 8, 16], alloc=[[50, 2000]], replicates=100)
    raise ConfigError(f"unknown preset {name!r} (expected 'desk' or 'full')")


def bench_grid(base: ExperimentConfig) -> dict:
    """Three sweeps over a base config: method comparison, allocation
    policies at equal budget, and covariance-regularization variants."""
    total = base.total_budget
    fig1 = copy.deepcopy(base)
    fig2 = copy.deepcopy(base)
    fig2.alloc = [[t, total // t] for t in (5, 20, 50) if total % t == 0]
    fig2.methods = [m for m in base.methods if m in ("ais", "wais")] or ["ais", "wais"]
    fig2.record_budgets = None
    fig3 = copy.deepcopy(base)
    fig3.updater = UpdaterConfig(kind="moments", regularization=["sig_1", "sig_1/2", "sig_0"])
    fig3.methods = [m for m in base.methods if m in ("ais", "wais")] or ["ais", "wais"]
    for cfg in (fig1, fig2, fig3):
        cfg.validate()
    return {"methods": fig1, "allocation": fig2, "variance": fig3}
