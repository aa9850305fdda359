"""Experiment configuration: one JSON file, CLI flags override fields one-for-one."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

BETA_CAP = 0.999


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _floats(values) -> list:
    return [float(v) for v in values]


@dataclass(frozen=True)
class ExperimentConfig:
    betas: list = field(default_factory=lambda: [0.0, 0.3, 0.6, 0.9])
    n_trunc: int = 680
    x_max: float = 420.0
    tol: float = 1e-10
    max_iter: int = 500
    a_grid: list = field(default_factory=lambda: [10.0, 25.0, 50.0, 100.0, 200.0])
    x_grid: list = field(default_factory=lambda: [25.0, 40.0, 60.0, 90.0, 130.0, 160.0, 200.0])
    m_grid: list = field(default_factory=lambda: [1.0 + k * 0.001 for k in range(11)])
    poisson_a: list = field(default_factory=lambda: [25.0, 50.0, 100.0, 200.0])
    poisson_dps: int = 50
    compare_i_max: int = 150
    outputs: str = "out"
    workers: int = 1

    def __post_init__(self):
        for name in ("betas", "a_grid", "x_grid", "m_grid", "poisson_a"):
            object.__setattr__(self, name, _floats(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if not self.betas:
            bad("betas", "empty list")
        for b in self.betas:
            if not (0.0 <= b <= BETA_CAP) or math.isnan(b):
                bad("betas", f"{b} outside [0, {BETA_CAP}]")
        if not (self.x_max > 10):
            bad("x_max", "must exceed 10")
        if self.n_trunc < 2:
            bad("n_trunc", "must be at least 2")
        if not (0 < self.tol < 1):
            bad("tol", "must lie in (0, 1)")
        if self.max_iter < 1:
            bad("max_iter", "must be positive")
        if self.workers < 1:
            bad("workers", "must be positive")
        for name in ("a_grid", "poisson_a"):
            grid = getattr(self, name)
            if not grid:
                bad(name, "empty grid")
            if any(not (0 < a <= self.x_max) for a in grid):
                bad(name, f"values must lie in (0, x_max={self.x_max:g}]")
        if not self.x_grid:
            bad("x_grid", "empty grid")
        if any(not (1 <= x <= self.x_max) for x in self.x_grid):
            bad("x_grid", f"values must lie in [1, x_max={self.x_max:g}]")
        if not self.m_grid:
            bad("m_grid", "empty grid")
        if any(not (1.0 <= m <= 1.01 + 1e-12) for m in self.m_grid):
            bad("m_grid", "values must lie in [1, 1.01]")
        if self.poisson_dps < 15:
            bad("poisson_dps", "must be at least 15")
        if self.compare_i_max < 1:
            bad("compare_i_max", "must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        return cls.from_dict(data)

    def override(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """Short hash over every field except the output directory and worker count."""
        d = asdict(self)
        d.pop("outputs")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
