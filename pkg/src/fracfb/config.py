"""Run configuration: one JSON document, unknown fields rejected."""
from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import Position, ProblemConfig
from .dynamics import DYNAMICS_REGISTRY, G_FUNCTIONS
from .envelope import ENUMERATION_LIMIT


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


class StartSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: float = 0.0
    w0: list[float] | float = 0.0
    caputo: list[list[float]] | None = Field(
        default=None, description="per-cell Caputo derivative of the history on a uniform grid of [0, t]")

    def position(self, cfg: ProblemConfig) -> Position:
        w0 = np.atleast_1d(np.asarray(self.w0, dtype=float))
        if w0.size != cfg.n:
            raise ConfigError(f"start w0 has {w0.size} components, problem has {cfg.n}")
        if not 0.0 <= self.t <= cfg.T:
            raise ConfigError(f"start time {self.t} outside [0, {cfg.T}]")
        if self.caputo is None:
            return Position.constant(cfg, self.t, w0)
        return Position.from_caputo(cfg, self.t, w0, np.asarray(self.caputo, dtype=float))


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: Literal[tuple(DYNAMICS_REGISTRY)] = "example-g"
    alpha: float = 0.5
    T: float = 1.0
    g: str = "one"
    controls: list[float] = [-1.0, 0.0, 1.0]
    starts: list[StartSpec] = [StartSpec()]
    strategies: list[Literal["example", "envelope", "smooth"]] = ["example"]
    diameters: list[float] = [1 / 16, 1 / 64, 1 / 256]
    steps_per_piece: int = Field(8, ge=1)
    sensitivity_m: int = Field(1024, ge=8)
    strategy_m: int = Field(128, ge=8)
    tol: float | None = Field(None, gt=0)
    delta: float = Field(1e-3, gt=0, description="finite-difference step as a fraction of T - t")
    direction: list[float] = [0.0]
    bruteforce_pieces: int = Field(4, ge=1)
    out: str = "out"

    @field_validator("alpha")
    @classmethod
    def _alpha(cls, v: float) -> float:
        if not (0.0 < v < 1.0):
            raise ValueError(f"alpha out of (0,1): {v}")
        return v

    @field_validator("T")
    @classmethod
    def _horizon(cls, v: float) -> float:
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError(f"T must be positive and finite: {v}")
        return v

    @field_validator("g")
    @classmethod
    def _g(cls, v: str) -> str:
        if v not in G_FUNCTIONS:
            raise ValueError(f"unknown g function {v!r}; choose from {sorted(G_FUNCTIONS)}")
        return v

    @field_validator("diameters")
    @classmethod
    def _diams(cls, v: list[float]) -> list[float]:
        if not v or any(d <= 0 for d in v):
            raise ValueError("diameters must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("diameters must be decreasing")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.problem != "example-g" and "example" in self.strategies:
            raise ValueError("the 'example' strategy only applies to the example-g problem")
        if len(self.controls) ** self.bruteforce_pieces > ENUMERATION_LIMIT:
            raise ValueError(f"{len(self.controls)}^{self.bruteforce_pieces} controls exceed the enumeration limit")
        return self

    def problem_instance(self):
        return DYNAMICS_REGISTRY[self.problem](self.alpha, self.T, self.g, tuple(self.controls))

    def positions(self):
        pr = self.problem_instance()
        return [s.position(pr.cfg) for s in self.starts]


def _line_of(text: str, loc: tuple) -> int | None:
    for part in reversed(loc):
        if isinstance(part, str):
            match = re.search(rf'"{re.escape(part)}"\s*:', text)
            if match:
                return text.count("\n", 0, match.start()) + 1
    return None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate; errors name the field and (when known) the line."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            field = ".".join(str(x) for x in err["loc"]) or "<root>"
            line = _line_of(text, err["loc"])
            where = f"{source}:{line}" if line else source
            msg = err["msg"].removeprefix("Value error, ")
            lines.append(f"{where}: field '{field}': {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
