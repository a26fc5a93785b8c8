"""Run configuration documents (YAML; JSON is accepted as a subset)."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import LieSwitchError


class ConfigError(LieSwitchError, ValueError):
    """Unparseable or invalid configuration; the message names the line or field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class Tolerances(_Strict):
    rank: float = Field(1e-9, gt=0)
    split: float = Field(1e-9, gt=0)
    step: float = Field(1e-3, gt=0)
    fit_window: float = Field(0.5, gt=0, le=1)


class SignalSpec(_Strict):
    seed: int = 0
    switch_rate: float = Field(1.0, ge=0)
    horizon: float = Field(10.0, gt=0)
    count: int = Field(200, ge=1)
    x0: Optional[list[float]] = None


class EntropySpec(_Strict):
    center: Optional[list[float]] = None
    half_widths: Optional[list[float]] = None
    grid_resolution: Union[int, list[int]] = 7
    epsilons: list[float] = Field(default_factory=lambda: [0.4, 0.2])
    horizons: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    flow: Literal["levi", "full"] = "levi"
    signals: int = Field(3, ge=1)
    step: Optional[float] = Field(None, gt=0)
    time_samples: int = Field(400, ge=2)

    @field_validator("epsilons", "horizons")
    @classmethod
    def _positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("values must be positive")
        return v


class RunConfig(_Strict):
    modes: list[list[list[float]]]
    tolerances: Tolerances = Field(default_factory=Tolerances)
    signal: SignalSpec = Field(default_factory=SignalSpec)
    entropy: EntropySpec = Field(default_factory=EntropySpec)
    outputs: str = "out"
    workers: int = Field(1, ge=1)

    @field_validator("modes")
    @classmethod
    def _square(cls, modes):
        if not modes:
            raise ValueError("at least one mode matrix is required")
        n = len(modes[0])
        if n == 0:
            raise ValueError("mode 1 is empty")
        for p, A in enumerate(modes):
            if len(A) != n:
                raise ValueError(f"mode {p + 1} has {len(A)} rows, expected {n}")
            for i, row in enumerate(A):
                if len(row) != n:
                    raise ValueError(f"mode {p + 1} row {i + 1} has {len(row)} entries, expected {n}")
        return modes

    @model_validator(mode="after")
    def _fill_defaults(self):
        n = self.n
        e = self.entropy
        if e.center is None:
            e.center = [0.0] * n
        if e.half_widths is None:
            e.half_widths = [0.5] * n
        if len(e.center) != n or len(e.half_widths) != n:
            raise ValueError(f"entropy box must have dimension {n}")
        if any(w <= 0 for w in e.half_widths):
            raise ValueError("entropy.half_widths must be positive")
        res = e.grid_resolution
        if isinstance(res, list) and len(res) != n:
            raise ValueError(f"entropy.grid_resolution needs {n} entries")
        if min(res if isinstance(res, list) else [res]) < 2:
            raise ValueError("entropy.grid_resolution must be >= 2")
        if len(e.horizons) < 3 or len(e.epsilons) < 2:
            raise ValueError("entropy needs at least 3 horizons and 2 epsilons")
        if self.signal.x0 is not None and len(self.signal.x0) != n:
            raise ValueError(f"signal.x0 must have length {n}")
        return self

    @property
    def n(self) -> int:
        return len(self.modes[0])

    def matrices(self) -> list[np.ndarray]:
        return [np.array(A, dtype=float) for A in self.modes]

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML syntax error at {where}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config" in data and "modes" not in data:
        data = data["config"]  # a report file: re-run its echoed config
    return parse_config(data)
