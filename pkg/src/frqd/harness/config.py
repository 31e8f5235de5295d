"""Experiment configuration: schema, file loading, and dotted-path overrides."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..comms import DEFAULT_STRATEGY, parse_strategy
from ..learning import ScheduleParams

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MdpSpec(_Section):
    kind: Literal["task_assignment", "file"] = "task_assignment"
    n: int = Field(10, ge=2)
    n_tasks: int = Field(6, ge=1)
    discount: float = Field(0.9, gt=0.0, lt=1.0)
    path: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0, description="cost seed; seeds.costs wins if both set")
    restart: Literal["exploring", "initial"] = "exploring"
    terminal_init: Literal["zero", "random"] = "zero"

    @model_validator(mode="after")
    def _path_for_file(self):
        if self.kind == "file" and not self.path:
            raise ValueError("mdp.kind='file' requires mdp.path")
        return self


class GraphSpec(_Section):
    kind: Literal["construct", "edge_list", "schedule"] = "construct"
    n: int = Field(10, ge=1)
    r: int = Field(7, ge=1)
    path: Optional[str] = None
    paths: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _sources(self):
        if self.kind == "edge_list" and not self.path:
            raise ValueError("graph.kind='edge_list' requires graph.path")
        if self.kind == "schedule" and not self.paths:
            raise ValueError("graph.kind='schedule' requires graph.paths")
        return self


class AttackSpec(_Section):
    strategy: str = DEFAULT_STRATEGY
    f: int = Field(1, ge=0)
    seed: Optional[int] = Field(None, ge=0, description="edge-selection seed; seeds.attack wins")

    @field_validator("strategy")
    @classmethod
    def _known(cls, v: str) -> str:
        parse_strategy(v)
        return v


class ScheduleSpec(_Section):
    """Step-size constants; ``a`` and ``b`` default to ``1/n``."""

    a: Optional[float] = Field(None, gt=0.0)
    b: Optional[float] = Field(None, gt=0.0)
    tau1: float = 1.0
    eps1: float = Field(1e-4, gt=0.0)
    eps2: float = Field(1e-4, ge=0.0)
    tau2: Optional[float] = None

    @model_validator(mode="after")
    def _valid(self):
        self.params(1)
        return self

    def params(self, n: int) -> ScheduleParams:
        a = self.a if self.a is not None else 1.0 / n
        b = self.b if self.b is not None else 1.0 / n
        if self.tau2 is not None:
            return ScheduleParams(a, b, self.tau1, self.tau2, self.eps1)
        return ScheduleParams.from_epsilons(a, b, self.tau1, self.eps1, self.eps2)


STREAMS = ("costs", "attack", "init", "trajectory")


class SeedSpec(_Section):
    master: int = Field(0, ge=0)
    costs: Optional[int] = Field(None, ge=0)
    attack: Optional[int] = Field(None, ge=0)
    init: Optional[int] = Field(None, ge=0)
    trajectory: Optional[int] = Field(None, ge=0)

    def stream(self, name: str) -> np.random.Generator:
        """Independent generator for a named randomness source.

        An explicit per-stream seed wins; otherwise the stream is split off
        the master seed, so changing one source leaves the others untouched.
        """
        explicit = getattr(self, name)
        if explicit is not None:
            return np.random.default_rng(explicit)
        return np.random.default_rng([self.master, STREAMS.index(name) + 1])


class OutputSpec(_Section):
    dir: str = "runs/default"
    report: bool = True
    trace: bool = True
    trace_stride: int = Field(1000, ge=1)
    plot: bool = True
    curve_points: int = Field(60, ge=2)
    track_pairs: list[tuple[int, int, int]] = Field(
        default_factory=lambda: [(1, 0, 1), (1, 0, 2)],
        description="(state label, i, j) entries recorded per agent for plotting")


class AssertionSpec(_Section):
    corruption_bound: bool = True
    filter_soundness: bool = True
    filter_symmetry: bool = True
    equivalence_check: bool = False
    equivalence_tol: float = Field(1e-12, gt=0.0)


class ExperimentConfig(_Section):
    mdp: MdpSpec = Field(default_factory=MdpSpec)
    graph: GraphSpec = Field(default_factory=GraphSpec)
    algorithm: Literal["frqd", "qd", "trim_baseline", "laplacian_reference"] = "frqd"
    attack: AttackSpec = Field(default_factory=AttackSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    horizon: int = Field(2_000_000, ge=1)
    min_visits: Optional[int] = Field(300, ge=1)
    stop_at_min_visits: bool = Field(
        True, description="end before the horizon once every non-terminal pair has min_visits")
    visit_checkpoints: list[int] = Field(default_factory=lambda: [30, 100, 300])
    oracle_tol: float = Field(1e-10, gt=0.0)
    seeds: SeedSpec = Field(default_factory=SeedSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    assertions: AssertionSpec = Field(default_factory=AssertionSpec)

    def stream(self, name: str) -> np.random.Generator:
        """RNG for one named source, honouring the per-section seed shortcuts."""
        if name == "costs" and self.seeds.costs is None and self.mdp.seed is not None:
            return np.random.default_rng(self.mdp.seed)
        if name == "attack" and self.seeds.attack is None and self.attack.seed is not None:
            return np.random.default_rng(self.attack.seed)
        return self.seeds.stream(name)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _error_path(err: ValidationError) -> tuple[str, str]:
    first = err.errors()[0]
    path = ".".join(str(p) for p in first["loc"])
    msg = first["msg"].removeprefix("Value error, ")
    return msg, path


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as err:
        msg, path = _error_path(err)
        raise ConfigError(msg, path) from None


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` assignments; values are read as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"cannot descend into non-table field", ".".join(parts[:-1]))
            node = child
        node[parts[-1]] = _coerce(raw.strip())
    return doc


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None


def load_config(path=None, overrides: Optional[list[str]] = None) -> ExperimentConfig:
    """Read a JSON/TOML config (or the defaults when ``path`` is None) and apply overrides.

    Relative file references inside the config resolve against its directory.
    """
    doc = read_config_file(path) if path is not None else {}
    if path is not None:
        base = Path(path).resolve().parent
        for section, key in (("mdp", "path"), ("graph", "path")):
            value = doc.get(section, {}).get(key)
            if value and not Path(value).is_absolute():
                doc[section][key] = str(base / value)
        paths = doc.get("graph", {}).get("paths")
        if paths:
            doc["graph"]["paths"] = [p if Path(p).is_absolute() else str(base / p) for p in paths]
    return parse_config(apply_overrides(doc, overrides or []))
