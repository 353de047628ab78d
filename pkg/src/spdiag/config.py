"""Experiment configuration files (YAML, or JSON as an alternative encoding)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .comparators import CvScheme
from .dataset import ColumnRoles, Dataset, load_csv, load_grid_csv, load_meuse, load_meuse_grid
from .diagnostics import DiagnosticsConfig
from .errors import ConfigError
from .models import ModelSpec

_TOP_KEYS = {"dataset", "grid", "models", "diagnostics", "importance", "cv", "output", "plots", "seed"}


@dataclass
class ImportanceConfig:
    features: list[str] = field(default_factory=list)
    groups: dict[str, list[str]] = field(default_factory=dict)
    n_components: int = 2

    @classmethod
    def from_dict(cls, obj) -> "ImportanceConfig":
        obj = obj or {}
        unknown = set(obj) - {"features", "groups", "n_components"}
        if unknown:
            raise ConfigError(f"unknown importance keys: {sorted(unknown)}")
        cfg = cls(list(obj.get("features", [])), {k: list(v) for k, v in (obj.get("groups") or {}).items()},
                  int(obj.get("n_components", 2)))
        if cfg.n_components < 1:
            raise ConfigError("n_components must be at least 1")
        return cfg


@dataclass
class PlotConfig:
    enabled: bool = True
    sqrt_axis: bool = True
    histogram_bin_width: float | None = None

    @classmethod
    def from_dict(cls, obj) -> "PlotConfig":
        obj = obj or {}
        unknown = set(obj) - {"enabled", "sqrt_axis", "histogram_bin_width"}
        if unknown:
            raise ConfigError(f"unknown plot keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class ExperimentConfig:
    dataset: dict
    models: list[ModelSpec]
    diagnostics: DiagnosticsConfig
    importance: ImportanceConfig
    cv: list[CvScheme]
    output: Path
    plots: PlotConfig
    grid: dict | None = None
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False)

    def load_dataset(self) -> Dataset:
        spec = dict(self.dataset)
        builtin = spec.pop("builtin", None)
        if builtin:
            if builtin != "meuse":
                raise ConfigError(f"unknown built-in dataset {builtin!r}")
            return load_meuse()
        path = spec.pop("path", None)
        if path is None:
            raise ConfigError("dataset needs either 'builtin' or 'path'")
        return load_csv(self._resolve(path), ColumnRoles.from_dict(spec))

    def load_grid(self):
        if not self.grid:
            return None
        grid = {"path": self.grid} if isinstance(self.grid, str) else dict(self.grid)
        if grid.get("builtin") == "meuse":
            try:
                return load_meuse_grid()
            except FileNotFoundError as exc:
                raise ConfigError(str(exc)) from None
        if "path" not in grid:
            raise ConfigError("grid needs either 'builtin' or 'path'")
        path = self._resolve(grid["path"])
        if not path.exists():
            raise ConfigError(f"prediction grid file not found: {path}")
        return load_grid_csv(path, grid.get("x", "x"), grid.get("y", "y"))

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def config_hash(self) -> str:
        # the output location does not affect results
        body = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(body, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            obj = json.loads(text)
        else:
            obj = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return obj


def parse_config(obj: dict, base_dir=".", seed: int | None = None, reps: int | None = None,
                 out: str | None = None) -> ExperimentConfig:
    """Validate a raw config mapping; command-line overrides win over file values."""
    obj = dict(obj)
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    if "dataset" not in obj:
        raise ConfigError("config needs a 'dataset' section")
    if seed is not None:
        obj["seed"] = seed
    master = int(obj.get("seed", 0))
    diag = dict(obj.get("diagnostics") or {})
    diag.setdefault("seed", master)
    if seed is not None:
        diag["seed"] = seed
    if reps is not None:
        diag["n_reps"] = reps
    obj["diagnostics"] = diag
    try:
        models = [ModelSpec.from_dict(m if isinstance(m, dict) else {"kind": m}) for m in obj.get("models", [])]
        schemes = []
        for c in obj.get("cv") or []:
            c = {"kind": c} if isinstance(c, str) else dict(c)
            c.setdefault("seed", master)
            schemes.append(CvScheme.from_dict(c))
        obj["cv"] = [{"kind": s.kind, "k": s.k, "repetitions": s.repetitions, "seed": s.seed} for s in schemes]
        diagnostics = DiagnosticsConfig.from_dict(diag)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config entry: {exc}") from None
    labels = [m.label for m in models]
    if len(set(labels)) != len(labels):
        raise ConfigError("model labels must be unique; set 'name' to disambiguate")
    if out is not None:
        obj["output"] = str(Path(out).resolve())
    base = Path(base_dir)
    output = Path(obj.get("output", "spdiag_out"))
    return ExperimentConfig(
        dataset=dict(obj["dataset"]),
        models=models,
        diagnostics=diagnostics,
        importance=ImportanceConfig.from_dict(obj.get("importance")),
        cv=schemes,
        output=output if output.is_absolute() else base / output,
        plots=PlotConfig.from_dict(obj.get("plots")),
        grid=obj.get("grid"),
        base_dir=base,
        raw=obj,
    )


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(read_config_file(path), Path(path).resolve().parent, **overrides)
