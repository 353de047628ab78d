"""Point datasets, CSV ingestion and planar distance geometry.

Coordinates are projected planar coordinates in metres; every distance in
this package is Euclidean in the (x, y) plane, so results assume isotropy.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    ExhaustedBufferError,
    ParseError,
    SchemaError,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "null", "NULL"})


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Observation:
    location: Location
    response: float | str
    features: tuple[float, ...]
    group_id: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of point observations.

    Parameters
    ----------
    coords : (n, 2) array of planar coordinates in metres.
    X : (n, p) feature matrix, columns ordered as ``feature_names``.
    y : (n,) response; floats for regression, labels for classification.
    feature_names : names of the p feature columns.
    response_kind : ``"regression"`` or ``"classification"``.
    groups : optional (n,) integer group (field) ids.
    coord_names : names under which the coordinates appear in the schema,
        when they are also registered as features.
    """

    coords: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    response_kind: str = "regression"
    groups: np.ndarray | None = None
    coord_names: tuple[str, str] = ("x", "y")
    response_name: str = "y"

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(coords), -1)
        y = np.asarray(self.y)
        if self.response_kind == "regression":
            y = y.astype(float)
        elif self.response_kind != "classification":
            raise ConfigError(f"unknown response kind {self.response_kind!r}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.groups is not None:
            object.__setattr__(self, "groups", np.asarray(self.groups, dtype=int))
        for arr in (coords, X, y):
            arr.setflags(write=False)

        n = len(coords)
        if coords.shape != (n, 2):
            raise SchemaError("coords must have shape (n, 2)")
        if n < 2:
            raise SchemaError(f"a dataset needs at least 2 observations, got {n}")
        if X.shape != (n, len(self.feature_names)):
            raise SchemaError(
                f"feature matrix shape {X.shape} does not match "
                f"{n} observations x {len(self.feature_names)} features"
            )
        if len(y) != n:
            raise SchemaError("response length differs from number of observations")
        if not np.all(np.isfinite(coords)):
            raise ParseError("coordinates must be finite")
        if self.response_kind == "classification" and len(np.unique(y)) < 2:
            raise SchemaError("classification data needs at least 2 distinct labels")
        if self.groups is not None and len(self.groups) != n:
            raise SchemaError("group ids must cover every observation")
        if self.has_duplicate_locations:
            log.warning("dataset contains duplicate locations")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @cached_property
    def labels(self) -> tuple:
        if self.response_kind != "classification":
            return ()
        return tuple(np.unique(self.y).tolist())

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.coords)

    @cached_property
    def has_duplicate_locations(self) -> bool:
        return len(np.unique(self.coords, axis=0)) < self.n

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def coord_feature_columns(self) -> dict[str, int]:
        """Map 'x'/'y' axis -> feature column, for coordinates registered as features."""
        out = {}
        for axis, name in enumerate(self.coord_names):
            if name in self.feature_names:
                out[name] = self.feature_names.index(name)
        return out

    def observation(self, i: int) -> Observation:
        g = None if self.groups is None else int(self.groups[i])
        resp = self.y[i].item() if hasattr(self.y[i], "item") else self.y[i]
        return Observation(Location(*self.coords[i]), resp, tuple(self.X[i]), g)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            coords=self.coords[idx],
            X=self.X[idx],
            y=self.y[idx],
            feature_names=self.feature_names,
            response_kind=self.response_kind,
            groups=None if self.groups is None else self.groups[idx],
            coord_names=self.coord_names,
            response_name=self.response_name,
        )


@dataclass
class DistanceSummary:
    """Summary and histogram of a set of distances (metres)."""

    n: int
    mean: float
    min: float
    median: float
    q1: float
    q3: float
    max: float
    edges: list[float] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)

    @property
    def quartiles(self) -> tuple[float, float]:
        return (self.q1, self.q3)

    @classmethod
    def from_distances(cls, d, bin_width: float | None = None, n_bins: int = 30):
        d = np.asarray(d, dtype=float).ravel()
        if d.size == 0:
            raise ValueError("no distances to summarise")
        q1, med, q3 = np.quantile(d, [0.25, 0.5, 0.75])
        hi = float(d.max())
        if bin_width is not None:
            if bin_width <= 0:
                raise ConfigError("histogram bin width must be positive")
            nb = max(1, math.ceil(hi / bin_width))
            if nb * bin_width <= hi:
                nb += 1
            edges = np.arange(nb + 1) * bin_width
        else:
            edges = np.linspace(0.0, hi if hi > 0 else 1.0, n_bins + 1)
        counts, _ = np.histogram(d, bins=edges)
        return cls(
            n=int(d.size),
            mean=float(d.mean()),
            min=float(d.min()),
            median=float(med),
            q1=float(q1),
            q3=float(q3),
            max=hi,
            edges=[float(e) for e in edges],
            counts=[int(c) for c in counts],
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "min": self.min,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "max": self.max,
            "histogram": {"edges": self.edges, "counts": self.counts},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, obj: dict) -> "DistanceSummary":
        h = obj.get("histogram", {})
        return cls(
            n=obj["n"], mean=obj["mean"], min=obj["min"], median=obj["median"],
            q1=obj["q1"], q3=obj["q3"], max=obj["max"],
            edges=list(h.get("edges", [])), counts=list(h.get("counts", [])),
        )


@dataclass
class ColumnRoles:
    """Which CSV columns play which role."""

    response: str
    features: Sequence[str] = ()
    x: str = "x"
    y: str = "y"
    group: str | None = None
    kind: str = "regression"
    coords_as_features: bool = True

    @classmethod
    def from_dict(cls, obj: dict) -> "ColumnRoles":
        allowed = {"response", "features", "x", "y", "group", "kind", "coords_as_features"}
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown column-role keys: {sorted(unknown)}")
        if "response" not in obj:
            raise ConfigError("column roles need a 'response' entry")
        return cls(**obj)


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return header, rows


def _to_float(cell, row, column):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(
            f"row {row}: column {column!r} has non-numeric value {cell!r}",
            row=row, column=column,
        ) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}: column {column!r} is not finite", row=row, column=column)
    return v


def load_csv(path, roles: ColumnRoles | dict) -> Dataset:
    """Read a comma-separated point file with a header row.

    Rows with a missing value in any used column are dropped (and logged).
    Row numbers in errors are 1-based data rows, the header not counted.
    """
    if isinstance(roles, dict):
        roles = ColumnRoles.from_dict(roles)
    header, rows = _read_rows(path)
    features = list(roles.features)
    if roles.coords_as_features:
        features = [roles.x, roles.y] + [f for f in features if f not in (roles.x, roles.y)]
    used = [roles.x, roles.y, roles.response] + features
    if roles.group:
        used.append(roles.group)
    missing = [c for c in dict.fromkeys(used) if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")
    col = {name: header.index(name) for name in used}

    coords, X, y, groups = [], [], [], []
    dropped = 0
    for k, row in enumerate(rows, start=1):
        if len(row) < len(header):
            raise ParseError(f"row {k}: expected {len(header)} fields, got {len(row)}", row=k)
        cells = {name: row[col[name]].strip() for name in used}
        if any(v in MISSING_TOKENS for v in cells.values()):
            dropped += 1
            continue
        coords.append((_to_float(cells[roles.x], k, roles.x), _to_float(cells[roles.y], k, roles.y)))
        X.append([_to_float(cells[f], k, f) for f in features])
        if roles.kind == "regression":
            y.append(_to_float(cells[roles.response], k, roles.response))
        else:
            y.append(cells[roles.response])
        if roles.group:
            groups.append(int(_to_float(cells[roles.group], k, roles.group)))
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if roles.kind == "classification":
        y = np.asarray(y, dtype=object)
        # integer-looking labels keep their numeric type
        try:
            y = np.asarray([int(v) for v in y])
        except ValueError:
            y = np.asarray(y, dtype=str)
    return Dataset(
        coords=np.asarray(coords, dtype=float).reshape(-1, 2),
        X=np.asarray(X, dtype=float).reshape(len(coords), len(features)),
        y=np.asarray(y),
        feature_names=tuple(features),
        response_kind=roles.kind,
        groups=np.asarray(groups) if roles.group else None,
        coord_names=(roles.x, roles.y),
        response_name=roles.response,
    )


def load_grid_csv(path, x: str = "x", y: str = "y") -> np.ndarray:
    """Read prediction locations (only the coordinate columns are used)."""
    header, rows = _read_rows(path)
    for c in (x, y):
        if c not in header:
            raise SchemaError(f"{path}: missing column {c!r}")
    ix, iy = header.index(x), header.index(y)
    out = [(_to_float(r[ix], k, x), _to_float(r[iy], k, y)) for k, r in enumerate(rows, start=1)]
    return np.asarray(out, dtype=float).reshape(-1, 2)


def meuse_path() -> Path:
    """Path of the bundled Meuse point data."""
    return Path(__file__).with_name("data") / "meuse.csv"


def load_meuse() -> Dataset:
    """Meuse topsoil data: response log10(zinc), features x, y, sqrt.dist, elev."""
    return load_csv(meuse_path(), ColumnRoles(response="logZn", features=["sqrt.dist", "elev"]))


def meuse_grid_path() -> Path | None:
    """Location of the Meuse prediction grid, if one is available.

    The grid is not bundled. It is looked up in ``$SPDIAG_MEUSE_GRID`` and
    then as ``data/meuse_grid.csv`` next to the point data.
    """
    env = os.environ.get("SPDIAG_MEUSE_GRID")
    cands = [Path(env)] if env else []
    cands.append(Path(__file__).with_name("data") / "meuse_grid.csv")
    for p in cands:
        if p.exists():
            return p
    return None


def load_meuse_grid() -> np.ndarray:
    """Meuse grid cell centres (x, y); raises FileNotFoundError when absent."""
    p = meuse_grid_path()
    if p is None:
        raise FileNotFoundError(
            "Meuse prediction grid not found; set SPDIAG_MEUSE_GRID to a CSV with x and y columns"
        )
    return load_grid_csv(p)


def _as_points(targets) -> np.ndarray:
    pts = np.asarray(targets, dtype=float)
    return pts.reshape(-1, 2)


def nn_distances(ds: Dataset) -> np.ndarray:
    """Distance from each observation to its nearest neighbour at a different location."""
    if not ds.has_duplicate_locations:
        d, _ = ds.tree.query(ds.coords, k=2)
        return d[:, 1]
    _, counts = np.unique(ds.coords, axis=0, return_counts=True)
    k = min(ds.n, int(counts.max()) + 1)
    d, _ = ds.tree.query(ds.coords, k=k)
    out = np.full(ds.n, np.inf)
    for i in range(ds.n):
        pos = d[i][d[i] > 0]
        if pos.size:
            out[i] = pos[0]
    return out


def nn_distance_stats(ds: Dataset, bin_width: float | None = None) -> DistanceSummary:
    d = nn_distances(ds)
    if not np.all(np.isfinite(d)):
        raise DegenerateGeometryError("all observations share a single location")
    return DistanceSummary.from_distances(d, bin_width=bin_width)


def prediction_distances(train: Dataset | np.ndarray, targets) -> np.ndarray:
    pts = _as_points(targets)
    if pts.size == 0:
        raise ValueError("no prediction targets")
    tree = train.tree if isinstance(train, Dataset) else cKDTree(_as_points(train))
    d, _ = tree.query(pts, k=1)
    return d


def prediction_distance_distribution(train, targets, bin_width: float | None = None) -> DistanceSummary:
    return DistanceSummary.from_distances(prediction_distances(train, targets), bin_width=bin_width)


def buffer_exclude(ds: Dataset, i: int, r: float) -> tuple[np.ndarray, float]:
    """Training indices after removing everything within ``r`` of observation ``i``.

    For ``r < 0`` only ``i`` itself is removed. Returns the retained indices and
    the distance from ``i`` to the nearest retained observation.
    """
    if not 0 <= i < ds.n:
        raise IndexError(f"observation index {i} out of range")
    if r < 0:
        keep = np.ones(ds.n, dtype=bool)
        keep[i] = False
        d, _ = ds.tree.query(ds.coords[i], k=2)
        return np.flatnonzero(keep), float(d[1])
    excluded = ds.tree.query_ball_point(ds.coords[i], r)
    if len(excluded) >= ds.n:
        raise ExhaustedBufferError(f"buffer of {r:g} m around observation {i} removes all data")
    keep = np.ones(ds.n, dtype=bool)
    keep[excluded] = False
    d, _ = ds.tree.query(ds.coords[i], k=len(excluded) + 1)
    return np.flatnonzero(keep), float(np.atleast_1d(d)[-1])


# --- synthetic fixtures ---------------------------------------------------


@dataclass
class SynthConfig:
    n: int = 200
    intercept: float = 0.0
    coefs: Sequence[float] = (1.0,)
    me_var: float = 0.0
    psill: float = 1.0
    range: float = 300.0
    extent: tuple[float, float] = (1000.0, 1000.0)


def spherical_covariance(h, psill: float, range_: float) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    s = np.clip(h / range_, 0.0, 1.0)
    return psill * (1.0 - (1.5 * s - 0.5 * s**3))


def synth_dataset(cfg: SynthConfig, seed: int) -> Dataset:
    """Gaussian random field plus linear trend at uniformly scattered sites.

    Features ``f1..fk`` are standard normal; the response is
    ``intercept + f @ coefs + field + noise`` with noise variance ``me_var``.
    """
    if cfg.n <= 0:
        raise ConfigError("n must be positive")
    if cfg.me_var < 0 or cfg.psill < 0 or cfg.range <= 0:
        raise ConfigError("variogram parameters must be nonnegative with positive range")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(cfg.n, 2)) * np.asarray(cfg.extent)
    k = len(cfg.coefs)
    F = rng.standard_normal((cfg.n, k))
    z = cfg.intercept + F @ np.asarray(cfg.coefs, dtype=float)
    if cfg.psill > 0:
        diff = coords[:, None, :] - coords[None, :, :]
        C = spherical_covariance(np.hypot(diff[..., 0], diff[..., 1]), cfg.psill, cfg.range)
        C[np.diag_indices_from(C)] += 1e-10 * cfg.psill
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise ConfigError("covariance matrix is not positive definite") from None
        z = z + L @ rng.standard_normal(cfg.n)
    if cfg.me_var > 0:
        z = z + rng.normal(0.0, math.sqrt(cfg.me_var), cfg.n)
    return Dataset(
        coords=coords,
        X=F,
        y=z,
        feature_names=tuple(f"f{j + 1}" for j in range(k)),
        response_kind="regression",
        response_name="z",
    )


@dataclass
class FieldConfig:
    """Layout of a synthetic crop-field classification fixture."""

    n_fields: int = 64
    cells_per_side: int = 3
    cell_size: float = 30.0
    field_spacing: float = 400.0
    n_classes: int = 4
    # seasonal blocks: (name, number of correlated features)
    blocks: tuple[tuple[str, int], ...] = (("early", 4), ("mid", 3), ("late", 6))
    class_sep: float = 1.0
    field_sd: float = 0.6
    cell_sd: float = 0.5


def synth_fields(cfg: FieldConfig, seed: int) -> Dataset:
    """Clustered-field land-cover analogue.

    Fields sit on a jittered lattice ``field_spacing`` apart, each a square of
    grid cells of one class. Features come in seasonal blocks that are
    strongly correlated within a block (one latent signal per block plus
    small noise). Class signal and field-level effects carry no spatial trend.
    """
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(cfg.n_fields))
    labels = np.arange(cfg.n_fields) % cfg.n_classes
    rng.shuffle(labels)
    n_blocks = len(cfg.blocks)
    class_means = rng.normal(0.0, cfg.class_sep, size=(cfg.n_classes, n_blocks))
    loadings = [rng.uniform(0.6, 1.4, size=m) for _, m in cfg.blocks]

    coords, X, y, groups = [], [], [], []
    offs = (np.arange(cfg.cells_per_side) - (cfg.cells_per_side - 1) / 2) * cfg.cell_size
    jitter = 0.15 * cfg.field_spacing
    for f in range(cfg.n_fields):
        cx = (f % side) * cfg.field_spacing + rng.uniform(-jitter, jitter)
        cy = (f // side) * cfg.field_spacing + rng.uniform(-jitter, jitter)
        field_eff = class_means[labels[f]] + rng.normal(0.0, cfg.field_sd, n_blocks)
        for ox in offs:
            for oy in offs:
                latent = field_eff + rng.normal(0.0, cfg.cell_sd, n_blocks)
                row = []
                for b, (_, m) in enumerate(cfg.blocks):
                    row.extend(latent[b] * loadings[b] + rng.normal(0.0, 0.1, m))
                coords.append((cx + ox, cy + oy))
                X.append(row)
                y.append(int(labels[f]))
                groups.append(f)
    names = tuple(f"{name}{j + 1}" for name, m in cfg.blocks for j in range(m))
    return Dataset(
        coords=np.asarray(coords),
        X=np.asarray(X),
        y=np.asarray(y),
        feature_names=names,
        response_kind="classification",
        groups=np.asarray(groups),
        response_name="crop",
    )
