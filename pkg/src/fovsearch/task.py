"""Search-task definition: location geometry, prior, and visibility map.

A task places n candidate target locations inside a circular field
(coordinates in degrees of visual angle), assigns a prior over them, and
specifies how target detectability d' falls off with retinal eccentricity.
All types are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

# template-response means for target-present / target-absent locations;
# the sufficient-statistic update and the lookahead integrals assume this
# exact symmetric unit separation
MEAN_PRESENT = 0.5
MEAN_ABSENT = -0.5

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class ConfigError(ValueError):
    """Raised when a task description violates the schema or an invariant."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _ring_counts(n: int) -> list[int] | None:
    """Ring sizes for a center-plus-rings layout totalling n points.

    Ring r holds min(6r, 24) points, so the supported totals are
    7, 19, 37, 61, 85, 109, ...  Returns None when n is not in the family.
    """
    counts = [1]
    total = 1
    r = 1
    while total < n:
        c = min(6 * r, 24)
        counts.append(c)
        total += c
        r += 1
    return counts if total == n else None


@dataclass(frozen=True, eq=False)
class LocationSet:
    """Candidate target locations inside a circular field."""

    coords: np.ndarray          # (n, 2) positions in degrees
    field_radius: float
    layout: str = "explicit"    # "rings" | "sunflower" | "explicit"

    def __post_init__(self):
        coords = _readonly(np.atleast_2d(self.coords))
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ConfigError("coords must be an (n, 2) array")
        if self.n < 2:
            raise ConfigError("at least 2 locations required (n >= 2)")
        if self.field_radius <= 0:
            raise ConfigError("field_radius must be positive")
        ecc = np.hypot(coords[:, 0], coords[:, 1])
        if np.any(ecc > self.field_radius * (1 + 1e-12)):
            raise ConfigError("all locations must lie within the field radius")
        d = self.distances()
        np.fill_diagonal(d, np.inf)
        if d.min() <= 0.0:
            raise ConfigError("locations must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def distances(self) -> np.ndarray:
        """Pairwise Euclidean distance matrix (n, n)."""
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def center_index(self) -> int:
        """Index of the location closest to the field center."""
        return int(np.argmin(np.hypot(self.coords[:, 0], self.coords[:, 1])))

    def __eq__(self, other):
        return (
            isinstance(other, LocationSet)
            and self.field_radius == other.field_radius
            and self.layout == other.layout
            and np.array_equal(self.coords, other.coords)
        )


def build_location_grid(n: int, field_radius: float) -> LocationSet:
    """Deterministic packing of n locations inside a disk.

    Uses a center point plus concentric rings (uniform angular spacing,
    ring r at radius field_radius * r / n_rings) whenever n fits that
    family; otherwise falls back to a golden-angle sunflower spiral, which
    packs any n evenly.
    """
    if n < 2:
        raise ConfigError("at least 2 locations required (n >= 2)")
    if field_radius <= 0:
        raise ConfigError("field_radius must be positive")
    counts = _ring_counts(n)
    if counts is not None:
        pts = [(0.0, 0.0)]
        n_rings = len(counts) - 1
        for r, count in enumerate(counts[1:], start=1):
            radius = field_radius * r / n_rings
            for j in range(count):
                theta = 2.0 * math.pi * j / count
                pts.append((radius * math.cos(theta), radius * math.sin(theta)))
        return LocationSet(np.array(pts), field_radius, layout="rings")
    # sunflower spiral: radius ~ sqrt(rank) keeps areal density uniform
    idx = np.arange(n)
    rad = field_radius * np.sqrt((idx + 0.5) / n)
    theta = idx * GOLDEN_ANGLE
    pts = np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    return LocationSet(pts, field_radius, layout="sunflower")


def eccentricity(a: int, b: int, locs: LocationSet) -> float:
    """Angular distance in degrees between locations a and b."""
    n = locs.n
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"location index out of range (n={n})")
    dx = locs.coords[a, 0] - locs.coords[b, 0]
    dy = locs.coords[a, 1] - locs.coords[b, 1]
    return float(math.hypot(dx, dy))


@dataclass(frozen=True, eq=False)
class VisibilityMap:
    """Target detectability d' as a function of eccentricity.

    Two forms: a smooth rational-decay family
        d'(e) = d0 / (1 + (e / e_half) ** beta)
    or a piecewise-linear table of (eccentricity, d') knots.  Either way
    d' is positive, radially symmetric, and non-increasing; queries beyond
    the last table knot clamp to the knot value.
    """

    form: str = "rational"
    params: tuple[tuple[str, float], ...] = (("d0", 4.0), ("e_half", 2.0), ("beta", 1.0))
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.form == "rational":
            p = dict(self.params)
            missing = {"d0", "e_half", "beta"} - set(p)
            if missing:
                raise ConfigError(f"rational visibility needs params {sorted(missing)}")
            if p["d0"] <= 0 or p["e_half"] <= 0 or p["beta"] <= 0:
                raise ConfigError("rational visibility params must be positive")
            object.__setattr__(self, "params", tuple(sorted(p.items())))
        elif self.form == "table":
            if self.table is None:
                raise ConfigError("table visibility needs knots")
            knots = _readonly(np.atleast_2d(self.table))
            if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
                raise ConfigError("visibility table must be (m >= 2, 2) knots")
            if knots[0, 0] != 0.0:
                raise ConfigError("visibility table must start at eccentricity 0")
            if np.any(np.diff(knots[:, 0]) <= 0):
                raise ConfigError("visibility table eccentricities must be increasing")
            if np.any(knots[:, 1] <= 0):
                raise ConfigError("visibility d' values must be positive")
            if np.any(np.diff(knots[:, 1]) > 0):
                raise ConfigError("visibility table must be non-increasing")
            object.__setattr__(self, "table", knots)
            object.__setattr__(self, "params", ())
        else:
            raise ConfigError(f"unknown visibility form {self.form!r}")

    def dprime(self, ecc):
        """d' at the given eccentricity (scalar or array, degrees)."""
        e = np.asarray(ecc, dtype=np.float64)
        if np.any(e < 0):
            raise ValueError("eccentricity must be non-negative")
        if self.form == "rational":
            p = dict(self.params)
            out = p["d0"] / (1.0 + (e / p["e_half"]) ** p["beta"])
        else:
            out = np.interp(e, self.table[:, 0], self.table[:, 1])
        return float(out) if np.isscalar(ecc) else out

    @property
    def foveal(self) -> float:
        """d' at eccentricity zero."""
        return self.dprime(0.0)

    def __eq__(self, other):
        if not isinstance(other, VisibilityMap) or self.form != other.form:
            return False
        if self.form == "rational":
            return self.params == other.params
        return np.array_equal(self.table, other.table)


def visibility(vmap: VisibilityMap, fixation: int, target: int, locs: LocationSet) -> float:
    """d' of a target at `target` while fixating `fixation`."""
    return float(vmap.dprime(eccentricity(fixation, target, locs)))


@dataclass(frozen=True, eq=False)
class TaskConfig:
    """Complete search-task definition.

    Derived arrays are precomputed at construction: `dprime_matrix[k, i]`
    is the visibility of location i while fixating location k, and
    `log_prior` is the elementwise log of the prior with exact -inf at
    zero-prior locations.
    """

    locations: LocationSet
    visibility: VisibilityMap
    prior: np.ndarray
    saccade_budget: int
    initial_fixation: int
    mean_present: float = MEAN_PRESENT
    mean_absent: float = MEAN_ABSENT
    seed: int = 0x5EED
    dprime_matrix: np.ndarray = field(init=False, repr=False)
    log_prior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.locations.n
        prior = _readonly(np.asarray(self.prior, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "prior", prior)
        if prior.size != n:
            raise ConfigError(f"prior length {prior.size} != n={n}")
        if np.any(prior < 0):
            raise ConfigError("prior entries must be non-negative")
        if abs(float(prior.sum()) - 1.0) > 1e-12:
            raise ConfigError("prior not normalized (must sum to 1 within 1e-12)")
        if self.saccade_budget < 1:
            raise ConfigError("saccade_budget must be >= 1")
        if not (0 <= self.initial_fixation < n):
            raise ConfigError(f"initial_fixation {self.initial_fixation} out of range")
        if (self.mean_present, self.mean_absent) != (MEAN_PRESENT, MEAN_ABSENT):
            raise ConfigError(
                "template-response means are fixed at +0.5 / -0.5; "
                "the posterior update is only sufficient for that separation"
            )
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        d = self.visibility.dprime(self.locations.distances())
        object.__setattr__(self, "dprime_matrix", _readonly(d))
        with np.errstate(divide="ignore"):
            lp = np.where(prior > 0.0, np.log(np.where(prior > 0.0, prior, 1.0)), -np.inf)
        object.__setattr__(self, "log_prior", _readonly(lp))

    @property
    def n(self) -> int:
        return self.locations.n

    def __eq__(self, other):
        return (
            isinstance(other, TaskConfig)
            and self.locations == other.locations
            and self.visibility == other.visibility
            and np.array_equal(self.prior, other.prior)
            and self.saccade_budget == other.saccade_budget
            and self.initial_fixation == other.initial_fixation
            and (self.mean_present, self.mean_absent)
            == (other.mean_present, other.mean_absent)
            and self.seed == other.seed
        )


def default_task(n: int = 85, field_radius: float = 8.0, saccade_budget: int = 3,
                 seed: int = 0x5EED, visibility_map: VisibilityMap | None = None) -> TaskConfig:
    """Reference task: uniform prior, center start, rational visibility."""
    locs = build_location_grid(n, field_radius)
    vmap = visibility_map if visibility_map is not None else VisibilityMap()
    return TaskConfig(
        locations=locs,
        visibility=vmap,
        prior=np.full(locs.n, 1.0 / locs.n),
        saccade_budget=saccade_budget,
        initial_fixation=locs.center_index(),
        seed=seed,
    )


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"missing required section {key!r} in {where}")
    return obj[key]


def load_task_config(path) -> TaskConfig:
    """Load and fully validate a task config file (JSON, schema below).

    Schema (version 1):
      schema_version: 1
      locations: {"count": int, "field_radius": float}
                 or {"coords": [[x, y], ...], "field_radius": float}
      visibility: {"family": "rational", "params": {d0, e_half, beta}}
                  or {"table": [[ecc, dprime], ...]}
      prior: "uniform" or [p_0, ..., p_{n-1}]
      saccade_budget: int >= 1
      initial_fixation: "center" or location index
      mean_present / mean_absent: optional, fixed at 0.5 / -0.5
      seed: optional non-negative int
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    version = _require(raw, "schema_version", "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

    loc_obj = _require(raw, "locations", "config")
    radius = float(_require(loc_obj, "field_radius", "locations"))
    if "coords" in loc_obj:
        locs = LocationSet(np.asarray(loc_obj["coords"], dtype=np.float64), radius)
    elif "count" in loc_obj:
        locs = build_location_grid(int(loc_obj["count"]), radius)
    else:
        raise ConfigError("locations needs either 'count' or 'coords'")

    vis_obj = _require(raw, "visibility", "config")
    if "table" in vis_obj:
        vmap = VisibilityMap(form="table", table=np.asarray(vis_obj["table"], dtype=np.float64))
    elif "family" in vis_obj:
        fam = vis_obj["family"]
        params = _require(vis_obj, "params", "visibility")
        vmap = VisibilityMap(form=fam, params=tuple(sorted((k, float(v)) for k, v in params.items())))
    else:
        raise ConfigError("visibility needs either 'family' or 'table'")

    prior_obj = _require(raw, "prior", "config")
    if prior_obj == "uniform":
        prior = np.full(locs.n, 1.0 / locs.n)
    else:
        prior = np.asarray(prior_obj, dtype=np.float64)

    fix_obj = raw.get("initial_fixation", "center")
    initial = locs.center_index() if fix_obj == "center" else int(fix_obj)

    return TaskConfig(
        locations=locs,
        visibility=vmap,
        prior=prior,
        saccade_budget=int(_require(raw, "saccade_budget", "config")),
        initial_fixation=initial,
        mean_present=float(raw.get("mean_present", MEAN_PRESENT)),
        mean_absent=float(raw.get("mean_absent", MEAN_ABSENT)),
        seed=int(raw.get("seed", 0x5EED)),
    )


def save_task_config(task: TaskConfig, path) -> None:
    """Write a config file that loads back to an equal TaskConfig."""
    loc = task.locations
    if loc.layout in ("rings", "sunflower"):
        loc_obj = {"count": loc.n, "field_radius": loc.field_radius}
    else:
        loc_obj = {"coords": loc.coords.tolist(), "field_radius": loc.field_radius}
    if task.visibility.form == "rational":
        vis_obj = {"family": "rational", "params": dict(task.visibility.params)}
    else:
        vis_obj = {"table": task.visibility.table.tolist()}
    uniform = np.full(task.n, 1.0 / task.n)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "locations": loc_obj,
        "visibility": vis_obj,
        "prior": "uniform" if np.array_equal(task.prior, uniform) else task.prior.tolist(),
        "saccade_budget": task.saccade_budget,
        "initial_fixation": task.initial_fixation,
        "mean_present": task.mean_present,
        "mean_absent": task.mean_absent,
        "seed": task.seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
