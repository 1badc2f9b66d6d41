"""Domain types, grid geometry and the land-use weight arithmetic.

Cells are squares of ``cell_size`` metres indexed by (row, col); centroids
sit at ``((col + 0.5) * cell_size, (row + 0.5) * cell_size)``.  Distances are
Euclidean between centroids and floored at half a cell so that a cell's
distance to itself is finite and positive.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DegenerateDistrictError

log = logging.getLogger(__name__)

OTHER = "Other"
NOT_EMPLOYED = "not employed"

LOW_RESIDENTIAL = "LowResidential"
HIGH_RESIDENTIAL = "HighResidential"
COMMERCIAL = "Commercial"
INDUSTRIAL = "Industrial"
EDUCATION = "Education"
OPEN_LAND = "OpenLand"

PROTOTYPE_CLASSES = (LOW_RESIDENTIAL, HIGH_RESIDENTIAL, COMMERCIAL,
                     INDUSTRIAL, EDUCATION, OPEN_LAND)
# g_L, g_H, g_C, g_I, g_E, g_O for workplaces in the prototype city
PROTOTYPE_WORK_WEIGHTS = dict(zip(PROTOTYPE_CLASSES, (1.0, 2.0, 10.0, 5.0, 3.0, 1.0)))

WORK = "work"
RESIDENCE = "residence"


@dataclass(frozen=True)
class WeightConfig:
    """Per-class weights for one purpose (``work`` or ``residence``)."""

    weights: Mapping[str, float]
    purpose: str = WORK

    def __post_init__(self):
        if self.purpose not in (WORK, RESIDENCE):
            raise ConfigurationError(f"unknown weight purpose {self.purpose!r}")
        if not self.weights:
            raise ConfigurationError("weight config has no classes")
        for label, value in self.weights.items():
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"weight for class {label!r} must be finite and >= 0, got {value}")
        if not any(v > 0 for v in self.weights.values()):
            raise ConfigurationError("at least one class weight must be positive")
        object.__setattr__(self, "weights", dict(self.weights))

    @classmethod
    def prototype(cls) -> "WeightConfig":
        return cls(PROTOTYPE_WORK_WEIGHTS, WORK)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.weights)

    def __getitem__(self, label: str) -> float:
        try:
            return self.weights[label]
        except KeyError:
            raise ConfigurationError(f"class {label!r} has no {self.purpose} weight") from None

    def scaled(self, factor: float) -> "WeightConfig":
        return WeightConfig({k: v * factor for k, v in self.weights.items()}, self.purpose)


@dataclass(frozen=True)
class Cell:
    id: str
    row: int
    col: int
    centroid: tuple[float, float]
    district_id: str
    landuse_areas: Mapping[str, float]
    cell_class: str
    weight: float


@dataclass(frozen=True)
class District:
    id: str
    name: str
    cell_ids: tuple[str, ...]
    nace_capacity: Mapping[str, int] = field(default_factory=dict)
    worker_total: int = 0

    def __post_init__(self):
        if not self.cell_ids:
            raise ConfigurationError(f"district {self.id!r} has no cells")
        for code, n in self.nace_capacity.items():
            if n < 0:
                raise ConfigurationError(f"negative capacity for {code!r} in district {self.id!r}")


@dataclass(frozen=True)
class NaceField:
    code: str
    coherent: bool = True


@dataclass(slots=True)
class Person:
    """One synthetic individual; optional attributes fill in stage by stage."""

    id: str
    age: int
    gender: str
    household_id: str
    residence_district: str
    residence_cell: str | None = None
    occupation: str | None = None
    nace: str | None = None
    work_district: str | None = None
    work_cell_class: str | None = None
    work_cell: str | None = None
    # field drawn from census tables before the consistency gate relabelled it
    census_nace: str | None = None

    @property
    def employed(self) -> bool:
        return self.occupation is not None and self.occupation != NOT_EMPLOYED

    def stage_violations(self) -> list[str]:
        out = []
        if self.work_cell is not None and (self.work_cell_class is None or self.work_district is None):
            out.append("work_cell set before work_cell_class/work_district")
        if self.work_district is not None and self.nace is None:
            out.append("work_district set before nace")
        if self.nace is not None and self.occupation is None:
            out.append("nace set before occupation")
        return out


def centroid_of(row: int, col: int, cell_size: float) -> tuple[float, float]:
    return ((col + 0.5) * cell_size, (row + 0.5) * cell_size)


def cell_distance(a: Cell, b: Cell, cell_size: float = 500.0) -> float:
    """Centroid distance in metres, never below ``cell_size / 2``."""
    d = math.hypot(a.centroid[0] - b.centroid[0], a.centroid[1] - b.centroid[1])
    return max(d, cell_size / 2.0)


class Grid:
    """Cells and districts of one study area, with cached distance lookups."""

    def __init__(self, cells, districts, cell_size: float = 500.0):
        if cell_size <= 0:
            raise ConfigurationError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self.cells: dict[str, Cell] = {c.id: c for c in cells}
        self.districts: dict[str, District] = {d.id: d for d in districts}
        for d in self.districts.values():
            for cid in d.cell_ids:
                if cid not in self.cells:
                    raise ConfigurationError(f"district {d.id!r} references unknown cell {cid!r}")
                if self.cells[cid].district_id != d.id:
                    raise ConfigurationError(f"cell {cid!r} is listed in district {d.id!r} "
                                             f"but belongs to {self.cells[cid].district_id!r}")
        for c in self.cells.values():
            if c.district_id not in self.districts:
                raise ConfigurationError(f"cell {c.id!r} references unknown district {c.district_id!r}")
        self.cell_ids = tuple(self.cells)
        self.district_ids = tuple(self.districts)
        self._index = {cid: i for i, cid in enumerate(self.cell_ids)}
        self._xy = np.array([self.cells[c].centroid for c in self.cell_ids], dtype=float).reshape(-1, 2)
        self._district_index = {did: i for i, did in enumerate(self.district_ids)}
        self._c2d = None

    @property
    def d_min(self) -> float:
        return self.cell_size / 2.0

    def index_of(self, cell_id: str) -> int:
        return self._index[cell_id]

    def distance(self, a: str, b: str) -> float:
        return cell_distance(self.cells[a], self.cells[b], self.cell_size)

    def distances_from(self, cell_id: str, targets) -> np.ndarray:
        """Floored distances from one cell to each cell id in ``targets``."""
        idx = [self._index[t] for t in targets]
        delta = self._xy[idx] - self._xy[self._index[cell_id]]
        return np.maximum(np.hypot(delta[:, 0], delta[:, 1]), self.d_min)

    def district_distance_matrix(self) -> np.ndarray:
        """Mean floored distance from every cell (rows) to every district (columns)."""
        if self._c2d is None:
            out = np.empty((len(self.cell_ids), len(self.district_ids)))
            for j, did in enumerate(self.district_ids):
                idx = [self._index[c] for c in self.districts[did].cell_ids]
                dx = self._xy[:, None, 0] - self._xy[None, idx, 0]
                dy = self._xy[:, None, 1] - self._xy[None, idx, 1]
                out[:, j] = np.maximum(np.hypot(dx, dy), self.d_min).mean(axis=1)
            self._c2d = out
        return self._c2d

    def district_distances(self, cell_id: str, order=None) -> np.ndarray:
        """Mean distances from one cell to each district (``district_ids`` order by default)."""
        row = self.district_distance_matrix()[self._index[cell_id]]
        if order is None:
            return row
        return row[[self._district_index[d] for d in order]]


def cell_to_district_distance(cell: Cell, district: District, grid: Grid) -> float:
    """Arithmetic mean of floored distances from ``cell`` to every cell of ``district``."""
    if not district.cell_ids:
        raise ConfigurationError(f"district {district.id!r} has no cells")
    return float(grid.distances_from(cell.id, district.cell_ids).mean())


def raw_cell_weights(district: District, weights, grid: Grid) -> list[float]:
    """Unnormalised weight of every cell of ``district``, in ``cell_ids`` order."""
    if isinstance(weights, WeightConfig):
        return [weights[grid.cells[c].cell_class] for c in district.cell_ids]
    return [float(weights.get(c, 0.0)) for c in district.cell_ids]


def normalized_cell_weights(district: District, weights, grid: Grid) -> dict[str, float]:
    """Share of each cell in its district's total weight.

    ``weights`` is either a :class:`WeightConfig` (class constants) or a
    mapping of cell id to a continuous weight.  Raises
    :class:`DegenerateDistrictError` when every weight is zero.
    """
    raw = raw_cell_weights(district, weights, grid)
    total = math.fsum(raw)
    if total <= 0:
        raise DegenerateDistrictError(f"district {district.id!r} has no positive-weight cell")
    return {c: w / total for c, w in zip(district.cell_ids, raw)}


def cell_probabilities(district: District, weights, grid: Grid) -> dict[str, float]:
    """:func:`normalized_cell_weights` with a uniform fallback for degenerate districts."""
    try:
        return normalized_cell_weights(district, weights, grid)
    except DegenerateDistrictError:
        log.warning("district %s has only zero-weight cells; using uniform cell probabilities",
                    district.id)
        n = len(district.cell_ids)
        return {c: 1.0 / n for c in district.cell_ids}


def expected_workplaces(district: District, weights, grid: Grid,
                        total: float | None = None) -> dict[str, float]:
    """Normalised cell weight times the district worker total."""
    n = district.worker_total if total is None else total
    return {c: p * n for c, p in normalized_cell_weights(district, weights, grid).items()}
