"""Work cell selection inside the assigned work district.

First a cell class is drawn with probability equal to the share of the
district's summed work weight held by cells of that class; then a cell of
that class is drawn with probability proportional to ``d ** -exponent``,
``d`` being the floored distance from the residence cell.
"""
from __future__ import annotations

import logging
from collections import defaultdict

from .core import District, Grid, Person, WeightConfig
from .distributions import CategoricalSampler, RandomStream
from .errors import ContractViolation
from .parallel import for_chunks

log = logging.getLogger(__name__)


def class_probabilities(district: District, weights: WeightConfig, grid: Grid) -> dict[str, float]:
    """Summed weight per class over the district total; uniform over present classes if all zero."""
    sums: dict[str, float] = defaultdict(float)
    for cid in district.cell_ids:
        cls = grid.cells[cid].cell_class
        sums[cls] += weights[cls]
    total = sum(sums.values())
    if total <= 0:
        log.warning("district %s has zero work weight; drawing cell class uniformly", district.id)
        return {c: 1.0 / len(sums) for c in sorted(sums)}
    return {c: sums[c] / total for c in sorted(sums)}


def work_cell_probabilities(residence_cell: str, district: District, cell_class: str, grid: Grid,
                            exponent: float = 1.0) -> dict[str, float]:
    """Inverse-distance probabilities over the district's cells of ``cell_class``."""
    cands = [c for c in district.cell_ids if grid.cells[c].cell_class == cell_class]
    if not cands:
        raise ContractViolation(f"district {district.id!r} has no cell of class {cell_class!r}")
    kernel = grid.distances_from(residence_cell, cands) ** -exponent
    return dict(zip(cands, kernel / kernel.sum()))


def assign_cell_class(person: Person, district: District, weights: WeightConfig, grid: Grid,
                      stream: RandomStream) -> str:
    probs = class_probabilities(district, weights, grid)
    person.work_cell_class = CategoricalSampler(probs, list(probs.values())).draw(stream.value(0))
    return person.work_cell_class


def assign_work_cell(person: Person, district: District, cell_class: str, grid: Grid,
                     stream: RandomStream, exponent: float = 1.0) -> str:
    probs = work_cell_probabilities(person.residence_cell, district, cell_class, grid, exponent)
    person.work_cell = CategoricalSampler(probs, list(probs.values())).draw(stream.value(1))
    return person.work_cell


class LastMileSampler:
    """Caches the class and cell samplers shared by many workers."""

    def __init__(self, grid: Grid, weights: WeightConfig, exponent: float = 1.0):
        self.grid = grid
        self.weights = weights
        self.exponent = exponent
        self._classes: dict[str, CategoricalSampler] = {}
        self._cells: dict[tuple, CategoricalSampler] = {}

    def class_sampler(self, district_id: str) -> CategoricalSampler:
        s = self._classes.get(district_id)
        if s is None:
            probs = class_probabilities(self.grid.districts[district_id], self.weights, self.grid)
            s = self._classes[district_id] = CategoricalSampler(probs, list(probs.values()))
        return s

    def cell_sampler(self, residence_cell: str, district_id: str, cell_class: str) -> CategoricalSampler:
        key = (residence_cell, district_id, cell_class)
        s = self._cells.get(key)
        if s is None:
            probs = work_cell_probabilities(residence_cell, self.grid.districts[district_id],
                                            cell_class, self.grid, self.exponent)
            s = self._cells[key] = CategoricalSampler(probs, list(probs.values()))
        return s

    def assign(self, person: Person, stream: RandomStream) -> None:
        if person.work_district is None or person.residence_cell is None:
            raise ContractViolation(f"person {person.id!r} lacks a work district or residence cell")
        s = stream.split(person.id)
        cls = self.class_sampler(person.work_district).draw(s.value(0))
        person.work_cell_class = cls
        person.work_cell = self.cell_sampler(person.residence_cell, person.work_district, cls).draw(s.value(1))


def assign_work_cells(persons, grid: Grid, weights: WeightConfig, stream: RandomStream,
                      exponent: float = 1.0, threads: int = 1) -> None:
    sampler = LastMileSampler(grid, weights, exponent)

    def work(chunk):
        for p in chunk:
            if p.work_district is not None:
                sampler.assign(p, stream)

    for_chunks(work, persons, threads)


def two_stage_cell_probabilities(residence_cell: str, district: District, weights: WeightConfig,
                                 grid: Grid, exponent: float = 1.0) -> dict[str, float]:
    """P(work cell = m) combining the class draw and the within-class draw."""
    out = {}
    for cls, pc in class_probabilities(district, weights, grid).items():
        for cid, pm in work_cell_probabilities(residence_cell, district, cls, grid, exponent).items():
            out[cid] = pc * pm
    return out

