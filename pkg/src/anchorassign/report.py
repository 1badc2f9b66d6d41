"""Validation outputs: OD matrices, delta matrices, per-cell counts, field totals."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import OTHER, Grid
from .errors import ContractViolation, SchemaError, StageIncompleteError


@dataclass
class ODMatrix:
    """Row-normalised residence-district (rows) by work-district (columns) shares."""

    districts: tuple[str, ...]
    shares: np.ndarray
    counts: np.ndarray | None = None
    empty_rows: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.districts = tuple(self.districts)
        self.shares = np.asarray(self.shares, dtype=float)
        n = len(self.districts)
        if self.shares.shape != (n, n):
            raise ContractViolation(f"OD matrix must be {n}x{n}, got {self.shares.shape}")

    @classmethod
    def from_counts(cls, districts, counts) -> "ODMatrix":
        counts = np.asarray(counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        shares = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
        empty = tuple(d for d, t in zip(districts, totals[:, 0]) if t == 0)
        return cls(tuple(districts), shares, counts, empty)

    @classmethod
    def from_long(cls, shares: dict[tuple[str, str], float], districts=None) -> "ODMatrix":
        if districts is None:
            seen = []
            for o, d in shares:
                for x in (o, d):
                    if x not in seen:
                        seen.append(x)
            districts = seen
        idx = {d: i for i, d in enumerate(districts)}
        m = np.zeros((len(districts), len(districts)))
        for (o, d), s in shares.items():
            m[idx[o], idx[d]] = s
        empty = tuple(d for d, row in zip(districts, m) if not row.any())
        return cls(tuple(districts), m, None, empty)

    def share(self, origin: str, dest: str) -> float:
        return float(self.shares[self.districts.index(origin), self.districts.index(dest)])

    def reordered(self, districts) -> "ODMatrix":
        districts = tuple(districts)
        if set(districts) != set(self.districts) or len(districts) != len(self.districts):
            raise ContractViolation("district sets differ")
        idx = [self.districts.index(d) for d in districts]
        counts = None if self.counts is None else self.counts[np.ix_(idx, idx)]
        return ODMatrix(districts, self.shares[np.ix_(idx, idx)], counts,
                        tuple(d for d in districts if d in self.empty_rows))

    def write_csv(self, path, decimals: int = 6) -> None:
        write_matrix(path, self.districts, self.shares, decimals)

    @classmethod
    def read_csv(cls, path) -> "ODMatrix":
        districts, m = read_matrix(path)
        empty = tuple(d for d, row in zip(districts, m) if not row.any())
        return cls(districts, m, None, empty)


def write_matrix(path, districts, matrix, decimals: int = 6) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", *districts])
        for d, row in zip(districts, matrix):
            w.writerow([d, *(f"{x:.{decimals}f}" for x in row)])


def read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "origin":
        raise SchemaError("matrix header must start with 'origin'", path, 1)
    districts = tuple(rows[0][1:])
    body = rows[1:]
    if [r[0] for r in body] != list(districts):
        raise SchemaError("row labels must repeat the column labels in order", path)
    try:
        m = np.array([[float(x) for x in r[1:]] for r in body])
    except ValueError as exc:
        raise SchemaError(str(exc), path) from None
    return districts, m


def build_od_matrix(persons, districts) -> ODMatrix:
    """Shares of workers by residence district (row) and work district (column)."""
    districts = tuple(districts)
    idx = {d: i for i, d in enumerate(districts)}
    counts = np.zeros((len(districts), len(districts)))
    for p in persons:
        if p.work_district is not None:
            counts[idx[p.residence_district], idx[p.work_district]] += 1
    return ODMatrix.from_counts(districts, counts)


def delta_matrix(a: ODMatrix, b: ODMatrix) -> np.ndarray:
    """Elementwise ``a - b``; ``b`` is reordered to ``a``'s districts if needed."""
    if set(a.districts) != set(b.districts):
        raise ContractViolation(f"OD matrices cover different districts: "
                                f"{sorted(set(a.districts) ^ set(b.districts))}")
    if a.districts != b.districts:
        b = b.reordered(a.districts)
    return a.shares - b.shares


def per_cell_counts(persons, kind: str, filter: tuple[str, str] | None = None) -> dict[str, int]:
    """Residents or workers per cell, optionally for one (residence, work) district pair."""
    if kind not in ("residents", "workers"):
        raise ValueError("kind must be 'residents' or 'workers'")
    persons = list(persons)
    if kind == "residents":
        if any(p.residence_cell is None for p in persons):
            raise StageIncompleteError("residence cells are not assigned yet")
    elif any(p.occupation is None for p in persons) or any(
            p.employed and p.nace is not None and p.work_cell is None for p in persons):
        raise StageIncompleteError("work cells are not assigned yet")
    out: Counter = Counter()
    for p in persons:
        if filter is not None and (p.residence_district, p.work_district) != tuple(filter):
            continue
        cell = p.residence_cell if kind == "residents" else p.work_cell
        if cell is not None:
            out[cell] += 1
    return dict(out)


def district_field_totals(persons) -> dict[tuple[str, str], int]:
    """Workers per (work district, field label)."""
    out: Counter = Counter()
    for p in persons:
        if p.work_district is not None:
            out[(p.work_district, p.nace)] += 1
    return dict(out)


def nace_totals_report(persons, register, consistency=None) -> list[dict]:
    """Per field: synthetic total after relabelling, register total, census-derived total, verdict."""
    synthetic: Counter = Counter(p.nace for p in persons if p.employed and p.nace is not None)
    reg: Counter = Counter()
    for (_, code), n in register.items():
        reg[code] += n
    census: Counter = Counter()
    verdicts = {}
    if consistency is not None:
        for code, v in consistency.fields.items():
            census[code] = v.census_total
            verdicts[code] = v.verdict
    else:
        census.update(p.census_nace or p.nace for p in persons if p.employed and p.nace is not None)
    codes = sorted((set(synthetic) | set(reg) | set(census)) - {OTHER})
    if synthetic.get(OTHER) or reg.get(OTHER):
        codes.append(OTHER)
    return [{"nace_code": c, "synthetic_total": synthetic.get(c, 0), "register_total": reg.get(c, 0),
             "census_total": census.get(c, 0) if c != OTHER else 0,
             "verdict": "sink" if c == OTHER else verdicts.get(c, "")} for c in codes]


def write_rows(path, rows, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_cell_counts(path, grid: Grid, counts: dict[str, int], kind: str) -> None:
    write_rows(path, ({"cell_id": c, "row": grid.cells[c].row, "col": grid.cells[c].col,
                       "district_id": grid.cells[c].district_id, kind: counts.get(c, 0)}
                      for c in sorted(grid.cells)),
               ["cell_id", "row", "col", "district_id", kind])


def cell_geojson(grid: Grid, residents: dict[str, int], workers: dict[str, int]) -> dict:
    """Cells as square polygons in grid metres with resident and worker counts."""
    s = grid.cell_size
    features = []
    for cid in sorted(grid.cells):
        c = grid.cells[cid]
        x0, y0 = c.col * s, c.row * s
        ring = [[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s], [x0, y0]]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"cell_id": cid, "district_id": c.district_id, "cell_class": c.cell_class,
                           "residents": residents.get(cid, 0), "workers": workers.get(cid, 0)},
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path, grid: Grid, residents, workers) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cell_geojson(grid, residents, workers), fh, indent=1, sort_keys=True)
        fh.write("\n")
