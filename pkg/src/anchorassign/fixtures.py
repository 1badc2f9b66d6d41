"""Scenario builders for tests and experiments.

``toy_scenario`` writes a small random city.  ``tallinn_scenario`` writes an
eight-district, 628-cell city whose occupation, field and register tables
are solved so that the expected residence-by-work-district shares equal a
target matrix (by default the bundled Tallinn synthetic-population shares).
Fixture randomness comes from numpy's ``default_rng``; it is independent of
the pipeline's own streams.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import NOT_EMPLOYED

TALLINN_DISTRICTS = ("Mustamäe", "Lasnamäe", "Pohja-Tallinna", "Kesklinna",
                     "Nomme", "Haabersti", "Kristiine", "Pirita")

# residence (rows) by work district (columns), two printed decimals
OD_SYNTHETIC = np.array([
    [0.21, 0.08, 0.07, 0.20, 0.10, 0.11, 0.17, 0.05],
    [0.07, 0.27, 0.06, 0.26, 0.08, 0.10, 0.10, 0.06],
    [0.10, 0.10, 0.14, 0.26, 0.08, 0.12, 0.14, 0.06],
    [0.08, 0.11, 0.09, 0.34, 0.08, 0.09, 0.14, 0.06],
    [0.15, 0.10, 0.08, 0.21, 0.15, 0.11, 0.14, 0.06],
    [0.16, 0.09, 0.09, 0.20, 0.10, 0.16, 0.14, 0.05],
    [0.12, 0.09, 0.08, 0.25, 0.08, 0.10, 0.21, 0.05],
    [0.07, 0.22, 0.08, 0.25, 0.08, 0.10, 0.11, 0.08],
])
# same layout, from mobile-network commuting data
OD_MOBILE = np.array([
    [0.36, 0.06, 0.08, 0.20, 0.04, 0.12, 0.12, 0.02],
    [0.05, 0.40, 0.07, 0.32, 0.03, 0.04, 0.06, 0.03],
    [0.05, 0.08, 0.33, 0.28, 0.03, 0.08, 0.12, 0.02],
    [0.06, 0.09, 0.10, 0.54, 0.03, 0.06, 0.09, 0.02],
    [0.11, 0.07, 0.07, 0.32, 0.26, 0.07, 0.10, 0.01],
    [0.16, 0.07, 0.08, 0.20, 0.04, 0.35, 0.10, 0.01],
    [0.13, 0.06, 0.10, 0.29, 0.05, 0.09, 0.28, 0.01],
    [0.02, 0.22, 0.08, 0.31, 0.04, 0.04, 0.10, 0.20],
])
# printed synthetic-minus-mobile differences
OD_DELTA_PRINTED = np.array([
    [-0.15, 0.02, -0.01, 0.00, 0.06, -0.01, 0.05, 0.03],
    [0.03, -0.13, -0.01, -0.06, 0.05, 0.06, 0.04, 0.03],
    [0.05, 0.02, -0.19, -0.02, 0.05, 0.04, 0.02, 0.04],
    [0.02, 0.02, -0.01, -0.20, 0.05, 0.03, 0.05, 0.04],
    [0.04, 0.03, 0.01, -0.11, -0.11, 0.04, 0.04, 0.05],
    [0.00, 0.02, 0.01, 0.00, 0.06, -0.19, 0.04, 0.04],
    [-0.01, 0.03, -0.02, -0.04, 0.03, 0.01, -0.07, 0.04],
    [0.05, 0.00, 0.00, -0.06, 0.04, 0.06, 0.01, -0.12],
])

EDUCATION_CENSUS = 14118
EDUCATION_REGISTER = 2825


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_od_long(path, districts, matrix) -> None:
    """Matrix as ``origin_district,dest_district,share`` rows."""
    write_csv(path, ["origin_district", "dest_district", "share"],
              [(o, d, f"{matrix[i, j]:.6f}") for i, o in enumerate(districts) for j, d in enumerate(districts)])


def write_table(path, key_attributes, rows: dict[tuple, dict[str, float]]) -> None:
    out = []
    for key, dist in rows.items():
        for outcome, p in dist.items():
            out.append((*key, outcome, repr(float(p))))
    write_csv(path, [*key_attributes, "outcome", "probability"], out)


@dataclass
class ScenarioFiles:
    config_path: Path
    districts: tuple[str, ...]
    persons: int


def write_scenario(directory, *, cells, landuse, register, persons, tables, config=None,
                   od_reference=None) -> ScenarioFiles:
    """Write a complete scenario directory and return the config path.

    ``cells``: (cell_id, row, col, district); ``landuse``: (cell_id, category, area);
    ``register``: (district, code, employees); ``persons``: (id, age, gender, household, district);
    ``tables``: name -> (key attributes, rows); ``od_reference``: (districts, matrix).
    """
    d = Path(directory)
    (d / "tables").mkdir(parents=True, exist_ok=True)
    write_csv(d / "cells.csv", ["cell_id", "row", "col", "district_id"], cells)
    write_csv(d / "landuse.csv", ["cell_id", "category", "area_m2"],
              [(c, k, f"{a:.1f}") for c, k, a in landuse])
    write_csv(d / "nace_totals.csv", ["district_id", "nace_code", "employees"], register)
    write_csv(d / "persons.csv", ["person_id", "age", "gender", "household_id", "residence_district"], persons)
    for name, (keys, rows) in tables.items():
        write_table(d / "tables" / f"{name}.csv", keys, rows)
    cfg = {"seed": 1, "cell_size": 500.0}
    cfg.update(config or {})
    if od_reference is not None:
        write_od_long(d / "od_reference.csv", *od_reference)
        cfg.setdefault("paths", {})["od_reference"] = "od_reference.csv"
    (d / "config.json").write_text(json.dumps(cfg, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    districts = tuple(sorted({c[3] for c in cells}))
    return ScenarioFiles(d / "config.json", districts, len(persons))


def _voronoi(points: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _households(rng, n_persons: int, max_size: int):
    sizes = []
    while sum(sizes) < n_persons:
        sizes.append(int(rng.integers(1, max_size + 1)))
    sizes[-1] -= sum(sizes) - n_persons
    return [s for s in sizes if s > 0]


TOY_OCCUPATIONS = ("manager", "clerk", "technician", "teacher")
TOY_FIELDS = ("C", "G", "K", "P")


def toy_scenario(directory, seed: int = 0, n_districts: int = 3, rows: int = 6, cols: int = 6,
                 n_persons: int = 300, max_household: int = 4, incoherent_field: str | None = None,
                 config: dict | None = None) -> ScenarioFiles:
    """Random small city.  ``incoherent_field`` gets a register total five times too small."""
    rng = np.random.default_rng(seed)
    n_cells = rows * cols
    n_districts = min(n_districts, n_cells)
    grid = np.array([(r, c) for r in range(rows) for c in range(cols)], dtype=float)
    seed_idx = rng.choice(n_cells, n_districts, replace=False)
    owner = _voronoi(grid, grid[seed_idx])
    dnames = [f"D{i + 1}" for i in range(n_districts)]
    cells, landuse = [], []
    for i, (r, c) in enumerate(grid.astype(int)):
        cid = f"c{r:02d}_{c:02d}"
        cells.append((cid, r, c, dnames[owner[i]]))
        if rng.random() < 0.85 or i in seed_idx:
            landuse.append((cid, "residential", float(rng.uniform(500, 12000))))
        for cat, p in (("office", 0.2), ("commercial", 0.25), ("industrial", 0.15), ("education", 0.1)):
            if rng.random() < p:
                landuse.append((cid, cat, float(rng.uniform(200, 9000))))

    persons = []
    hh_sizes = _households(rng, n_persons, max_household)
    k = 0
    for h, size in enumerate(hh_sizes):
        district = dnames[int(rng.integers(n_districts))]
        for _ in range(size):
            persons.append((f"p{k:05d}", int(rng.integers(0, 90)), "MF"[int(rng.integers(2))],
                            f"h{h:05d}", district))
            k += 1

    outcomes = (*TOY_OCCUPATIONS, NOT_EMPLOYED)
    occ_rows = {}
    for d in dnames:
        occ_rows[("*", "*", d)] = dict(zip(outcomes, rng.dirichlet(np.full(len(outcomes), 2.0))))
        occ_rows[("15-19", "*", d)] = {"clerk": 0.3, "technician": 0.2, NOT_EMPLOYED: 0.5}
    nace_rows = {(o,): dict(zip(TOY_FIELDS, rng.dirichlet(np.full(len(TOY_FIELDS), 1.5)))) for o in TOY_OCCUPATIONS}

    # register sized to the expected census counts so most fields are coherent
    eligible = {d: sum(1 for p in persons if p[4] == d and 15 <= p[1] <= 74) for d in dnames}
    expected = dict.fromkeys(TOY_FIELDS, 0.0)
    for d in dnames:
        for o in TOY_OCCUPATIONS:
            for f in TOY_FIELDS:
                expected[f] += eligible[d] * occ_rows[("*", "*", d)][o] * nace_rows[(o,)][f]
    register = []
    for f in TOY_FIELDS:
        total = expected[f] / (5.0 if f == incoherent_field else 1.0)
        split = rng.dirichlet(np.full(n_districts, 3.0))
        for d, s in zip(dnames, split):
            register.append((d, f, int(round(total * s))))
    cfg = {"seed": seed, "feasibility_rules": [{"occupation": "manager", "min_age": 25, "max_age": 74}]}
    cfg.update(config or {})
    return write_scenario(directory, cells=cells, landuse=landuse, register=register, persons=persons,
                          tables={"occupation": (("age_band", "gender", "district"), occ_rows),
                                  "nace": (("occupation",), nace_rows)},
                          config=cfg)


def education_gap_scenario(directory, seed: int = 0, census: int = EDUCATION_CENSUS,
                           register_total: int = EDUCATION_REGISTER, others: int = 3000) -> ScenarioFiles:
    """Two districts; every adult in ``E1`` teaches, every adult in ``E2`` is a clerk.

    The teacher count equals ``census`` exactly while the register lists
    ``register_total`` education jobs, so the education field disagrees by
    the chosen factor.
    """
    cells, landuse = [], []
    for r in range(4):
        for c in range(6):
            cid = f"e{r}{c}"
            cells.append((cid, r, c, "E1" if c < 3 else "E2"))
            landuse.append((cid, "residential", 3000.0 + 500 * r))
            if (r + c) % 3 == 0:
                landuse.append((cid, "office", 6000.0))
    persons = [(f"t{i:06d}", 30 + i % 40, "MF"[i % 2], f"ht{i:06d}", "E1") for i in range(census)]
    persons += [(f"w{i:06d}", 30 + i % 40, "MF"[i % 2], f"hw{i:06d}", "E2") for i in range(others)]
    half = register_total // 2
    register = [("E1", "P", half), ("E2", "P", register_total - half),
                ("E1", "G", others // 3), ("E2", "G", others - others // 3)]
    tables = {
        "occupation": (("age_band", "gender", "district"),
                       {("*", "*", "E1"): {"teacher": 1.0}, ("*", "*", "E2"): {"clerk": 1.0}}),
        "nace": (("occupation",), {("teacher",): {"P": 1.0}, ("clerk",): {"G": 1.0}}),
    }
    return write_scenario(directory, cells=cells, landuse=landuse, register=register, persons=persons,
                          tables=tables, config={"seed": seed})


# ---------------------------------------------------------------------------
# Tallinn-like city

# rough relative positions (columns east, rows north) in cells from the centre
_TALLINN_SEEDS = {
    "Kesklinna": (1.0, 0.5), "Pohja-Tallinna": (-4.0, 5.0), "Haabersti": (-12.0, 2.0),
    "Kristiine": (-4.5, -1.5), "Mustamäe": (-8.0, -4.5), "Nomme": (-5.0, -9.5),
    "Lasnamäe": (9.5, -1.5), "Pirita": (9.0, 7.0),
}
# residence population shares by district
_TALLINN_POPULATION = {
    "Mustamäe": 0.15, "Lasnamäe": 0.27, "Pohja-Tallinna": 0.135, "Kesklinna": 0.14,
    "Nomme": 0.09, "Haabersti": 0.10, "Kristiine": 0.075, "Pirita": 0.04,
}
_TALLINN_FIELDS = ("A-agri", "C-manu", "F-cons", "G-trade", "H-trans", "J-info", "K-fin", "Q-health")
EDUCATION_FIELD = "P-edu"


def tallinn_geometry(n_cells: int = 628, aspect: float = 1.35):
    """Cells of an elliptical city, ranked by elliptical radius; Voronoi districts."""
    half = 30
    rr, cc = np.mgrid[-half:half, -half:half]
    x = cc.ravel() + 0.5
    y = rr.ravel() + 0.5
    radius = (x / aspect) ** 2 + y ** 2
    order = np.lexsort((cc.ravel(), rr.ravel(), radius))[:n_cells]
    pts = np.column_stack([x[order], y[order]])
    names = list(TALLINN_DISTRICTS)
    seeds = np.array([_TALLINN_SEEDS[n] for n in names])
    owner = _voronoi(pts, seeds)
    rows = rr.ravel()[order] + half
    cols = cc.ravel()[order] + half
    cells = [(f"t{r:02d}{c:02d}", int(r), int(c), names[o]) for r, c, o in zip(rows, cols, owner)]
    if len({c[3] for c in cells}) != len(names):
        raise RuntimeError("a district received no cells")
    return cells


def _tallinn_landuse(rng, cells):
    landuse = []
    profile = {  # mean residential, commercial, industrial floor area per cell (m2)
        "Kesklinna": (9000, 14000, 1500), "Lasnamäe": (16000, 2500, 5000), "Mustamäe": (14000, 2500, 800),
        "Pohja-Tallinna": (8000, 2500, 6000), "Haabersti": (6000, 2000, 1500), "Kristiine": (7000, 4000, 2500),
        "Nomme": (4000, 800, 400), "Pirita": (2500, 500, 200),
    }
    for cid, _, _, d in cells:
        res, com, ind = profile[d]
        if rng.random() < 0.08:
            continue  # parks, water, forest
        landuse.append((cid, "residential", float(rng.gamma(2.0, res / 2.0)) + 50.0))
        if rng.random() < 0.5:
            landuse.append((cid, "commercial", float(rng.gamma(1.5, com / 1.5))))
        if rng.random() < 0.3:
            landuse.append((cid, "office", float(rng.gamma(1.5, com / 1.5))))
        if rng.random() < 0.3:
            landuse.append((cid, "industrial", float(rng.gamma(1.5, ind / 1.5))))
        if rng.random() < 0.12:
            landuse.append((cid, "education", float(rng.uniform(1000, 8000))))
    return landuse


def _mean_district_distance(cells, cell_size: float):
    """Cells x districts mean centroid distance, floored at half a cell."""
    xy = np.array([((c + 0.5) * cell_size, (r + 0.5) * cell_size) for _, r, c, _ in cells])
    owner = np.array([TALLINN_DISTRICTS.index(d) for *_, d in cells])
    dist = np.maximum(np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1]), cell_size / 2)
    return np.column_stack([dist[:, owner == j].mean(axis=1) for j in range(len(TALLINN_DISTRICTS))]), owner


def _gravity_rows(weights, dist, owner, res_share):
    """Expected gravity row per residence district, averaging over residence cells."""
    mass = weights[None, :] / dist
    per_cell = mass / mass.sum(axis=1, keepdims=True)
    out = np.zeros((len(TALLINN_DISTRICTS), len(TALLINN_DISTRICTS)))
    for r in range(len(TALLINN_DISTRICTS)):
        idx = owner == r
        out[r] = res_share[idx] @ per_cell[idx]
    return out


@dataclass
class TallinnDesign:
    files: ScenarioFiles
    target: np.ndarray            # row-normalised generating OD shares
    coherent_mix: np.ndarray      # residence district x coherent field
    gravity: np.ndarray           # expected gravity rows
    education_share: float
    expected_workers: float


def tallinn_scenario(directory, seed: int = 2024, n_persons: int = 262_000, alpha: float = 0.85,
                     employment: float = 0.95, target: np.ndarray | None = None,
                     config: dict | None = None) -> TallinnDesign:
    """Write the Tallinn-like scenario and return its design.

    Each coherent field ``k`` is registered mostly in district ``k``
    (share ``alpha``) and evenly elsewhere.  Education is incoherent
    (census/register about five), so its workers go through the gravity
    rule; its register split is the fixed point of the expected gravity
    flows, which keeps masked gravity draws close to their unmasked
    expectation.  The coherent field mix per residence district is then
    solved so that coherent plus gravity flows reproduce ``target``.
    """
    rng = np.random.default_rng(seed)
    n = len(TALLINN_DISTRICTS)
    target = OD_SYNTHETIC if target is None else np.asarray(target, dtype=float)
    target = target / target.sum(axis=1, keepdims=True)
    cell_size = 500.0

    cells = tallinn_geometry()
    landuse = _tallinn_landuse(rng, cells)
    res_area = {cid: 0.0 for cid, *_ in cells}
    for cid, cat, area in landuse:
        if cat == "residential":
            res_area[cid] += area
    dist, owner = _mean_district_distance(cells, cell_size)
    res = np.array([res_area[cid] for cid, *_ in cells])
    res_share = np.zeros(len(cells))
    for r in range(n):
        idx = owner == r
        res_share[idx] = res[idx] / res[idx].sum()

    # persons, households and ages
    pop = np.array([_TALLINN_POPULATION[d] for d in TALLINN_DISTRICTS])
    counts = np.floor(pop / pop.sum() * n_persons).astype(int)
    counts[np.argmax(pop)] += n_persons - counts.sum()
    ids = rng.permutation(n_persons)
    persons = []
    eligible = np.zeros(n)
    k, h = 0, 0
    for r, d in enumerate(TALLINN_DISTRICTS):
        for size in _households(rng, int(counts[r]), 4):
            ages = [int(rng.integers(20, 70))] + [int(a) for a in rng.integers(0, 85, size - 1)]
            for a in ages:
                persons.append((f"P{ids[k]:07d}", a, "MF"[int(rng.integers(2))], f"H{h:07d}", d))
                eligible[r] += 15 <= a <= 74
                k += 1
            h += 1
    persons.sort(key=lambda p: p[0])

    workers = eligible * employment
    q = EDUCATION_CENSUS / workers.sum()

    # education register: fixed point of expected gravity flows
    w = np.full(n, 1.0 / n)
    for _ in range(500):
        g = _gravity_rows(w, dist, owner, res_share)
        new = (q * workers) @ g
        new /= new.sum()
        if np.abs(new - w).max() < 1e-13:
            w = new
            break
        w = new
    gravity = _gravity_rows(w, dist, owner, res_share)

    spread = alpha * np.eye(n) + (1 - alpha) / n
    coherent_od = (target - q * gravity) / (1 - q)
    mix = (coherent_od - (1 - alpha) / n) / alpha
    if np.any(mix < 0):
        raise ValueError(f"target shares are not reachable with alpha={alpha} and education share {q:.3f}; "
                         f"min mix {mix.min():.4f} (the education census is fixed, so use more persons)")
    mix /= mix.sum(axis=1, keepdims=True)

    field_workers = (workers * (1 - q)) @ mix
    register = []
    for j, d in enumerate(TALLINN_DISTRICTS):
        for f, code in enumerate(_TALLINN_FIELDS):
            register.append((d, code, int(round(field_workers[f] * spread[f, j]))))
    edu = np.floor(w * EDUCATION_REGISTER).astype(int)
    edu[np.argsort(-(w * EDUCATION_REGISTER - edu), kind="stable")[:EDUCATION_REGISTER - edu.sum()]] += 1
    for j, d in enumerate(TALLINN_DISTRICTS):
        register.append((d, EDUCATION_FIELD, int(edu[j])))

    occupations = [f"worker-{code}" for code in _TALLINN_FIELDS]
    occ_rows = {}
    for r, d in enumerate(TALLINN_DISTRICTS):
        row = {o: employment * (1 - q) * mix[r, f] for f, o in enumerate(occupations)}
        row["teacher"] = employment * q
        row[NOT_EMPLOYED] = 1 - employment
        occ_rows[("*", "*", d)] = row
    nace_rows = {(o,): {code: 1.0} for o, code in zip(occupations, _TALLINN_FIELDS)}
    nace_rows[("teacher",)] = {EDUCATION_FIELD: 1.0}

    cfg = {"seed": seed}
    cfg.update(config or {})
    files = write_scenario(directory, cells=cells, landuse=landuse, register=register, persons=persons,
                           tables={"occupation": (("age_band", "gender", "district"), occ_rows),
                                   "nace": (("occupation",), nace_rows)},
                           config=cfg, od_reference=(TALLINN_DISTRICTS, OD_MOBILE))
    write_od_long(Path(directory) / "generating_od.csv", TALLINN_DISTRICTS, target)
    return TallinnDesign(files, target, mix, gravity, float(q), float(workers.sum()))
