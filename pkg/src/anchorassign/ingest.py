"""Scenario loading: JSON config plus UTF-8 CSV inputs, cross-validated.

Input layout (paths relative to the config file unless absolute)::

    persons.csv      person_id,age,gender,household_id,residence_district
    cells.csv        cell_id,row,col,district_id
    landuse.csv      cell_id,category,area_m2          (long format)
    nace_totals.csv  district_id,nace_code,employees
    tables/*.csv     key1,...,keyN,outcome,probability
    od_reference.csv origin_district,dest_district,share   (optional)
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .core import (COMMERCIAL, EDUCATION, HIGH_RESIDENTIAL, INDUSTRIAL, LOW_RESIDENTIAL,
                   OPEN_LAND, PROTOTYPE_WORK_WEIGHTS, RESIDENCE, WORK, Cell, District, Grid,
                   Person, WeightConfig, centroid_of)
from .distributions import ConditionalTable, load_table
from .errors import ConfigurationError, DuplicateIdError, ReferentialError, SchemaError

MAX_SEED = (1 << 64) - 1


@dataclass(frozen=True)
class ClassificationRules:
    """Maps a cell's floor-area profile to a class label.

    The prevalent category is the one with the largest area; ties go to the
    category listed first in ``precedence``.  A prevalent residential
    category gives ``high_residential`` at or above ``residential_threshold_m2``
    and ``low_residential`` below it.  Cells without any floor area get
    ``open_class``.
    """

    categories: dict = field(default_factory=lambda: {
        "office": COMMERCIAL, "commercial": COMMERCIAL,
        "industrial": INDUSTRIAL, "education": EDUCATION})
    precedence: tuple = ("office", "commercial", "industrial", "education", "residential")
    residential_category: str = "residential"
    residential_threshold_m2: float = 5000.0
    high_residential: str = HIGH_RESIDENTIAL
    low_residential: str = LOW_RESIDENTIAL
    open_class: str = OPEN_LAND

    def __post_init__(self):
        object.__setattr__(self, "precedence", tuple(self.precedence))
        known = set(self.categories) | {self.residential_category}
        if set(self.precedence) != known:
            raise ConfigurationError(
                f"classification precedence {list(self.precedence)} must list exactly the categories {sorted(known)}")
        if self.residential_threshold_m2 < 0:
            raise ConfigurationError("residential_threshold_m2 must be >= 0")

    @property
    def class_labels(self) -> set[str]:
        return set(self.categories.values()) | {self.high_residential, self.low_residential, self.open_class}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassificationRules":
        d = dict(d)
        if "precedence" in d:
            d["precedence"] = tuple(d["precedence"])
        return cls(**d)


@dataclass(frozen=True)
class FeasibilityRule:
    occupation: str
    min_age: int = 0
    max_age: int = 200

    def allows(self, occupation: str, age: int) -> bool:
        return occupation != self.occupation or self.min_age <= age <= self.max_age


@dataclass
class ScenarioConfig:
    base_dir: Path = Path(".")
    cell_size: float = 500.0
    seed: int = 0
    coherence_threshold: float = 2.0
    class_weights_work: WeightConfig = field(default_factory=WeightConfig.prototype)
    class_weights_residence: WeightConfig | None = None
    residence_weighting: str = "floor_area"
    classification: ClassificationRules = field(default_factory=ClassificationRules)
    min_age: int = 15
    max_age: int = 74
    age_band_width: int = 5
    feasibility_rules: tuple[FeasibilityRule, ...] = ()
    repair: bool = True
    gate: bool = True
    gravity_mask: bool = True
    distance_exponent: float = 1.0
    threads: int = 1
    occupation_table: str = "occupation"
    nace_table: str = "nace"
    work_district_table: str | None = None
    persons_path: str = "persons.csv"
    cells_path: str = "cells.csv"
    landuse_path: str = "landuse.csv"
    nace_totals_path: str = "nace_totals.csv"
    tables_dir: str = "tables"
    od_reference_path: str | None = None
    config_hash: str = ""

    def __post_init__(self):
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise ConfigurationError("cell_size must be positive")
        if not self.coherence_threshold > 1:
            raise ConfigurationError("coherence_threshold must be > 1")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.residence_weighting not in ("floor_area", "class"):
            raise ConfigurationError("residence_weighting must be 'floor_area' or 'class'")
        if self.residence_weighting == "class" and self.class_weights_residence is None:
            raise ConfigurationError("residence_weighting 'class' needs class_weights_residence")
        if self.age_band_width < 1:
            raise ConfigurationError("age_band_width must be >= 1")
        if self.min_age > self.max_age:
            raise ConfigurationError("min_age exceeds max_age")
        if self.distance_exponent < 0:
            raise ConfigurationError("distance_exponent must be >= 0")
        missing = self.classification.class_labels - set(self.class_weights_work.weights)
        if missing:
            raise ConfigurationError(f"classes {sorted(missing)} have no work weight")

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def age_band(self, age: int) -> str:
        lo = (age // self.age_band_width) * self.age_band_width
        return f"{lo}-{lo + self.age_band_width - 1}"

    def eligible(self, age: int) -> bool:
        return self.min_age <= age <= self.max_age

    @classmethod
    def from_dict(cls, d: dict, base_dir=".", config_hash: str = "") -> "ScenarioConfig":
        d = dict(d)
        kw: dict = {"base_dir": Path(base_dir), "config_hash": config_hash}
        for name in ("cell_size", "seed", "coherence_threshold", "residence_weighting",
                     "age_band_width", "distance_exponent", "threads", "gravity_mask"):
            if name in d:
                kw[name] = d.pop(name)
        if "class_weights_work" in d:
            kw["class_weights_work"] = WeightConfig(d.pop("class_weights_work"), WORK)
        if d.get("class_weights_residence") is not None:
            kw["class_weights_residence"] = WeightConfig(d.pop("class_weights_residence"), RESIDENCE)
        d.pop("class_weights_residence", None)
        if "classification" in d:
            kw["classification"] = ClassificationRules.from_dict(d.pop("classification"))
        elig = d.pop("eligibility", {})
        kw["min_age"] = elig.get("min_age", 15)
        kw["max_age"] = elig.get("max_age", 74)
        rules = []
        for r in d.pop("feasibility_rules", []):
            rules.append(FeasibilityRule(*r) if isinstance(r, (list, tuple)) else FeasibilityRule(**r))
        kw["feasibility_rules"] = tuple(rules)
        stages = d.pop("stages", {})
        kw["repair"] = stages.get("repair", True)
        kw["gate"] = stages.get("gate", True)
        tables = d.pop("tables", {})
        kw["occupation_table"] = tables.get("occupation", "occupation")
        kw["nace_table"] = tables.get("nace", "nace")
        kw["work_district_table"] = tables.get("work_district")
        paths = d.pop("paths", {})
        for key, attr in (("persons", "persons_path"), ("cells", "cells_path"),
                          ("landuse", "landuse_path"), ("nace_totals", "nace_totals_path"),
                          ("tables", "tables_dir"), ("od_reference", "od_reference_path")):
            if key in paths:
                kw[attr] = paths[key]
        if d:
            raise ConfigurationError(f"unknown config keys: {sorted(d)}")
        if isinstance(kw["seed"], bool) or not isinstance(kw["seed"], int):
            raise ConfigurationError("seed must be an integer")
        return cls(**kw)


@dataclass
class Scenario:
    config: ScenarioConfig
    grid: Grid
    persons: list[Person]
    register: dict[tuple[str, str], int]
    tables: dict[str, ConditionalTable]
    landuse: dict[str, dict[str, float]]
    od_reference: dict[tuple[str, str], float] | None = None

    def table(self, name: str) -> ConditionalTable:
        try:
            return self.tables[name]
        except KeyError:
            raise ConfigurationError(f"table {name!r} not found in {self.config.path(self.config.tables_dir)}") from None

    def register_by_field(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (district, code), n in self.register.items():
            out.setdefault(code, {})[district] = n
        return out


def classify_cells(landuse: dict[str, dict[str, float]], rules: ClassificationRules,
                   cell_ids=None) -> dict[str, str]:
    """Class label for every cell; cells absent from ``landuse`` count as empty."""
    rank = {c: i for i, c in enumerate(rules.precedence)}
    ids = landuse.keys() if cell_ids is None else cell_ids
    out = {}
    for cid in ids:
        areas = {k: v for k, v in landuse.get(cid, {}).items() if v > 0}
        if not areas:
            out[cid] = rules.open_class
            continue
        top = max(areas.items(), key=lambda kv: (kv[1], -rank[kv[0]]))[0]
        if top == rules.residential_category:
            big = areas[top] >= rules.residential_threshold_m2
            out[cid] = rules.high_residential if big else rules.low_residential
        else:
            out[cid] = rules.categories[top]
    return out


def _read_csv(path: Path, columns: tuple[str, ...]):
    """Yield ``(line_number, row_dict)`` after checking the header."""
    if not path.exists():
        raise ConfigurationError(f"input file {path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file", path) from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"missing columns {missing}", path, 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(rec)}", path, lineno)
            yield lineno, {h: v.strip() for h, v in zip(header, rec)}


def _as_int(value: str, path, lineno, column, minimum=None) -> int:
    try:
        n = int(value)
    except ValueError:
        raise SchemaError(f"{value!r} is not an integer", path, lineno, column) from None
    if minimum is not None and n < minimum:
        raise SchemaError(f"{n} is below {minimum}", path, lineno, column)
    return n


def _as_float(value: str, path, lineno, column) -> float:
    try:
        x = float(value)
    except ValueError:
        raise SchemaError(f"{value!r} is not a number", path, lineno, column) from None
    if not math.isfinite(x) or x < 0:
        raise SchemaError(f"{x} must be finite and >= 0", path, lineno, column)
    return x


def read_persons(path: Path, district_ids) -> list[Person]:
    persons, seen = [], set()
    for lineno, r in _read_csv(path, ("person_id", "age", "gender", "household_id", "residence_district")):
        pid = r["person_id"]
        if not pid:
            raise SchemaError("empty person_id", path, lineno, "person_id")
        if pid in seen:
            raise DuplicateIdError(f"duplicate person id {pid!r}", path, lineno, "person_id")
        seen.add(pid)
        if r["residence_district"] not in district_ids:
            raise ReferentialError(f"person {pid!r} references unknown district {r['residence_district']!r}",
                                   path, lineno, "residence_district")
        persons.append(Person(pid, _as_int(r["age"], path, lineno, "age", 0), r["gender"],
                              r["household_id"], r["residence_district"]))
    return persons


def read_cells(path: Path):
    rows = {}
    for lineno, r in _read_csv(path, ("cell_id", "row", "col", "district_id")):
        cid = r["cell_id"]
        if cid in rows:
            raise DuplicateIdError(f"duplicate cell id {cid!r}", path, lineno, "cell_id")
        if not r["district_id"]:
            raise SchemaError("empty district_id", path, lineno, "district_id")
        rows[cid] = (_as_int(r["row"], path, lineno, "row"), _as_int(r["col"], path, lineno, "col"),
                     r["district_id"])
    if not rows:
        raise SchemaError("no cells defined", path)
    return rows


def read_landuse(path: Path, cell_ids, rules: ClassificationRules) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {c: {} for c in cell_ids}
    known = set(rules.precedence)
    if not path.exists():
        raise ConfigurationError(f"input file {path} does not exist")
    for lineno, r in _read_csv(path, ("cell_id", "category", "area_m2")):
        cid = r["cell_id"]
        if cid not in out:
            raise ReferentialError(f"land use references unknown cell {cid!r}", path, lineno, "cell_id")
        if r["category"] not in known:
            raise SchemaError(f"unknown land-use category {r['category']!r}", path, lineno, "category")
        area = _as_float(r["area_m2"], path, lineno, "area_m2")
        out[cid][r["category"]] = out[cid].get(r["category"], 0.0) + area
    return out


def read_register(path: Path, district_ids) -> dict[tuple[str, str], int]:
    out: dict[tuple[str, str], int] = {}
    for lineno, r in _read_csv(path, ("district_id", "nace_code", "employees")):
        if r["district_id"] not in district_ids:
            raise ReferentialError(f"unknown district {r['district_id']!r}", path, lineno, "district_id")
        key = (r["district_id"], r["nace_code"])
        if key in out:
            raise DuplicateIdError(f"duplicate register entry {key}", path, lineno)
        out[key] = _as_int(r["employees"], path, lineno, "employees", 0)
    return out


def read_od_reference(path: Path, district_ids) -> dict[tuple[str, str], float]:
    out = {}
    for lineno, r in _read_csv(path, ("origin_district", "dest_district", "share")):
        for col in ("origin_district", "dest_district"):
            if r[col] not in district_ids:
                raise ReferentialError(f"unknown district {r[col]!r}", path, lineno, col)
        key = (r["origin_district"], r["dest_district"])
        if key in out:
            raise DuplicateIdError(f"duplicate OD pair {key}", path, lineno)
        out[key] = _as_float(r["share"], path, lineno, "share")
    return out


def build_grid(cell_rows, landuse, register, config: ScenarioConfig) -> Grid:
    classes = classify_cells(landuse, config.classification, cell_rows.keys())
    members: dict[str, list[str]] = {}
    cells = []
    for cid, (row, col, did) in cell_rows.items():
        cls = classes[cid]
        cells.append(Cell(cid, row, col, centroid_of(row, col, config.cell_size), did,
                          landuse.get(cid, {}), cls, config.class_weights_work[cls]))
        members.setdefault(did, []).append(cid)
    districts = []
    for did, cids in members.items():
        cap = {code: n for (d, code), n in register.items() if d == did}
        districts.append(District(did, did, tuple(cids), cap, sum(cap.values())))
    return Grid(cells, districts, config.cell_size)


def load_config(config_path) -> ScenarioConfig:
    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigurationError(f"config file {config_path} does not exist")
    raw = config_path.read_bytes()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}", config_path) from None
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object", config_path)
    return ScenarioConfig.from_dict(data, config_path.parent, hashlib.sha256(raw).hexdigest())


def load_scenario(config_path, seed: int | None = None) -> Scenario:
    config = load_config(config_path)
    if seed is not None:
        config.seed = seed
        config.__post_init__()
    for rel in (config.persons_path, config.cells_path, config.landuse_path, config.nace_totals_path):
        if not config.path(rel).exists():
            raise ConfigurationError(f"input file {config.path(rel)} does not exist")
    cell_rows = read_cells(config.path(config.cells_path))
    landuse = read_landuse(config.path(config.landuse_path), cell_rows.keys(), config.classification)
    district_ids = {d for (_, _, d) in cell_rows.values()}
    register = read_register(config.path(config.nace_totals_path), district_ids)
    grid = build_grid(cell_rows, landuse, register, config)
    persons = read_persons(config.path(config.persons_path), district_ids)
    tables = {}
    tdir = config.path(config.tables_dir)
    if tdir.is_dir():
        for p in sorted(tdir.glob("*.csv")):
            backoff = ("district", "age_band") if p.stem == config.occupation_table else None
            t = load_table(p, backoff=None)
            if backoff and set(backoff) <= set(t.key_attributes):
                t = ConditionalTable(t.name, t.key_attributes, t.outcomes, t.rows, backoff)
            tables[p.stem] = t
    od = None
    if config.od_reference_path:
        od = read_od_reference(config.path(config.od_reference_path), district_ids)
    return Scenario(config, grid, persons, register, tables, landuse, od)
