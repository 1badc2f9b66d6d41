"""Occupation and industry-field (NACE) assignment plus the register consistency gate."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import NOT_EMPLOYED, OTHER, Person
from .distributions import (CategoricalSampler, ConditionalTable, RandomStream, inverse_cdf_many,
                            lookup)
from .errors import InfeasibleRowError, MissingDistributionError, SchemaError
from .parallel import for_chunks

log = logging.getLogger(__name__)

COHERENT = "coherent"
INCOHERENT = "incoherent"


def default_age_band(age: int, width: int = 5) -> str:
    lo = (age // width) * width
    return f"{lo}-{lo + width - 1}"


def person_key(person: Person, attributes, age_band=default_age_band) -> tuple:
    """Key tuple for a conditional table, built attribute by attribute."""
    out = []
    for attr in attributes:
        if attr == "age_band":
            out.append(age_band(person.age))
        elif attr == "age":
            out.append(str(person.age))
        elif attr == "gender":
            out.append(person.gender)
        elif attr in ("district", "residence_district"):
            out.append(person.residence_district)
        elif attr == "occupation":
            out.append(person.occupation)
        elif attr == "nace":
            out.append(person.nace)
        else:
            raise MissingDistributionError(f"unsupported table key attribute {attr!r}")
    return tuple(out)


def _draw_grouped(persons, table: ConditionalTable, stream: RandomStream, keyfn, backoff=True):
    """Outcome per person from its table row, using ``stream.split(person.id).value(0)``."""
    groups: dict[tuple, list[Person]] = defaultdict(list)
    for p in persons:
        groups[keyfn(p)].append(p)
    out = {}
    for key, members in groups.items():
        row = lookup(table, key, backoff=backoff)
        u = stream.child_uniforms([m.id for m in members])
        for m, i in zip(members, inverse_cdf_many(row, u)):
            out[m.id] = table.outcomes[i]
    return out


def assign_occupation(persons, table: ConditionalTable, stream: RandomStream, *,
                      age_band=default_age_band, min_age: int = 15, max_age: int = 74,
                      threads: int = 1) -> None:
    """Draw an occupation for every working-age person; others become ``not employed``."""
    def work(chunk):
        eligible = [p for p in chunk if min_age <= p.age <= max_age]
        for p in chunk:
            if not min_age <= p.age <= max_age:
                p.occupation = NOT_EMPLOYED
        drawn = _draw_grouped(eligible, table, stream,
                              lambda p: person_key(p, table.key_attributes, age_band))
        for p in eligible:
            p.occupation = drawn[p.id]

    for_chunks(work, persons, threads)


def violates(person: Person, rules) -> bool:
    return person.employed and not all(r.allows(person.occupation, person.age) for r in rules)


def repair_unfeasible(persons, rules, table: ConditionalTable, stream: RandomStream, *,
                      age_band=default_age_band, threads: int = 1) -> list[str]:
    """Re-draw occupations that break an (occupation, min_age, max_age) rule.

    The replacement comes from the person's own table row restricted to
    employed occupations the rules allow at that age, so the number of
    employed persons is unchanged.  Returns the ids of re-drawn persons.
    """
    if not rules:
        return []
    samplers: dict[tuple, CategoricalSampler] = {}

    def work(chunk):
        fixed = []
        for p in chunk:
            if not violates(p, rules):
                continue
            key = person_key(p, table.key_attributes, age_band)
            skey = key + (p.age,)
            if skey not in samplers:
                row = lookup(table, key)
                allowed = np.array([o != NOT_EMPLOYED and all(r.allows(o, p.age) for r in rules)
                                    for o in table.outcomes])
                restricted = np.where(allowed, row, 0.0)
                total = restricted.sum()
                if total <= 0:
                    raise InfeasibleRowError(
                        f"every employed outcome of table {table.name!r} row {key} is infeasible at age {p.age}")
                samplers[skey] = CategoricalSampler(table.outcomes, restricted / total)
            p.occupation = samplers[skey].draw(stream.split(p.id).value(0))
            fixed.append(p.id)
        return fixed

    return [pid for part in for_chunks(work, persons, threads) for pid in part]


def assign_nace(persons, table: ConditionalTable, stream: RandomStream, *, threads: int = 1) -> None:
    """Draw an industry field for every employed person from P(nace | occupation)."""
    def work(chunk):
        employed = [p for p in chunk if p.employed]
        drawn = _draw_grouped(employed, table, stream,
                              lambda p: person_key(p, table.key_attributes), backoff=False)
        for p in employed:
            p.nace = drawn[p.id]
            p.census_nace = None

    for_chunks(work, persons, threads)


@dataclass
class FieldVerdict:
    census_total: int
    register_total: int
    ratio: float
    verdict: str


@dataclass
class ConsistencyReport:
    """Per-field comparison of synthetic (census-derived) and register totals."""

    theta: float
    fields: dict[str, FieldVerdict] = field(default_factory=dict)
    reassigned: list[str] = field(default_factory=list)

    @property
    def coherent_fields(self) -> set[str]:
        return {c for c, v in self.fields.items() if v.verdict == COHERENT}

    @property
    def incoherent_fields(self) -> set[str]:
        return {c for c, v in self.fields.items() if v.verdict == INCOHERENT}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nace_code", "census_total", "register_total", "ratio", "verdict"])
            for code in sorted(self.fields):
                v = self.fields[code]
                w.writerow([code, v.census_total, v.register_total, format_ratio(v.ratio), v.verdict])

    @classmethod
    def read_csv(cls, path, theta: float) -> "ConsistencyReport":
        rep = cls(theta)
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    rep.fields[row["nace_code"]] = FieldVerdict(
                        int(row["census_total"]), int(row["register_total"]),
                        float(row["ratio"]), row["verdict"])
                except (KeyError, ValueError) as exc:
                    raise SchemaError(f"bad consistency report row: {exc}", path, lineno) from None
        return rep


def format_ratio(r: float) -> str:
    return "inf" if math.isinf(r) else f"{r:.6f}"


def coherence_ratio(census: int, register: int) -> float:
    if register == 0:
        return math.inf if census > 0 else 1.0
    return census / register


def is_coherent(ratio: float, theta: float) -> bool:
    if ratio == 0 or math.isinf(ratio):
        return False
    return max(ratio, 1.0 / ratio) <= theta


def register_field_totals(register) -> dict[str, int]:
    """City-level employees per field from a ``(district, code) -> n`` register."""
    out: Counter = Counter()
    for (_, code), n in register.items():
        out[code] += n
    return dict(out)


def census_field_totals(persons) -> dict[str, int]:
    """Employed persons per field as drawn from census tables (before relabelling)."""
    out: Counter = Counter()
    for p in persons:
        code = p.census_nace or p.nace
        if p.employed and code is not None:
            out[code] += 1
    return dict(out)


def consistency_gate(persons, register_totals: dict[str, int], theta: float = 2.0) -> ConsistencyReport:
    """Flag fields whose census and register totals differ by more than ``theta``.

    Workers of incoherent fields are relabelled :data:`OTHER`; their original
    field is kept in ``census_nace`` so that re-running the gate gives the same
    report.  A field missing from the register counts as incoherent.
    """
    census = census_field_totals(persons)
    report = ConsistencyReport(theta)
    for code in sorted((set(census) | set(register_totals)) - {OTHER}):
        c, r = census.get(code, 0), register_totals.get(code, 0)
        ratio = coherence_ratio(c, r)
        report.fields[code] = FieldVerdict(c, r, ratio, COHERENT if is_coherent(ratio, theta) else INCOHERENT)
    bad = report.incoherent_fields
    for p in persons:
        code = p.census_nace or p.nace
        if p.employed and code in bad:
            p.census_nace = code
            p.nace = OTHER
            report.reassigned.append(p.id)
    for code in sorted(bad):
        v = report.fields[code]
        log.info("field %s incoherent (census %d vs register %d); pooled into %s",
                 code, v.census_total, v.register_total, OTHER)
    return report
