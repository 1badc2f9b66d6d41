"""Work-district assignment.

Workers of coherent fields draw a district from P(district | field) masked by
the remaining register capacity of that field.  Workers pooled into "Other"
(and coherent workers whose field ran out of usable capacity) use the
gravity rule: district probability proportional to remaining "Other"
employment divided by the mean distance from the residence cell to the
district's cells.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import OTHER, Grid, Person
from .distributions import ConditionalTable, RandomStream, inverse_cdf, lookup, masked_distribution
from .errors import CapacityExhaustedError, ConfigurationError, ContractViolation
from .residence import apportion

log = logging.getLogger(__name__)

FIELD_EXHAUSTED = "field_capacity_exhausted"
OTHER_EXHAUSTED = "other_capacity_exhausted"


@dataclass
class CapacityLedger:
    """Remaining jobs per (district, field); ``districts`` fixes the column order."""

    districts: tuple[str, ...]
    initial: dict[str, np.ndarray]
    remaining: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.districts = tuple(self.districts)
        self.initial = {f: np.asarray(v, dtype=np.int64).copy() for f, v in self.initial.items()}
        if not self.remaining:
            self.remaining = {f: v.copy() for f, v in self.initial.items()}
        for f, v in self.initial.items():
            if v.shape != (len(self.districts),) or np.any(v < 0):
                raise ContractViolation(f"bad capacity vector for field {f!r}")

    def index(self, district: str) -> int:
        return self.districts.index(district)

    def take(self, code: str, j: int) -> None:
        if self.remaining[code][j] <= 0:
            raise CapacityExhaustedError(f"no capacity left for {code!r} in {self.districts[j]!r}")
        self.remaining[code][j] -= 1

    def assigned(self, code: str) -> np.ndarray:
        return self.initial[code] - self.remaining[code]

    def total_assigned(self) -> int:
        return int(sum(self.assigned(f).sum() for f in self.initial))

    def pooled_remaining(self) -> np.ndarray:
        return sum(self.remaining.values(), np.zeros(len(self.districts), dtype=np.int64))

    def as_dict(self, which: str = "initial") -> dict[tuple[str, str], int]:
        src = self.initial if which == "initial" else self.remaining
        return {(d, f): int(v[j]) for f, v in src.items() for j, d in enumerate(self.districts)}


def scale_capacities(register: dict[tuple[str, str], int], synthetic_counts: dict[str, int],
                     coherent, districts) -> CapacityLedger:
    """Register employment rescaled to the synthetic worker counts.

    Each coherent field keeps its register split across districts but sums
    to the number of synthetic workers in that field.  "Other" capacity is
    the register employment not claimed by coherent fields, rescaled to the
    number of synthetic workers labelled "Other".  Rounding is largest
    remainder with ties going to the smaller district id.
    """
    districts = tuple(districts)
    ties = list(districts)

    def scaled(weights, n):
        return apportion(weights, n, ties)

    initial = {}
    claimed = np.zeros(len(districts))
    all_reg = np.array([sum(n for (d, _), n in register.items() if d == dd) for dd in districts], dtype=float)
    for code in sorted(coherent):
        reg = [register.get((d, code), 0) for d in districts]
        if sum(reg) == 0 and synthetic_counts.get(code, 0) == 0:
            initial[code] = [0] * len(districts)
            continue
        if sum(reg) == 0:
            raise ConfigurationError(f"field {code!r} is marked coherent but has no register employment")
        claimed += reg
        initial[code] = scaled(reg, synthetic_counts.get(code, 0))
    n_other = synthetic_counts.get(OTHER, 0)
    residual = np.maximum(all_reg - claimed, 0)
    if residual.sum() <= 0:
        if n_other:
            log.warning("no register employment left for %s; using total employment as gravity mass", OTHER)
        residual = all_reg
    if n_other and residual.sum() <= 0:
        raise ConfigurationError("register has no employees at all")
    initial[OTHER] = scaled(list(residual), n_other) if n_other else [0] * len(districts)
    return CapacityLedger(districts, initial)


def district_table_from_register(register, fields, districts) -> ConditionalTable:
    """P(district | field) proportional to register employment."""
    rows = {}
    for code in fields:
        reg = np.array([register.get((d, code), 0) for d in districts], dtype=float)
        if reg.sum() > 0:
            rows[(code,)] = reg / reg.sum()
    return ConditionalTable("work_district", ("nace",), tuple(districts), rows, backoff=())


def _district_row(table: ConditionalTable, code: str, districts) -> np.ndarray:
    row = lookup(table, (code,), backoff=False)
    out = np.zeros(len(districts))
    for o, p in zip(table.outcomes, row):
        if p > 0:
            if o not in districts:
                raise ConfigurationError(f"table {table.name!r} names unknown district {o!r}")
            out[districts.index(o)] = p
    return out


def assign_district_coherent(person: Person, row, ledger: CapacityLedger, stream: RandomStream) -> str | None:
    """Capacity-masked draw of a work district; ``None`` means the field is exhausted."""
    cap = ledger.remaining[person.nace]
    try:
        p = masked_distribution(row, cap)
    except CapacityExhaustedError:
        return None
    j = inverse_cdf(p, stream.value(0))
    ledger.take(person.nace, j)
    return ledger.districts[j]


def gravity_probabilities(weights, distances) -> np.ndarray:
    """Employment over distance, normalised over districts with positive weight."""
    w = np.asarray(weights, dtype=float)
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ContractViolation("district distances must be positive")
    mass = np.where(w > 0, w / d, 0.0)
    total = mass.sum()
    if total <= 0:
        raise CapacityExhaustedError("no district has gravity mass")
    return mass / total


def assign_district_gravity(person: Person, ledger: CapacityLedger, grid: Grid, stream: RandomStream,
                            masked: bool = True, draw: int = 0) -> tuple[str, str | None]:
    """Gravity draw for one worker.

    Returns the district and the escalation reason (``None`` normally,
    :data:`OTHER_EXHAUSTED` when every "Other" job is taken and the pooled
    remaining capacity of all fields had to serve as mass instead).
    """
    if person.residence_cell is None:
        raise ContractViolation(f"person {person.id!r} has no residence cell")
    dist = grid.district_distances(person.residence_cell, ledger.districts)
    u = stream.value(draw)
    if not masked:
        mass = ledger.initial[OTHER]
        if mass.sum() <= 0:
            mass = sum(ledger.initial.values())
        j = inverse_cdf(gravity_probabilities(mass, dist), u)
        return ledger.districts[j], None
    other = ledger.remaining[OTHER]
    if other.sum() > 0:
        j = inverse_cdf(gravity_probabilities(other, dist), u)
        ledger.take(OTHER, j)
        return ledger.districts[j], None
    pooled = ledger.pooled_remaining()
    if pooled.sum() <= 0:
        raise CapacityExhaustedError("every job in the ledger is taken")
    j = inverse_cdf(gravity_probabilities(pooled, dist), u)
    code = max(ledger.remaining, key=lambda f: (ledger.remaining[f][j], f))
    ledger.take(code, j)
    return ledger.districts[j], OTHER_EXHAUSTED


@dataclass
class Escalation:
    person_id: str
    nace_code: str
    reason: str


def assign_work_districts(persons, grid: Grid, ledger: CapacityLedger, table: ConditionalTable,
                          stream: RandomStream, masked: bool = True) -> list[Escalation]:
    """Sequential district assignment of every employed person, in person-id order.

    This is the one stage that must run serially: each draw depends on the
    capacity left by the previous ones.
    """
    districts = ledger.districts
    rows: dict[str, np.ndarray] = {}
    escalations = []
    for p in sorted((p for p in persons if p.employed and p.nace is not None), key=lambda p: p.id):
        s = stream.split(p.id)
        if p.nace != OTHER:
            if p.nace not in ledger.initial:
                raise ConfigurationError(f"field {p.nace!r} is neither coherent nor {OTHER}")
            if p.nace not in rows:
                rows[p.nace] = _district_row(table, p.nace, districts)
            d = assign_district_coherent(p, rows[p.nace], ledger, s)
            if d is not None:
                p.work_district = d
                continue
            escalations.append(Escalation(p.id, p.nace, FIELD_EXHAUSTED))
        d, reason = assign_district_gravity(p, ledger, grid, s, masked, draw=1)
        if reason is not None:
            escalations.append(Escalation(p.id, p.nace, reason))
        p.work_district = d
    if escalations:
        log.warning("%d workers escalated to the gravity path", len(escalations))
    return escalations


def write_escalations(escalations, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id", "nace_code", "reason"])
        for e in escalations:
            w.writerow([e.person_id, e.nace_code, e.reason])


def read_escalations(path) -> list[Escalation]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [Escalation(r["person_id"], r["nace_code"], r["reason"]) for r in csv.DictReader(fh)]
