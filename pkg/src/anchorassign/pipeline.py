"""Stage orchestration: ingest, residence, nace, subzone, lastmile, report.

Every stage ends with a checkpoint in the output directory
(``population_out.csv`` plus ``run_summary.json`` naming the last completed
stage), so a run stopped with ``stage=...`` can be resumed later and gives
the same files as an uninterrupted run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .core import Person
from .distributions import RandomStream
from .errors import ConfigurationError, SchemaError
from .ingest import Scenario
from .lastmile import assign_work_cells
from .nace import (ConsistencyReport, assign_nace, assign_occupation, consistency_gate,
                   register_field_totals, repair_unfeasible)
from .report import (ODMatrix, build_od_matrix, delta_matrix, nace_totals_report, per_cell_counts,
                     write_cell_counts, write_geojson, write_matrix, write_rows)
from .residence import assign_residences
from .subzone import (Escalation, assign_work_districts, district_table_from_register,
                      read_escalations, scale_capacities, write_escalations)

log = logging.getLogger(__name__)

STAGES = ("ingest", "residence", "nace", "subzone", "lastmile", "report")
POPULATION_COLUMNS = ("person_id", "household_id", "age", "gender", "residence_district", "residence_cell",
                      "occupation", "nace", "work_district", "work_cell_class", "work_cell")
SUMMARY = "run_summary.json"
POPULATION = "population_out.csv"
CONSISTENCY = "consistency_report.csv"
ESCALATIONS = "escalations.csv"
CAPACITIES = "capacities.csv"
CARRIED = (CONSISTENCY, ESCALATIONS, CAPACITIES)


@dataclass
class RunState:
    scenario: Scenario
    persons: list[Person]
    completed: str | None = None
    consistency: ConsistencyReport | None = None
    escalations: list[Escalation] = field(default_factory=list)
    repaired: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    od: ODMatrix | None = None


def write_population(persons, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POPULATION_COLUMNS)
        for p in persons:
            w.writerow([p.id, p.household_id, p.age, p.gender, p.residence_district,
                        p.residence_cell or "", p.occupation or "", p.nace or "", p.work_district or "",
                        p.work_cell_class or "", p.work_cell or ""])


def read_population(path, persons) -> list[Person]:
    """Restore persons from a checkpoint; ids must match the scenario's persons."""
    base = {p.id: p for p in persons}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != POPULATION_COLUMNS:
            raise SchemaError("checkpoint header does not match the population schema", path, 1)
        for lineno, r in enumerate(reader, start=2):
            if r["person_id"] not in base:
                raise SchemaError(f"checkpoint person {r['person_id']!r} is not in the scenario", path, lineno)
            src = base[r["person_id"]]
            out.append(Person(src.id, src.age, src.gender, src.household_id, src.residence_district,
                              *(r[c] or None for c in POPULATION_COLUMNS[5:])))
    if len(out) != len(base):
        raise SchemaError(f"checkpoint has {len(out)} persons, scenario has {len(base)}", path)
    return out


def _summary(state: RunState, threads: int, status: str = "ok", error: str | None = None) -> dict:
    cfg = state.scenario.config
    reasons = Counter(e.reason for e in state.escalations)
    return {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash,
        "stage": state.completed,
        "complete": state.completed == STAGES[-1],
        "status": status,
        "error": error,
        "threads": threads,
        "gravity_mask": cfg.gravity_mask,
        "distance_exponent": cfg.distance_exponent,
        "persons": len(state.persons),
        "employed": sum(p.employed for p in state.persons),
        "repaired": state.repaired,
        "escalations": len(state.escalations),
        "escalations_by_reason": dict(sorted(reasons.items())),
        "stage_seconds": {k: round(v, 4) for k, v in state.timings.items()},
    }


def write_summary(state: RunState, out: Path, threads: int, status="ok", error=None) -> None:
    with open(out / SUMMARY, "w", encoding="utf-8") as fh:
        json.dump(_summary(state, threads, status, error), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stream(state: RunState, label: str) -> RandomStream:
    return RandomStream(state.scenario.config.seed, label)


def stage_residence(state: RunState, out: Path, threads: int) -> None:
    sc = state.scenario
    cfg = sc.config
    assign_residences(state.persons, sc.grid, sc.landuse, _stream(state, "residence"),
                      cfg.residence_weighting, cfg.class_weights_residence,
                      cfg.classification.residential_category, threads)


def stage_nace(state: RunState, out: Path, threads: int) -> None:
    sc = state.scenario
    cfg = sc.config
    occ = sc.table(cfg.occupation_table)
    assign_occupation(state.persons, occ, _stream(state, "occupation"), age_band=cfg.age_band,
                      min_age=cfg.min_age, max_age=cfg.max_age, threads=threads)
    if cfg.repair:
        state.repaired = len(repair_unfeasible(state.persons, cfg.feasibility_rules, occ,
                                               _stream(state, "repair"), age_band=cfg.age_band,
                                               threads=threads))
    assign_nace(state.persons, sc.table(cfg.nace_table), _stream(state, "nace"), threads=threads)
    theta = cfg.coherence_threshold if cfg.gate else math.inf
    state.consistency = consistency_gate(state.persons, register_field_totals(sc.register), theta)
    state.consistency.write_csv(out / CONSISTENCY)


def stage_subzone(state: RunState, out: Path, threads: int) -> None:
    sc = state.scenario
    cfg = sc.config
    districts = tuple(sorted(sc.grid.districts))
    counts = Counter(p.nace for p in state.persons if p.employed and p.nace is not None)
    coherent = state.consistency.coherent_fields
    ledger = scale_capacities(sc.register, counts, coherent, districts)
    if cfg.work_district_table:
        table = sc.table(cfg.work_district_table)
    else:
        table = district_table_from_register(sc.register, coherent, districts)
    state.escalations = assign_work_districts(state.persons, sc.grid, ledger, table,
                                              _stream(state, "subzone"), masked=cfg.gravity_mask)
    write_escalations(state.escalations, out / ESCALATIONS)
    write_rows(out / CAPACITIES,
               ({"district_id": d, "nace_code": f, "capacity": n}
                for (d, f), n in sorted(ledger.as_dict().items())),
               ["district_id", "nace_code", "capacity"])


def stage_lastmile(state: RunState, out: Path, threads: int) -> None:
    sc = state.scenario
    assign_work_cells(state.persons, sc.grid, sc.config.class_weights_work, _stream(state, "lastmile"),
                      sc.config.distance_exponent, threads)


def stage_report(state: RunState, out: Path, threads: int) -> None:
    sc = state.scenario
    districts = tuple(sorted(sc.grid.districts))
    state.od = build_od_matrix(state.persons, districts)
    state.od.write_csv(out / "od_matrix.csv")
    if sc.od_reference is not None:
        ref = ODMatrix.from_long(sc.od_reference, districts)
        write_matrix(out / "delta_matrix.csv", districts, delta_matrix(state.od, ref))
    residents = per_cell_counts(state.persons, "residents")
    workers = per_cell_counts(state.persons, "workers")
    write_cell_counts(out / "cell_counts_residents.csv", sc.grid, residents, "residents")
    write_cell_counts(out / "cell_counts_workers.csv", sc.grid, workers, "workers")
    write_geojson(out / "cell_counts.geojson", sc.grid, residents, workers)
    write_rows(out / "nace_report.csv", nace_totals_report(state.persons, sc.register, state.consistency),
               ["nace_code", "synthetic_total", "register_total", "census_total", "verdict"])


STAGE_FUNCS = {"residence": stage_residence, "nace": stage_nace, "subzone": stage_subzone,
               "lastmile": stage_lastmile, "report": stage_report}


def resume_state(scenario: Scenario, resume, out: Path) -> RunState:
    resume = Path(resume)
    rdir = resume.parent if resume.is_file() else resume
    try:
        summary = json.loads((rdir / SUMMARY).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"no {SUMMARY} in checkpoint {rdir}") from None
    cfg = scenario.config
    if summary.get("status") != "ok" or summary.get("stage") not in STAGES:
        raise ConfigurationError(f"checkpoint {rdir} did not finish a stage cleanly")
    if summary["seed"] != cfg.seed or summary["config_hash"] != cfg.config_hash:
        raise ConfigurationError("checkpoint was produced with a different seed or config")
    persons = read_population(rdir / POPULATION, scenario.persons)
    state = RunState(scenario, persons, summary["stage"], repaired=summary.get("repaired", 0))
    state.timings = {k: v for k, v in summary.get("stage_seconds", {}).items()}
    if rdir.resolve() != out.resolve():
        for name in CARRIED:
            if (rdir / name).exists():
                shutil.copyfile(rdir / name, out / name)
    if STAGES.index(state.completed) >= STAGES.index("nace"):
        state.consistency = ConsistencyReport.read_csv(out / CONSISTENCY, cfg.coherence_threshold)
    if STAGES.index(state.completed) >= STAGES.index("subzone"):
        state.escalations = read_escalations(out / ESCALATIONS)
    return state


def run(scenario: Scenario, out_dir, stage: str = "report", resume=None, threads: int | None = None) -> RunState:
    """Run the stages up to and including ``stage``, writing checkpoints to ``out_dir``."""
    if stage not in STAGES:
        raise ConfigurationError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or scenario.config.threads or 1
    if resume is not None:
        state = resume_state(scenario, resume, out)
    else:
        state = RunState(scenario, [Person(p.id, p.age, p.gender, p.household_id, p.residence_district)
                                    for p in scenario.persons], "ingest")
        write_population(state.persons, out / POPULATION)
        write_summary(state, out, threads)
    start = STAGES.index(state.completed) + 1
    for name in STAGES[start:STAGES.index(stage) + 1]:
        t0 = time.perf_counter()
        try:
            STAGE_FUNCS[name](state, out, threads)
        except Exception as exc:
            write_summary(state, out, threads, status="failed", error=f"{name}: {exc}")
            raise
        state.timings[name] = time.perf_counter() - t0
        state.completed = name
        write_population(state.persons, out / POPULATION)
        write_summary(state, out, threads)
        log.info("stage %s done in %.2fs", name, state.timings[name])
    return state
