import json

import pytest

from anchorassign.core import COMMERCIAL, EDUCATION, HIGH_RESIDENTIAL, INDUSTRIAL, LOW_RESIDENTIAL, OPEN_LAND
from anchorassign.errors import ConfigurationError, DuplicateIdError, ReferentialError, SchemaError
from anchorassign.fixtures import toy_scenario
from anchorassign.ingest import ClassificationRules, ScenarioConfig, classify_cells, load_config, load_scenario


@pytest.fixture
def scenario_dir(tmp_path):
    return toy_scenario(tmp_path / "s", seed=4, n_persons=120)


def test_load_toy_scenario(scenario_dir):
    sc = load_scenario(scenario_dir.config_path)
    assert len(sc.persons) == 120
    assert set(sc.grid.districts) == set(scenario_dir.districts)
    assert {"occupation", "nace"} <= set(sc.tables)
    assert sc.tables["occupation"].backoff == ("district", "age_band")
    assert len(sc.config.config_hash) == 64
    assert sum(len(d.cell_ids) for d in sc.grid.districts.values()) == len(sc.grid.cells)


def test_seed_override(scenario_dir):
    assert load_scenario(scenario_dir.config_path, seed=99).config.seed == 99


def test_classification_rules():
    rules = ClassificationRules()
    landuse = {
        "a": {"residential": 6000.0},
        "b": {"residential": 4999.0},
        "c": {"residential": 100.0, "office": 200.0},
        "d": {"industrial": 50.0, "commercial": 50.0},
        "e": {},
        "f": {"education": 10.0, "residential": 10.0},
        "g": {"industrial": 9.0},
    }
    got = classify_cells(landuse, rules)
    assert got == {"a": HIGH_RESIDENTIAL, "b": LOW_RESIDENTIAL, "c": COMMERCIAL, "d": COMMERCIAL,
                   "e": OPEN_LAND, "f": EDUCATION, "g": INDUSTRIAL}


def test_classification_threshold_is_configurable():
    rules = ClassificationRules(residential_threshold_m2=100.0)
    assert classify_cells({"a": {"residential": 150.0}}, rules) == {"a": HIGH_RESIDENTIAL}


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(coherence_threshold=1.0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(seed=-1)
    with pytest.raises(ConfigurationError):
        ScenarioConfig(residence_weighting="class")
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_dict({"bogus": 1})


def test_age_band_and_eligibility():
    cfg = ScenarioConfig()
    assert cfg.age_band(20) == "20-24"
    assert cfg.age_band(4) == "0-4"
    assert cfg.eligible(15) and cfg.eligible(74)
    assert not cfg.eligible(14) and not cfg.eligible(75)


def rewrite(path, old, new):
    text = path.read_text(encoding="utf-8")
    assert old in text
    path.write_text(text.replace(old, new, 1), encoding="utf-8")


def test_bad_integer_reports_line_and_column(scenario_dir):
    persons = scenario_dir.config_path.parent / "persons.csv"
    lines = persons.read_text().splitlines()
    parts = lines[3].split(",")
    parts[1] = "old"
    lines[3] = ",".join(parts)
    persons.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError) as exc:
        load_scenario(scenario_dir.config_path)
    assert exc.value.line == 4 and exc.value.column == "age"
    assert "line 4" in str(exc.value)


def test_duplicate_person(scenario_dir):
    persons = scenario_dir.config_path.parent / "persons.csv"
    lines = persons.read_text().splitlines()
    persons.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(DuplicateIdError):
        load_scenario(scenario_dir.config_path)


def test_unknown_district_reference(scenario_dir):
    reg = scenario_dir.config_path.parent / "nace_totals.csv"
    reg.write_text(reg.read_text() + "Atlantis,C,5\n")
    with pytest.raises(ReferentialError):
        load_scenario(scenario_dir.config_path)


def test_unknown_landuse_cell(scenario_dir):
    lu = scenario_dir.config_path.parent / "landuse.csv"
    lu.write_text(lu.read_text() + "nowhere,residential,10\n")
    with pytest.raises(ReferentialError):
        load_scenario(scenario_dir.config_path)


def test_unknown_landuse_category(scenario_dir):
    lu = scenario_dir.config_path.parent / "landuse.csv"
    cid = lu.read_text().splitlines()[1].split(",")[0]
    lu.write_text(lu.read_text() + f"{cid},airport,10\n")
    with pytest.raises(SchemaError, match="airport"):
        load_scenario(scenario_dir.config_path)


def test_missing_column(scenario_dir):
    rewrite(scenario_dir.config_path.parent / "cells.csv", "district_id", "district")
    with pytest.raises(SchemaError, match="missing columns"):
        load_scenario(scenario_dir.config_path)


def test_missing_input_file(scenario_dir):
    (scenario_dir.config_path.parent / "landuse.csv").unlink()
    with pytest.raises(ConfigurationError):
        load_scenario(scenario_dir.config_path)


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_config(p)


def test_config_sections_parsed(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({
        "seed": 5, "coherence_threshold": 3.0, "eligibility": {"min_age": 16, "max_age": 70},
        "feasibility_rules": [["manager", 30, 74]], "stages": {"repair": False, "gate": False},
        "gravity_mask": False, "distance_exponent": 2.0, "residence_weighting": "class",
        "class_weights_residence": {"LowResidential": 1, "HighResidential": 3},
        "classification": {"residential_threshold_m2": 2000},
        "tables": {"work_district": "wd"}, "paths": {"persons": "people.csv"},
    }))
    cfg = load_config(p)
    assert (cfg.seed, cfg.coherence_threshold, cfg.min_age, cfg.max_age) == (5, 3.0, 16, 70)
    assert cfg.feasibility_rules[0].min_age == 30
    assert not cfg.repair and not cfg.gate and not cfg.gravity_mask
    assert cfg.distance_exponent == 2.0
    assert cfg.classification.residential_threshold_m2 == 2000
    assert cfg.work_district_table == "wd"
    assert cfg.path(cfg.persons_path) == tmp_path / "people.csv"
