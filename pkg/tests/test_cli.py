import json
import shutil
import subprocess
import sys

import pytest

from anchorassign.cli import main
from anchorassign.fixtures import toy_scenario
from anchorassign.ingest import load_scenario
from anchorassign.pipeline import POPULATION_COLUMNS, STAGES, run

OUTPUTS = ("population_out.csv", "consistency_report.csv", "escalations.csv", "capacities.csv",
           "od_matrix.csv", "cell_counts_residents.csv", "cell_counts_workers.csv", "cell_counts.geojson",
           "nace_report.csv")


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    return toy_scenario(tmp_path_factory.mktemp("toy"), seed=12, n_districts=4, rows=7, cols=7,
                        n_persons=900, incoherent_field="K")


def read(d, name):
    return (d / name).read_bytes()


def test_full_run_writes_every_output(scenario, tmp_path):
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path)]) == 0
    for name in OUTPUTS + ("run_summary.json",):
        assert (tmp_path / name).exists(), name
    header = (tmp_path / "population_out.csv").read_text().splitlines()[0]
    assert header == ",".join(POPULATION_COLUMNS)
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert summary["complete"] and summary["stage"] == "report" and summary["status"] == "ok"


def test_threads_do_not_change_outputs(scenario, tmp_path):
    for threads in (1, 8):
        assert main(["--config", str(scenario.config_path), "--out", str(tmp_path / f"t{threads}"),
                     "--threads", str(threads)]) == 0
    for name in OUTPUTS:
        assert read(tmp_path / "t1", name) == read(tmp_path / "t8", name), name


@pytest.mark.parametrize("stop", STAGES[:-1])
def test_stage_then_resume_equals_full_run(scenario, tmp_path, stop):
    full, part, rest = tmp_path / "full", tmp_path / "part", tmp_path / "rest"
    assert main(["--config", str(scenario.config_path), "--out", str(full)]) == 0
    assert main(["--config", str(scenario.config_path), "--out", str(part), "--stage", stop]) == 0
    summary = json.loads((part / "run_summary.json").read_text())
    assert summary["stage"] == stop and not summary["complete"]
    assert main(["--config", str(scenario.config_path), "--out", str(rest), "--resume", str(part)]) == 0
    for name in OUTPUTS:
        assert read(full, name) == read(rest, name), name


def test_resume_in_place(scenario, tmp_path):
    cfg = str(scenario.config_path)
    assert main(["--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["--config", cfg, "--out", str(tmp_path / "b"), "--stage", "nace"]) == 0
    assert main(["--config", cfg, "--out", str(tmp_path / "b"), "--resume", str(tmp_path / "b"),
                 "--stage", "lastmile"]) == 0
    assert main(["--config", cfg, "--out", str(tmp_path / "b"), "--resume", str(tmp_path / "b")]) == 0
    for name in OUTPUTS:
        assert read(tmp_path / "a", name) == read(tmp_path / "b", name), name


def test_partial_population_leaves_later_columns_empty(scenario, tmp_path):
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path), "--stage", "residence"]) == 0
    rows = (tmp_path / "population_out.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[5] and r.endswith(",,,,,") for r in rows)


def test_seed_changes_results(scenario, tmp_path):
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert read(tmp_path / "a", "population_out.csv") != read(tmp_path / "b", "population_out.csv")


def test_resume_with_other_seed_is_rejected(scenario, tmp_path, capsys):
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path / "a"), "--stage", "nace"]) == 0
    code = main(["--config", str(scenario.config_path), "--out", str(tmp_path / "b"),
                 "--resume", str(tmp_path / "a"), "--seed", "77"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigurationError"


def test_missing_config_gives_structured_error(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigurationError" and "nope.json" in err["message"]


def test_schema_error_reports_location(scenario, tmp_path, capsys):
    src = scenario.config_path.parent
    dst = tmp_path / "broken"
    shutil.copytree(src, dst)
    lines = (dst / "persons.csv").read_text().splitlines()
    fields = lines[2].split(",")
    fields[1] = "x"
    lines[2] = ",".join(fields)
    (dst / "persons.csv").write_text("\n".join(lines) + "\n")
    assert main(["--config", str(dst / "config.json"), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SchemaError" and err["line"] == "3" and err["column"] == "age"


def test_gravity_mask_and_exponent_flags(scenario, tmp_path):
    assert main(["--config", str(scenario.config_path), "--out", str(tmp_path / "m"),
                 "--gravity-mask", "off", "--distance-exponent", "2"]) == 0
    summary = json.loads((tmp_path / "m" / "run_summary.json").read_text())
    assert summary["gravity_mask"] is False and summary["distance_exponent"] == 2.0


def test_bad_flag_values_exit_with_usage_error(scenario):
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(scenario.config_path), "--threads", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["--config", str(scenario.config_path), "--stage", "bogus"])


def test_module_entry_point(scenario, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "anchorassign", "--config", str(scenario.config_path),
                           "--out", str(tmp_path), "--stage", "nace"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "consistency_report.csv").exists()


def test_gate_off_keeps_mismatched_field(scenario, tmp_path):
    cfg = json.loads(scenario.config_path.read_text())
    cfg["stages"] = {"gate": False}
    alt = scenario.config_path.parent / "nogate.json"
    alt.write_text(json.dumps(cfg))
    state = run(load_scenario(alt), tmp_path)
    assert state.consistency.incoherent_fields == set()
    assert not any(p.nace == "Other" for p in state.persons)
    alt.unlink()
