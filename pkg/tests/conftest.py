import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from anchorassign.core import PROTOTYPE_WORK_WEIGHTS, Cell, District, Grid, centroid_of

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def make_grid(layout, cell_size=500.0, weights=PROTOTYPE_WORK_WEIGHTS, landuse=None):
    """Grid from ``{cell_id: (row, col, district, class)}``."""
    cells, members = [], {}
    for cid, (r, c, d, cls) in layout.items():
        cells.append(Cell(cid, r, c, centroid_of(r, c, cell_size), d, (landuse or {}).get(cid, {}),
                          cls, weights.get(cls, 0.0)))
        members.setdefault(d, []).append(cid)
    return Grid(cells, [District(d, d, tuple(ids)) for d, ids in members.items()], cell_size)


@pytest.fixture
def acceptance_record():
    def record(name, ok, detail=""):
        ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
