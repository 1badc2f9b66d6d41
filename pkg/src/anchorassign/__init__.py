"""Census-consistent residence and workplace assignment on a land-use grid."""
from .core import Cell, District, Grid, Person, WeightConfig
from .distributions import ConditionalTable, RandomStream
from .errors import AssignmentError
from .ingest import ScenarioConfig, load_scenario
from .pipeline import STAGES, run

__all__ = ["Cell", "District", "Grid", "Person", "WeightConfig", "ConditionalTable", "RandomStream",
           "AssignmentError", "ScenarioConfig", "load_scenario", "STAGES", "run"]
__version__ = "0.1.0"
