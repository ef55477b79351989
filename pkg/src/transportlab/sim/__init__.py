from .engine import Engine, SimResult, run, synth_payload
from .scenario import Scenario, load_scenario, scenario_from_dict
from .trace import TraceLog

__all__ = ["Engine", "SimResult", "run", "synth_payload", "Scenario",
           "load_scenario", "scenario_from_dict", "TraceLog"]
