"""Scenario runner, benchmarks and the command-line interface."""

from .runner import Report, ScenarioRun, run_scenario
from .scenario import Scenario, ScenarioError, bundled_scenarios, load_scenario, parse_scenario, resolve_scenario
