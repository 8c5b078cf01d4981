"""Built-in fleet configurations.

Both presets model one CPU and two GPUs with dedicated memories (three
memory spaces in total). "default" makes the GPUs the fast units; in
"pathfinder" the CPU kernel runs three times faster than the best GPU,
which places the fault-aware switchover at p = 1 - 1/3.
"""

from __future__ import annotations

import copy
from pathlib import Path

from .devices import Fleet, load_fleet
from .errors import ConfigError

_SPACES = [
    {"id": "host", "label": "host RAM", "host": True},
    {"id": "gpu1mem", "label": "GPU1 memory"},
    {"id": "gpu2mem", "label": "GPU2 memory"},
]


def default_fleet_config() -> dict:
    return copy.deepcopy({
        "default_ns_per_byte": 0.005,
        "memory_spaces": _SPACES,
        "units": [
            {"id": "cpu0", "kind": "cpu", "memory_space": "host",
             "base_latency_us": 100.0, "per_elem_cost_ns": 10.0, "seed": 11},
            {"id": "gpu1", "kind": "gpu", "memory_space": "gpu1mem",
             "base_latency_us": 20.0, "per_elem_cost_ns": 1.0, "seed": 12},
            {"id": "gpu2", "kind": "gpu", "memory_space": "gpu2mem",
             "base_latency_us": 30.0, "per_elem_cost_ns": 2.0, "seed": 13},
        ],
    })


def pathfinder_fleet_config() -> dict:
    return copy.deepcopy({
        "default_ns_per_byte": 0.005,
        "memory_spaces": _SPACES,
        "units": [
            {"id": "cpu0", "kind": "cpu", "memory_space": "host",
             "base_latency_us": 100.0, "per_elem_cost_ns": 10.0, "seed": 21},
            {"id": "gpu1", "kind": "gpu", "memory_space": "gpu1mem",
             "base_latency_us": 300.0, "per_elem_cost_ns": 30.0, "seed": 22},
            {"id": "gpu2", "kind": "gpu", "memory_space": "gpu2mem",
             "base_latency_us": 400.0, "per_elem_cost_ns": 40.0, "seed": 23},
        ],
    })


BUILTIN_FLEETS = {
    "default": default_fleet_config,
    "pathfinder": pathfinder_fleet_config,
}


def fleet_config_from(source) -> dict:
    """Resolve a fleet argument: builtin name, config dict, or YAML path."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    name = str(source)
    if name in BUILTIN_FLEETS:
        return BUILTIN_FLEETS[name]()
    if Path(name).exists():
        import yaml
        with open(name, "r", encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    raise ConfigError(f"unknown fleet {name!r}: not a builtin "
                      f"({', '.join(sorted(BUILTIN_FLEETS))}) and no such file")


def build_fleet(source) -> Fleet:
    return load_fleet(fleet_config_from(source))
