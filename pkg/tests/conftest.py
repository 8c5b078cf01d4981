import numpy as np
import pytest

from hetrt import Param, Runtime, RuntimeConfig, ValueType, load_fleet


def fleet_config(units, default_ns_per_byte=0.01, extra_spaces=()):
    """Small fleet builder for tests. `units` are dicts with at least id/kind;
    memory spaces referenced by units are created automatically."""
    spaces = [{"id": "host", "label": "host RAM", "host": True}]
    seen = {"host"}
    for u in units:
        sp = u.get("memory_space", "host")
        if sp not in seen:
            spaces.append({"id": sp})
            seen.add(sp)
    for sp in extra_spaces:
        if sp not in seen:
            spaces.append({"id": sp})
            seen.add(sp)
    return {"default_ns_per_byte": default_ns_per_byte,
            "memory_spaces": spaces, "units": list(units)}


def cpu_gpu_gpu_config(**overrides):
    """1 CPU + 2 GPUs over three memory spaces, fault-free by default."""
    cfg = fleet_config([
        {"id": "cpu0", "kind": "cpu", "memory_space": "host",
         "base_latency_us": 100.0, "per_elem_cost_ns": 10.0, "seed": 1},
        {"id": "gpu1", "kind": "gpu", "memory_space": "gpu1mem",
         "base_latency_us": 20.0, "per_elem_cost_ns": 1.0, "seed": 2},
        {"id": "gpu2", "kind": "gpu", "memory_space": "gpu2mem",
         "base_latency_us": 30.0, "per_elem_cost_ns": 2.0, "seed": 3},
    ])
    for unit in cfg["units"]:
        unit.update(overrides.get(unit["id"], {}))
    return cfg


@pytest.fixture
def basic_fleet():
    return load_fleet(cpu_gpu_gpu_config())


INC_PARAMS = (Param.area("input", "r"), Param.area("output", "w"), Param.scalar("count"))


def inc_body(ctx):
    n = ctx.arg("count")
    src = ctx.request("input", "r")
    dst = ctx.request("output", "w")
    np.add(src[:n], np.float32(1.0), out=dst[:n])


def make_inc_runtime(cfg, rt_config=None, kinds=("cpu", "gpu")):
    """Runtime with an increment task attached for the given unit kinds."""
    rt = Runtime(load_fleet(cfg), rt_config or RuntimeConfig())
    task = rt.declare_task("inc", INC_PARAMS)
    for kind in kinds:
        rt.attach_kernel(task, f"inc_{kind}", kind, inc_body)
    return rt, task


def register_inc_args(rt, data: np.ndarray):
    n = len(data)
    inp = rt.register_data(data.astype(np.float32).tobytes(), n, ValueType.FLOAT32, "r")
    out = rt.register_data(bytes(4 * n), n, ValueType.FLOAT32, "w")
    return inp, out, {"input": inp, "output": out, "count": n}
