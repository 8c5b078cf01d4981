"""Built-in synthetic workloads for experiments and tests.

Each workload carries a task signature, kernel variants per unit kind, an
input generator, and a pure reference oracle used to validate committed
outputs. Kernels compute on float32 buffers through the kernel context.

"buggy-inc" exists to demonstrate software-fault detection: its GPU
variant (the fastest in the default fleet) mis-handles the last element,
so same-kernel redundancy agrees on the wrong result while heterogeneous
redundancy flags the divergence.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .api import Param
from .errors import WorkloadError


def _inc_body(ctx):
    n = ctx.arg("count")
    src = ctx.request("input", "r")
    dst = ctx.request("output", "w")
    np.add(src[:n], np.float32(1.0), out=dst[:n])


def _inc_oracle(data: np.ndarray) -> np.ndarray:
    return (data + np.float32(1.0)).astype(np.float32)


def _path_body(ctx):
    n = ctx.arg("count")
    src = ctx.request("input", "r")
    dst = ctx.request("output", "w")
    a = src[:n]
    left = np.concatenate((a[:1], a[:-1]))
    right = np.concatenate((a[1:], a[-1:]))
    np.add(a, np.minimum(np.minimum(left, a), right), out=dst[:n])


def _path_oracle(data: np.ndarray) -> np.ndarray:
    a = data.astype(np.float32)
    left = np.concatenate((a[:1], a[:-1]))
    right = np.concatenate((a[1:], a[-1:]))
    return (a + np.minimum(np.minimum(left, a), right)).astype(np.float32)


def _buggy_inc_body(ctx):
    # off-by-one loop bound: the last element is never written
    n = ctx.arg("count")
    src = ctx.request("input", "r")
    dst = ctx.request("output", "w")
    np.add(src[:n - 1], np.float32(1.0), out=dst[:n - 1])


@dataclass
class Workload:
    name: str
    description: str
    variants: list[tuple[str, str, Callable]]      # (kernel id, unit kind, body)
    oracle: Callable[[np.ndarray], np.ndarray]
    params: tuple[Param, ...] = field(default_factory=lambda: (
        Param.area("input", "r"), Param.area("output", "w"), Param.scalar("count")))

    def make_input(self, size: int, rng: random.Random) -> np.ndarray:
        vals = [rng.uniform(1.0, 2.0) for _ in range(size)]
        return np.asarray(vals, dtype=np.float32)


_REGISTRY: dict[str, Workload] = {}


def _register(w: Workload) -> Workload:
    _REGISTRY[w.name] = w
    return w


_register(Workload(
    name="inc",
    description="increment an array of floats; identical math on every unit kind",
    variants=[("inc_cpu", "cpu", _inc_body), ("inc_gpu", "gpu", _inc_body)],
    oracle=_inc_oracle))

_register(Workload(
    name="pathfinder-like",
    description="neighborhood-minimum reduction; compute intensity set by the fleet speeds",
    variants=[("path_cpu", "cpu", _path_body), ("path_gpu", "gpu", _path_body)],
    oracle=_path_oracle))

_register(Workload(
    name="buggy-inc",
    description="increment with a deterministic off-by-one bug in the GPU variant",
    variants=[("inc_ref_cpu", "cpu", _inc_body), ("inc_buggy_gpu", "gpu", _buggy_inc_body)],
    oracle=_inc_oracle))


def builtin_workloads() -> dict[str, Workload]:
    return dict(_REGISTRY)


def get_workload(name: str) -> Workload:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise WorkloadError(
            f"unknown workload {name!r}; available: {', '.join(sorted(_REGISTRY))}") from None
