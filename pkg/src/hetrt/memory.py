"""Sibling/version memory management with checkpointing.

Every registered area starts as one valid sibling in the host space at
version 0. A kernel requesting the area in some memory space gets either
the resident up-to-date sibling or a fresh copy transferred from the
highest-version valid sibling. Write access goes through a provisional
buffer: the version increment and the new payload land only on
commit_success, so a faulty attempt leaves committed state untouched.

Checkpoint discipline (protect=True): before an attempt may touch the only
valid max-version copy of an area in the attempt's space, a backup copy is
created in the host space. Host placement survives device-context resets;
attempts running in the host space itself are not subject to device
invalidation, so no backup is needed there.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .devices import Fleet, ValueType
from .errors import (DataLossError, RegistrationError, UnknownAreaError,
                     UnknownSiblingError, UnknownSpaceError)


@dataclass
class AreaMeta:
    area: str
    size_elements: int
    value_type: ValueType
    elem_width: int
    declared_mode: str

    @property
    def nbytes(self) -> int:
        return self.size_elements * self.elem_width


@dataclass
class Sibling:
    area: str
    space: str
    version: int
    valid: bool
    payload: Optional[bytearray]


@dataclass
class SiblingHandle:
    """Access token for one attempt. Read handles expose the committed
    payload; write handles carry a provisional buffer that replaces the
    sibling payload at commit time (version bumped to `target_version`)."""

    area: str
    space: str
    access: str                      # "r" | "w" | "rw"
    base_version: int
    payload: bytearray               # committed payload (r) or provisional buffer (w/rw)
    meta: AreaMeta
    target_version: Optional[int] = None
    source_space: Optional[str] = None   # where a fresh copy came from, if any
    transfer_ns: int = 0
    checkpoint_ns: int = 0
    committed: bool = False

    @property
    def is_write(self) -> bool:
        return self.access in ("w", "rw")


class MemoryManager:
    """Single logical state machine over all areas; internally serialized."""

    def __init__(self, fleet: Fleet):
        self._fleet = fleet
        self._host = fleet.host_space
        self._lock = threading.RLock()
        self._areas: dict[str, AreaMeta] = {}
        self._by_area: dict[str, dict[str, Sibling]] = {}
        self._next_id = 0
        self.transfer_ns_total = 0
        self.checkpoint_ns_total = 0

    # -- registration -----------------------------------------------------

    def register(self, host_payload, size_elements: int, value_type: ValueType,
                 mode: str = "rw") -> str:
        if not isinstance(value_type, ValueType):
            raise RegistrationError(f"unknown value type: {value_type!r}")
        if size_elements <= 0:
            raise RegistrationError(f"size_elements must be > 0, got {size_elements}")
        if mode not in ("r", "w", "rw"):
            raise RegistrationError(f"mode must be one of r/w/rw, got {mode!r}")
        data = bytearray(bytes(host_payload))
        width = value_type.fixed_width
        if width is None:
            if len(data) % size_elements != 0:
                raise RegistrationError(
                    f"payload of {len(data)} bytes is not a multiple of {size_elements} elements")
            width = len(data) // size_elements
            if width == 0:
                raise RegistrationError("int areas need at least one byte per element")
        elif len(data) != size_elements * width:
            raise RegistrationError(
                f"{value_type.value} area of {size_elements} elements needs "
                f"{size_elements * width} bytes, got {len(data)}")
        with self._lock:
            aid = f"a{self._next_id}"
            self._next_id += 1
            self._areas[aid] = AreaMeta(aid, size_elements, value_type, width, mode)
            self._by_area[aid] = {self._host: Sibling(aid, self._host, 0, True, data)}
        return aid

    # -- request ----------------------------------------------------------

    def request(self, area: str, space: str, access: str, protect: bool = False) -> SiblingHandle:
        if access not in ("r", "w", "rw"):
            raise RegistrationError(f"access must be one of r/w/rw, got {access!r}")
        with self._lock:
            meta = self._areas.get(area)
            if meta is None:
                raise UnknownAreaError(f"area {area!r} is not registered")
            if space not in self._fleet.spaces:
                raise UnknownSpaceError(f"memory space {space!r} does not exist")
            valid = [s for s in self._area_sibs(area) if s.valid]
            if not valid:
                raise DataLossError(f"area {area!r} has no valid sibling left")
            top = max(s.version for s in valid)
            vm = [s for s in valid if s.version == top]
            if access == "r":
                return self._request_read(meta, space, top, vm, protect)
            return self._request_write(meta, space, access, top, vm, protect)

    def _request_read(self, meta, space, top, vm, protect) -> SiblingHandle:
        here = self._by_area[meta.area].get(space)
        transfer = 0
        src_space = None
        if here is not None and here.valid and here.version == top:
            sib = here
        else:
            src = self._pick_source(vm)
            transfer = self._fleet.transfers.cost_ns(src.space, space, meta.nbytes)
            sib = self._ensure_slot(meta.area, space)
            sib.version, sib.valid, sib.payload = top, True, bytearray(src.payload)
            src_space = src.space
            self.transfer_ns_total += transfer
        ck = self._maybe_checkpoint(meta, space, top, protect)
        return SiblingHandle(meta.area, space, "r", top, sib.payload, meta,
                             source_space=src_space, transfer_ns=transfer, checkpoint_ns=ck)

    def _request_write(self, meta, space, access, top, vm, protect) -> SiblingHandle:
        ck = self._maybe_checkpoint(meta, space, top, protect)
        transfer = 0
        src_space = None
        if access == "rw":
            here = self._by_area[meta.area].get(space)
            if here is not None and here.valid and here.version == top:
                buf = bytearray(here.payload)
            else:
                src = self._pick_source(vm)
                transfer = self._fleet.transfers.cost_ns(src.space, space, meta.nbytes)
                buf = bytearray(src.payload)
                src_space = src.space
                self.transfer_ns_total += transfer
        else:
            buf = bytearray(meta.nbytes)
        if space not in self._by_area[meta.area]:
            # materialize the write target; invalid until the attempt commits
            self._by_area[meta.area][space] = Sibling(meta.area, space, top, False, None)
        return SiblingHandle(meta.area, space, access, top, buf, meta,
                             target_version=top + 1, source_space=src_space,
                             transfer_ns=transfer, checkpoint_ns=ck)

    def _maybe_checkpoint(self, meta, space, top, protect) -> int:
        """Back up the sole valid max-version sibling to host memory when the
        attempt is about to touch it in its own space."""
        if not protect or space == self._host:
            return 0
        vm = [s for s in self._area_sibs(meta.area) if s.valid and s.version == top]
        if any(s.space != space for s in vm):
            return 0
        src = vm[0]  # the sole copy, resident in the attempt's space
        host_slot = self._ensure_slot(meta.area, self._host)
        host_slot.version, host_slot.valid, host_slot.payload = top, True, bytearray(src.payload)
        cost = self._fleet.transfers.cost_ns(space, self._host, meta.nbytes)
        self.checkpoint_ns_total += cost
        return cost

    def _pick_source(self, vm: list[Sibling]) -> Sibling:
        # deterministic: prefer the host copy, else lowest space id
        for s in vm:
            if s.space == self._host:
                return s
        return min(vm, key=lambda s: s.space)

    def _ensure_slot(self, area: str, space: str) -> Sibling:
        slot = self._by_area[area].get(space)
        if slot is None:
            slot = Sibling(area, space, 0, False, None)
            self._by_area[area][space] = slot
        return slot

    def _area_sibs(self, area: str) -> Iterable[Sibling]:
        return self._by_area[area].values()

    # -- invalidation / commit ---------------------------------------------

    def invalidate(self, area: str, space: str) -> None:
        with self._lock:
            sib = self._by_area.get(area, {}).get(space)
            if sib is None:
                raise UnknownSiblingError(f"no sibling for area {area!r} in space {space!r}")
            sib.valid = False

    def commit_success(self, handles: Iterable[SiblingHandle]) -> None:
        """Apply the version increments of a fault-free attempt."""
        with self._lock:
            for h in handles:
                if not h.is_write or h.committed:
                    continue
                slot = self._by_area[h.area][h.space]
                slot.version = h.target_version
                slot.valid = True
                slot.payload = h.payload
                h.committed = True

    # -- introspection ------------------------------------------------------

    def meta(self, area: str) -> AreaMeta:
        try:
            return self._areas[area]
        except KeyError:
            raise UnknownAreaError(f"area {area!r} is not registered") from None

    def sibling_table(self) -> list[tuple[str, str, int, bool]]:
        """(area, space, version, valid) rows, deterministically ordered."""
        with self._lock:
            return sorted((a, sp, sib.version, sib.valid)
                          for a, spaces in self._by_area.items()
                          for sp, sib in spaces.items())

    def dump_table(self) -> str:
        lines = ["area\tspace\tversion\tvalid"]
        for a, s, ver, valid in self.sibling_table():
            lines.append(f"{a}\t{s}\t{ver}\t{int(valid)}")
        return "\n".join(lines)

    def payload_snapshot(self) -> dict[tuple[str, str], tuple[int, bool, Optional[bytes]]]:
        with self._lock:
            return {(a, sp): (s.version, s.valid, bytes(s.payload) if s.payload is not None else None)
                    for a, spaces in self._by_area.items() for sp, s in spaces.items()}
