"""System-wide execution profile database.

Stores per (kernel, size bucket, unit) statistics: total runs t, valid runs
v, and the sum/count of fault-free durations. Faulty runs (any class,
timeouts included) advance t only. Cross-process sharing is file based:
load merges by summing counters, so merge order does not matter.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .errors import ProfileLoadError

FORMAT_TAG = "hetrt-profile"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ProfileKey:
    kernel: str
    size_bucket: int
    unit: str


@dataclass
class ProfileRecord:
    runtime_sum_ns: int = 0
    runtime_count: int = 0
    v: int = 0
    t: int = 0

    @property
    def mean_runtime_ns(self) -> Optional[float]:
        if self.runtime_count == 0:
            return None
        return self.runtime_sum_ns / self.runtime_count

    @property
    def fault_probability(self) -> Optional[Fraction]:
        if self.t == 0:
            return None
        return Fraction(self.t - self.v, self.t)


def pow2_bucket(size: int) -> int:
    b = 1
    while b < size:
        b <<= 1
    return b


class ProfileDB:
    """Thread-safe in-process store; explicit persist/load for sharing."""

    def __init__(self, bucketing: str = "exact"):
        if bucketing not in ("exact", "pow2"):
            raise ValueError(f"bucketing must be 'exact' or 'pow2', got {bucketing!r}")
        self.bucketing = bucketing
        self._lock = threading.Lock()
        self._records: dict[ProfileKey, ProfileRecord] = {}

    def key_for(self, kernel: str, size_elements: int, unit: str) -> ProfileKey:
        bucket = size_elements if self.bucketing == "exact" else pow2_bucket(size_elements)
        return ProfileKey(kernel, bucket, unit)

    def record_outcome(self, key: ProfileKey, fault_free: bool,
                       duration_ns: Optional[int] = None) -> None:
        with self._lock:
            rec = self._records.setdefault(key, ProfileRecord())
            rec.t += 1
            if fault_free:
                rec.v += 1
                if duration_ns is not None:
                    rec.runtime_sum_ns += duration_ns
                    rec.runtime_count += 1

    def lookup(self, key: ProfileKey) -> Optional[tuple[Optional[float], int, int]]:
        """(mean fault-free runtime or None, valid runs, total runs)."""
        with self._lock:
            rec = self._records.get(key)
            if rec is None:
                return None
            return rec.mean_runtime_ns, rec.v, rec.t

    def record(self, key: ProfileKey) -> Optional[ProfileRecord]:
        with self._lock:
            return self._records.get(key)

    def __len__(self) -> int:
        return len(self._records)

    def items(self):
        with self._lock:
            return sorted(self._records.items(),
                          key=lambda kv: (kv[0].kernel, kv[0].size_bucket, kv[0].unit))

    # -- persistence --------------------------------------------------------

    def persist(self, path) -> None:
        lines = [f"{FORMAT_TAG}\t{FORMAT_VERSION}"]
        for key, rec in self.items():
            lines.append(f"{key.kernel}\t{key.size_bucket}\t{key.unit}\t"
                         f"{rec.runtime_sum_ns}\t{rec.runtime_count}\t{rec.v}\t{rec.t}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def load(self, path) -> None:
        """Merge the file's records into this database (counters are summed)."""
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines:
            raise ProfileLoadError(f"{path}: empty file, missing header")
        header = lines[0].split("\t")
        if len(header) != 2 or header[0] != FORMAT_TAG:
            raise ProfileLoadError(f"{path}: line 1: bad header {lines[0]!r}")
        if header[1] != str(FORMAT_VERSION):
            raise ProfileLoadError(f"{path}: line 1: unsupported format version {header[1]!r}")
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 7:
                raise ProfileLoadError(f"{path}: line {lineno}: expected 7 fields, got {len(fields)}")
            kernel, bucket, unit, rsum, rcount, v, t = fields
            try:
                key = ProfileKey(kernel, int(bucket), unit)
                add = ProfileRecord(int(rsum), int(rcount), int(v), int(t))
            except ValueError as exc:
                raise ProfileLoadError(f"{path}: line {lineno}: {exc}") from None
            if add.v > add.t or add.runtime_count > add.t or min(add.runtime_sum_ns, add.v) < 0:
                raise ProfileLoadError(f"{path}: line {lineno}: inconsistent counters")
            with self._lock:
                rec = self._records.setdefault(key, ProfileRecord())
                rec.runtime_sum_ns += add.runtime_sum_ns
                rec.runtime_count += add.runtime_count
                rec.v += add.v
                rec.t += add.t
