"""Shared plumbing: stable seeded RNG derivation, JSONL and binary file
helpers, and an order-preserving parallel map.

All randomness in the pipeline flows through :func:`derive_rng` /
:func:`derive_unit` keyed on (seed, label, item-id) so output is a pure
function of inputs regardless of thread count or arrival order.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Iterator, Sequence, TypeVar

T = TypeVar("T")
U = TypeVar("U")


def _digest(seed: int, *parts: str) -> bytes:
    key = ":".join([str(seed), *parts])
    return hashlib.sha256(key.encode("utf-8")).digest()


def derive_rng(seed: int, *parts: str) -> random.Random:
    """A random.Random seeded stably from (seed, parts). Platform-stable."""
    return random.Random(int.from_bytes(_digest(seed, *parts)[:8], "little"))


def derive_unit(seed: int, *parts: str) -> float:
    """A stable u in [0, 1) derived from (seed, parts)."""
    return int.from_bytes(_digest(seed, *parts)[:8], "little") / 2.0**64


def derive_int(seed: int, *parts: str, bits: int = 32) -> int:
    """A stable non-negative integer derived from (seed, parts)."""
    return int.from_bytes(_digest(seed, *parts)[: bits // 8], "little")


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no ASCII escaping, compact separators."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path: str, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    return n


def parallel_map(fn: Callable[[T], U], items: Sequence[T], threads: int) -> list[U]:
    """Map preserving input order; results identical for any thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Binary file primitives: little-endian integers, length-prefixed strings.


def write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def write_u64(fh, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def write_f64(fh, value: float) -> None:
    fh.write(struct.pack("<d", value))


def write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    write_u32(fh, len(raw))
    fh.write(raw)


def read_u32(fh) -> int:
    return struct.unpack("<I", fh.read(4))[0]


def read_u64(fh) -> int:
    return struct.unpack("<Q", fh.read(8))[0]


def read_f64(fh) -> float:
    return struct.unpack("<d", fh.read(8))[0]


def read_str(fh) -> str:
    n = read_u32(fh)
    return fh.read(n).decode("utf-8")
