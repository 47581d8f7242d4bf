"""JSON Lines encoding of supervised ordering examples.

One record per line: ``{"x": [[...], ...], "y": [...], "meta": {...}}``
where ``x`` is the set (n rows of d floats) and ``y`` the target order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .checkpoint import atomic_write_bytes

__all__ = ["OrderingExample", "DatasetError", "dumps_example", "write_jsonl", "read_jsonl"]


class DatasetError(ValueError):
    pass


@dataclass
class OrderingExample:
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]


def dumps_example(ex: OrderingExample) -> str:
    record = {"x": np.asarray(ex.x, dtype=np.float64).tolist(), "y": [int(v) for v in ex.y], "meta": ex.meta}
    return json.dumps(record, separators=(",", ":"))


def write_jsonl(path, examples: Iterable[OrderingExample]) -> int:
    """Atomically write ``examples``; returns the record count."""
    lines = [dumps_example(ex) for ex in examples]
    atomic_write_bytes(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))
    return len(lines)


def read_jsonl(path) -> list[OrderingExample]:
    out = []
    dim = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                x = np.asarray(rec["x"], dtype=np.float64)
                y = np.asarray(rec["y"], dtype=np.int64)
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if x.ndim != 2 or y.shape != (x.shape[0],) or not np.array_equal(np.sort(y), np.arange(x.shape[0])):
                raise DatasetError(f"{path}:{lineno}: y must be a permutation of the {len(x)} rows of x")
            if dim is None:
                dim = x.shape[1]
            elif x.shape[1] != dim:
                raise DatasetError(f"{path}:{lineno}: feature dimension {x.shape[1]} differs from {dim}")
            out.append(OrderingExample(x, y, rec.get("meta", {})))
    return out
