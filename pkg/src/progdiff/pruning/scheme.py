"""Pruning schemes and the append-only memory bank of evaluated schemes."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..denoiser import DenoiserSpec, PruneMask, count_flops


@dataclass(frozen=True)
class PruningScheme:
    """Channels to remove, per hidden layer.

    ``removed[l]`` is a sorted tuple of channel indices of hidden layer ``l``.
    """

    removed: tuple
    proxy: str = "unknown"
    round: int = 0

    def __post_init__(self):
        object.__setattr__(self, "removed", tuple(tuple(sorted(set(int(j) for j in r))) for r in self.removed))

    @classmethod
    def empty(cls, spec: DenoiserSpec, proxy: str = "unknown", round: int = 0) -> "PruningScheme":
        return cls(tuple(() for _ in spec.hidden_widths), proxy, round)

    @classmethod
    def from_remove_map(cls, remove: dict, n_layers: int, proxy: str = "unknown", round: int = 0):
        removed = [()] * n_layers
        for key, idx in remove.items():
            removed[int(key)] = tuple(idx)
        return cls(tuple(removed), proxy, round)

    def remove_map(self) -> dict:
        return {str(l): list(r) for l, r in enumerate(self.removed) if r}

    def mask(self, spec: DenoiserSpec) -> PruneMask:
        return PruneMask.from_removed(spec, dict(enumerate(self.removed)))

    def validate(self, spec: DenoiserSpec) -> None:
        if len(self.removed) != len(spec.hidden_widths):
            raise ValueError(f"scheme covers {len(self.removed)} layers, spec has {len(spec.hidden_widths)}")
        for l, (r, w) in enumerate(zip(self.removed, spec.hidden_widths)):
            if r and (r[0] < 0 or r[-1] >= w):
                raise ValueError(f"layer {l}: channel index out of range for width {w}")
            if len(r) >= w:
                raise ValueError(f"layer {l}: scheme removes every channel")

    def flops(self, spec: DenoiserSpec) -> int:
        return count_flops(spec, self.mask(spec))

    @property
    def n_removed(self) -> int:
        return sum(len(r) for r in self.removed)

    def sort_key(self) -> tuple:
        return self.removed


@dataclass(frozen=True)
class MemoryBankEntry:
    scheme: PruningScheme
    loss: float
    flops: int
    timestamp: float = field(default_factory=time.time)

    def rank_key(self) -> tuple:
        return (self.loss, self.flops, self.scheme.sort_key())

    def to_json(self) -> dict:
        return {
            "round": self.scheme.round,
            "proxy": self.scheme.proxy,
            "remove": {k: v for k, v in self.scheme.remove_map().items()},
            "layers": len(self.scheme.removed),
            "flops": self.flops,
            "loss": self.loss,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MemoryBankEntry":
        scheme = PruningScheme.from_remove_map(d["remove"], int(d["layers"]), d["proxy"], int(d["round"]))
        return cls(scheme, float(d["loss"]), int(d["flops"]), float(d["timestamp"]))


class MemoryBank:
    """Append-only history of ``(scheme, loss)`` pairs.

    With a ``path`` every update is written through to a JSON-lines file
    before :meth:`update` returns.
    """

    def __init__(self, entries=(), path=None):
        self._entries = list(entries)
        self.path = Path(path) if path is not None else None

    @classmethod
    def load(cls, path) -> "MemoryBank":
        path = Path(path)
        entries = []
        if path.exists():
            with open(path) as fh:
                entries = [MemoryBankEntry.from_json(json.loads(line)) for line in fh if line.strip()]
        return cls(entries, path)

    def update(self, entry: MemoryBankEntry) -> "MemoryBank":
        if not math.isfinite(entry.loss):
            raise ValueError("memory bank entries need a finite loss")
        self._entries.append(entry)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
                fh.flush()
        return self

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def ranked(self) -> list:
        """Entries best first (loss, then FLOPs, then scheme)."""
        return sorted(self._entries, key=MemoryBankEntry.rank_key)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)


def memory_bank_update(bank: MemoryBank, entry: MemoryBankEntry) -> MemoryBank:
    return bank.update(entry)
