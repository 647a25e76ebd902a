"""Training manifests for the transfer scenarios.

A manifest is an explicit, ordered list of pair references with
dataset-of-origin tags. Composition is exact and counted, never
approximate: a mixed epoch of length E at ratio x holds exactly
``round(x/100 * E)`` target entries (round half up), repeating target pairs
when the target set is smaller than its share. Subsampling for the low-data
regime is uniform without replacement.

Class remapping rewrites semantic and packed change maps through a total
table; dropped classes become the ignore label (255) and are excluded from
metric accumulation via the returned validity mask. The change map is
recomputed from the remapped endpoints, since two classes may merge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .raster import pack_trajectory
from .tileio import write_json

IGNORE_LABEL = 255


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class ManifestSpec:
    scenario: str  # sequential | low-data | mixed | zero-shot
    target_id: str
    source_id: str = ""
    fraction: Optional[float] = None  # percentage, low-data
    ratio: Optional[float] = None  # percentage, mixed
    epoch_length: Optional[int] = None
    repetitions_allowed: bool = True
    seed: int = 0
    remap: Optional[str] = None  # path of the remap table, zero-shot

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "target_id": self.target_id,
            "source_id": self.source_id,
            "fraction": self.fraction,
            "ratio": self.ratio,
            "epoch_length": self.epoch_length,
            "repetitions_allowed": self.repetitions_allowed,
            "seed": self.seed,
            "remap": self.remap,
        }


@dataclass
class Manifest:
    spec: ManifestSpec
    entries: list[dict] = field(default_factory=list)  # {pair_id, origin}

    @property
    def epoch_length(self) -> int:
        return len(self.entries)

    def count_origin(self, origin: str) -> int:
        return sum(1 for e in self.entries if e["origin"] == origin)

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "epoch_length": self.epoch_length,
            "entries": self.entries,
        }

    def save(self, path: Path) -> None:
        write_json(path, self.to_json())


def subsample(pair_ids: list[str], fraction: float, seed: int, target_id: str = "") -> Manifest:
    """Uniform sample without replacement of ceil(fraction% of N) pairs."""
    if not 0 < fraction <= 100:
        raise ValueError("fraction must be in (0, 100]")
    n = len(pair_ids)
    m = math.ceil(fraction / 100.0 * n)
    if m == 0 or n == 0:
        raise ValueError("subsample would be empty")
    r = rng.generator_from_seed(seed)
    picked = r.choice(n, size=m, replace=False)
    spec = ManifestSpec(
        scenario="low-data", target_id=target_id, fraction=fraction, seed=seed,
        repetitions_allowed=False,
    )
    return Manifest(
        spec=spec,
        entries=[{"pair_id": pair_ids[int(i)], "origin": "target"} for i in picked],
    )


def _draw(pool: list[str], count: int, r: np.random.Generator) -> list[str]:
    if count == 0:
        return []
    if not pool:
        raise ValueError("cannot draw from an empty dataset")
    if count <= len(pool):
        idx = r.choice(len(pool), size=count, replace=False)
    else:
        idx = r.choice(len(pool), size=count, replace=True)
    return [pool[int(i)] for i in idx]


def mix(
    target_ids: list[str],
    source_ids: list[str],
    ratio: float,
    epoch_length: int,
    seed: int,
    target_name: str = "",
    source_name: str = "",
) -> Manifest:
    """Blend one epoch: exactly round(ratio% of epoch) target entries,
    the rest from the source, shuffled together."""
    if not 0 <= ratio <= 100:
        raise ValueError("ratio must be in [0, 100]")
    if epoch_length < 1:
        raise ValueError("epoch length must be >= 1")
    n_target = round_half_up(ratio / 100.0 * epoch_length)
    n_source = epoch_length - n_target
    r = rng.generator_from_seed(seed)
    entries = [{"pair_id": p, "origin": "target"} for p in _draw(target_ids, n_target, r)]
    entries += [{"pair_id": p, "origin": "source"} for p in _draw(source_ids, n_source, r)]
    order = r.permutation(len(entries))
    spec = ManifestSpec(
        scenario="mixed",
        target_id=target_name,
        source_id=source_name,
        ratio=ratio,
        epoch_length=epoch_length,
        seed=seed,
    )
    return Manifest(spec=spec, entries=[entries[int(i)] for i in order])


# ---------------------------------------------------------------------------
# class remapping
# ---------------------------------------------------------------------------


@dataclass
class RemapTable:
    mapping: dict[int, int]
    drop: set[int]
    new_class_names: list[str]

    @property
    def new_k(self) -> int:
        return len(self.new_class_names)

    def validate_total(self, k: int) -> None:
        """Every source class in [0, k) must be mapped or explicitly dropped."""
        missing = [c for c in range(k) if c not in self.mapping and c not in self.drop]
        if missing:
            raise ValueError(f"remap table does not cover classes {missing}")
        bad = [c for c, t in self.mapping.items() if not 0 <= t < self.new_k]
        if bad:
            raise ValueError(f"remap targets out of range for classes {bad}")

    def lut(self, k: int) -> np.ndarray:
        """Lookup old id -> new id, with IGNORE_LABEL for dropped classes."""
        self.validate_total(k)
        table = np.full(k, IGNORE_LABEL, dtype=np.uint8)
        for old, new in self.mapping.items():
            if old < k:
                table[old] = new
        return table

    @classmethod
    def from_json(cls, obj: dict) -> "RemapTable":
        return cls(
            mapping={int(a): int(b) for a, b in obj["map"].items()},
            drop={int(c) for c in obj.get("drop", [])},
            new_class_names=list(obj["new_class_table"]),
        )

    @classmethod
    def load(cls, path: Path) -> "RemapTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def remap_labels(labels: np.ndarray, table: RemapTable, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Rewrite a semantic map; returns (new labels, valid mask)."""
    lut = table.lut(k)
    if labels.size and labels.max() >= k:
        raise ValueError(f"label {labels.max()} outside [0, {k})")
    out = lut[labels.astype(np.int64)]
    return out, out != IGNORE_LABEL


def remap_pair_maps(
    first: np.ndarray, second: np.ndarray, table: RemapTable, k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Remap both semantic maps and derive the new packed change map.

    Returns (first', second', packed change, valid mask); the change map is
    recomputed after remapping, so classes merged by the table no longer
    count as change, and invalid pixels are zeroed in the packed map.
    """
    f2, vf = remap_labels(first, table, k)
    s2, vs = remap_labels(second, table, k)
    valid = vf & vs
    packed = pack_trajectory(
        np.where(valid, f2, 0).astype(np.int64),
        np.where(valid, s2, 0).astype(np.int64),
        table.new_k,
    )
    packed[~valid] = 0
    return f2, s2, packed, valid
