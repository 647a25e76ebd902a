"""Vector instance footprints: loading, spatial lookup, class statistics.

Footprints arrive as GeoJSON (RFC 7946) polygons in the dataset's projected
CRS. A static grid index keyed by bounding box serves per-tile queries; with
hundreds of thousands of footprints a linear scan per tile would dominate
the pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry import box as shapely_box

Ring = list[tuple[float, float]]


@dataclass(frozen=True)
class InstanceFootprint:
    instance_id: str
    rings: tuple[Ring, ...]
    bbox: tuple[float, float, float, float]
    source_class_hint: Optional[int] = None

    def shape(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.rings[0], list(self.rings[1:]))


@dataclass
class LoadReport:
    footprints: list[InstanceFootprint]
    dropped_degenerate: int = 0
    feature_errors: list[str] = field(default_factory=list)


def _rings_from_coords(coords) -> tuple[Ring, ...]:
    return tuple([tuple(map(float, pt)) for pt in ring] for ring in coords)


def _make_footprint(fid: str, coords, hint: Optional[int], min_area: float):
    rings = _rings_from_coords(coords)
    # rings collapsed to a point or segment are degenerate, not malformed
    if len({pt for pt in rings[0]}) < 3:
        return None
    poly = ShapelyPolygon(rings[0], list(rings[1:]))
    if not poly.is_valid:
        raise ValueError(f"{fid}: invalid polygon")
    if poly.area <= min_area:
        return None
    return InstanceFootprint(
        instance_id=fid,
        rings=rings,
        bbox=tuple(poly.bounds),
        source_class_hint=hint,
    )


def load_footprints(path: Path, min_area: float = 0.0) -> LoadReport:
    """Parse a GeoJSON FeatureCollection into footprints.

    MultiPolygon parts become separate footprints with ``#<part>`` id
    suffixes. Zero-area parts are dropped and counted; features with broken
    geometry are recorded as errors without aborting the file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: not a GeoJSON FeatureCollection")

    report = LoadReport(footprints=[])
    for i, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        fid = str(props.get("id", feature.get("id", f"feat{i}")))
        hint = props.get("class_id")
        hint = int(hint) if hint is not None else None
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        try:
            if gtype == "Polygon":
                parts = [geom["coordinates"]]
            elif gtype == "MultiPolygon":
                parts = list(geom["coordinates"])
            else:
                raise ValueError(f"{fid}: unsupported geometry type {gtype!r}")
            multi = len(parts) > 1
            for j, coords in enumerate(parts):
                part_id = f"{fid}#{j}" if multi else fid
                fp = _make_footprint(part_id, coords, hint, min_area)
                if fp is None:
                    report.dropped_degenerate += 1
                else:
                    report.footprints.append(fp)
        except (ValueError, KeyError, TypeError) as exc:
            report.feature_errors.append(str(exc))
    return report


class FootprintStore:
    """Static grid index over footprint bounding boxes."""

    def __init__(self, footprints: Iterable[InstanceFootprint], cell_size: Optional[float] = None):
        self._footprints = sorted(footprints, key=lambda f: f.instance_id)
        self._cells: dict[tuple[int, int], list[int]] = {}
        if not self._footprints:
            self._cell_size = 1.0
            return
        if cell_size is None:
            spans = [max(f.bbox[2] - f.bbox[0], f.bbox[3] - f.bbox[1]) for f in self._footprints]
            cell_size = 4.0 * max(float(np.median(spans)), 1e-9)
        self._cell_size = cell_size
        for idx, fp in enumerate(self._footprints):
            for cell in self._covered_cells(fp.bbox):
                self._cells.setdefault(cell, []).append(idx)

    def __len__(self) -> int:
        return len(self._footprints)

    def _covered_cells(self, bbox):
        xmin, ymin, xmax, ymax = bbox
        s = self._cell_size
        for ix in range(math.floor(xmin / s), math.floor(xmax / s) + 1):
            for iy in range(math.floor(ymin / s), math.floor(ymax / s) + 1):
                yield (ix, iy)

    def query(self, extent: tuple[float, float, float, float]) -> list[InstanceFootprint]:
        """Footprints whose polygon intersects the closed rectangle, by id."""
        xmin, ymin, xmax, ymax = extent
        rect = shapely_box(xmin, ymin, xmax, ymax)
        candidates: set[int] = set()
        for cell in self._covered_cells(extent):
            candidates.update(self._cells.get(cell, ()))
        hits = []
        for idx in candidates:
            fp = self._footprints[idx]
            bx0, by0, bx1, by1 = fp.bbox
            if bx0 > xmax or bx1 < xmin or by0 > ymax or by1 < ymin:
                continue
            if fp.shape().intersects(rect):
                hits.append(fp)
        hits.sort(key=lambda f: f.instance_id)
        return hits


@dataclass
class ClassStats:
    """Per-class pixel counts over a whole dataset."""

    k: int
    counts: np.ndarray = None  # type: ignore[assignment]
    class_table_id: str = "flair19"
    dataset_id: str = ""

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.k, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.k,):
            raise ValueError("counts length must equal k")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def frequencies(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(self.k, dtype=np.float64)
        return self.counts / total

    def accumulate(self, labels: np.ndarray) -> "ClassStats":
        if labels.size and labels.max() >= self.k:
            raise ValueError(f"label {labels.max()} outside [0, {self.k})")
        self.counts += np.bincount(labels.ravel().astype(np.int64), minlength=self.k)
        return self

    def merge(self, other: "ClassStats") -> "ClassStats":
        if other.k != self.k:
            raise ValueError("class counts differ")
        self.counts += other.counts
        return self

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "class_table_id": self.class_table_id,
            "k": self.k,
            "total": self.total,
            "counts": self.counts.tolist(),
            "frequencies": self.frequencies().tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClassStats":
        return cls(
            k=obj["k"],
            counts=np.array(obj["counts"], dtype=np.int64),
            class_table_id=obj.get("class_table_id", "flair19"),
            dataset_id=obj.get("dataset_id", ""),
        )
