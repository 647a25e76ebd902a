"""Raster data model and the geometric primitives built on it.

Everything here is a pure function over numpy arrays: polygon rasterization
(pixel-center, even-odd rule), Euclidean dilation, linear-ramp feathering,
connected components and rasterized convex hulls. Masks are plain arrays:
a BitMask is a bool array, a SoftMask a float32 array with weights in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon as ShapelyPolygon

BitMask = np.ndarray
SoftMask = np.ndarray

BAND_NAMES = ("red", "green", "blue", "nir", "elevation")


class GeometryError(ValueError):
    """Raised for polygons that violate the simple-polygon precondition."""


@dataclass(frozen=True)
class TileGeoref:
    """Maps pixel indices to projected coordinates.

    ``origin`` is the projected position of the tile's top-left corner;
    rows run south (projected y decreases), columns run east.
    """

    origin_x: float
    origin_y: float
    gsd: float
    crs: str = "EPSG:2154"

    def __post_init__(self):
        if self.gsd <= 0:
            raise ValueError(f"gsd must be positive, got {self.gsd}")

    def pixel_centers(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """(cx, cy) projected coordinates of every pixel center."""
        cx = self.origin_x + (np.arange(width) + 0.5) * self.gsd
        cy = self.origin_y - (np.arange(height) + 0.5) * self.gsd
        return cx, cy

    def extent(self, height: int, width: int) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the tile rectangle."""
        return (
            self.origin_x,
            self.origin_y - height * self.gsd,
            self.origin_x + width * self.gsd,
            self.origin_y,
        )


@dataclass
class RasterTile:
    """Multi-band image patch: 8-bit bands stacked as (bands, height, width)."""

    tile_id: str
    bands: np.ndarray
    georef: TileGeoref
    band_names: tuple[str, ...] = BAND_NAMES
    elevation_range: tuple[float, float] = (0.0, 255.0)

    def __post_init__(self):
        if self.bands.ndim != 3:
            raise ValueError("bands must be a (bands, height, width) array")
        if self.bands.shape[0] != len(self.band_names):
            raise ValueError("band count does not match band names")
        if self.bands.shape[1] < 1 or self.bands.shape[2] < 1:
            raise ValueError("empty tile")
        if self.bands.dtype != np.uint8:
            raise ValueError("bands must be uint8")

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]


@dataclass
class SemanticMap:
    """Per-pixel class ids in [0, K)."""

    labels: np.ndarray
    class_table_id: str = "flair19"

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("labels must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def copy(self) -> "SemanticMap":
        return SemanticMap(self.labels.copy(), self.class_table_id)


def pack_trajectory(c1: np.ndarray, c2: np.ndarray, k: int) -> np.ndarray:
    """Encode per-pixel (old, new) class pairs; 0 where classes are equal."""
    changed = c1 != c2
    packed = np.zeros(c1.shape, dtype=np.uint16)
    packed[changed] = (
        c1[changed].astype(np.uint16) * np.uint16(k) + c2[changed].astype(np.uint16) + np.uint16(1)
    )
    return packed


def unpack_trajectory(packed: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode packed values back to (c1, c2); meaningful only where packed > 0."""
    v = packed.astype(np.int64) - 1
    return (v // k).astype(np.int64), (v % k).astype(np.int64)


@dataclass
class ChangeMap:
    """Per-pixel change trajectories, packed as c1 * K + c2 + 1 (0 = no change)."""

    packed: np.ndarray
    k: int

    def __post_init__(self):
        if self.packed.ndim != 2:
            raise ValueError("packed must be 2-D")

    @classmethod
    def from_maps(cls, first: SemanticMap, second: SemanticMap, k: int) -> "ChangeMap":
        if first.shape != second.shape:
            raise ValueError("semantic maps differ in shape")
        return cls(pack_trajectory(first.labels, second.labels, k), k)

    def binary(self) -> BitMask:
        return self.packed != 0

    def decode(self) -> tuple[np.ndarray, np.ndarray]:
        return unpack_trajectory(self.packed, self.k)


@dataclass(frozen=True)
class ClassDef:
    name: str
    color: tuple[int, int, int]
    main: bool = True


@dataclass
class ClassTable:
    table_id: str
    classes: list[ClassDef] = field(default_factory=list)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("a class table needs at least 2 classes")
        colors = [c.color for c in self.classes]
        if len(set(colors)) != len(colors):
            raise ValueError("legend colors must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.classes)

    def color_lut(self) -> np.ndarray:
        """(K, 3) uint8 lookup of legend colors by class id."""
        return np.array([c.color for c in self.classes], dtype=np.uint8)

    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "table_id": self.table_id,
            "classes": [
                {"name": c.name, "color": list(c.color), "main": c.main} for c in self.classes
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClassTable":
        return cls(
            table_id=obj["table_id"],
            classes=[
                ClassDef(c["name"], tuple(c["color"]), bool(c.get("main", True)))
                for c in obj["classes"]
            ],
        )

    @classmethod
    def load(cls, path) -> "ClassTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def default_class_table() -> ClassTable:
    """The 19-entry land cover legend shipped with the package."""
    ref = resources.files("hyscdg.data").joinpath("class_table.json")
    return ClassTable.from_json(json.loads(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# polygon rasterization
# ---------------------------------------------------------------------------


def _validate_rings(rings: list[list[tuple[float, float]]]):
    if not rings or any(len(r) < 3 for r in rings):
        raise GeometryError("polygon needs at least one ring of 3+ vertices")
    shape = ShapelyPolygon(rings[0], rings[1:])
    if not shape.is_valid:
        from shapely.validation import explain_validity

        raise GeometryError(f"invalid polygon: {explain_validity(shape)}")


def rasterize_polygon(
    rings: list[list[tuple[float, float]]],
    georef: TileGeoref,
    height: int,
    width: int,
) -> BitMask:
    """Rasterize a projected polygon onto the tile grid.

    A pixel is set iff its center falls inside the polygon under the even-odd
    rule, so holes are handled by passing them as extra rings. Polygons that
    miss the tile entirely give an all-false mask.
    """
    _validate_rings(rings)
    mask = np.zeros((height, width), dtype=bool)

    xs = np.concatenate([[p[0] for p in r] for r in rings])
    ys = np.concatenate([[p[1] for p in r] for r in rings])
    cx, cy = georef.pixel_centers(height, width)

    col0 = int(np.searchsorted(cx, xs.min(), side="left"))
    col1 = int(np.searchsorted(cx, xs.max(), side="right"))
    row0 = int(np.searchsorted(-cy, -ys.max(), side="left"))
    row1 = int(np.searchsorted(-cy, -ys.min(), side="right"))
    if col0 >= col1 or row0 >= row1:
        return mask

    sub_cx = cx[col0:col1][None, :]
    sub_cy = cy[row0:row1][:, None]
    inside = np.zeros((row1 - row0, col1 - col0), dtype=bool)
    for ring in rings:
        pts = list(ring)
        if pts[0] != pts[-1]:
            pts = pts + [pts[0]]
        for (x1, y1), (x2, y2) in zip(pts[:-1], pts[1:]):
            if y1 == y2:
                continue
            crosses = (y1 > sub_cy) != (y2 > sub_cy)
            x_at = x1 + (sub_cy - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (sub_cx < x_at)
    mask[row0:row1, col0:col1] = inside
    return mask


# ---------------------------------------------------------------------------
# morphology
# ---------------------------------------------------------------------------


def dilate(mask: BitMask, radius: float) -> BitMask:
    """Grow a mask to all pixels within Euclidean distance ``radius``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or not mask.any() or mask.all():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= radius


def feather(core: BitMask, band: float) -> SoftMask:
    """Soft mask: 1 on the core, linear decay to 0 across ``band`` pixels."""
    if band < 0:
        raise ValueError("band must be >= 0")
    if band == 0 or not core.any():
        return core.astype(np.float32)
    dist = ndimage.distance_transform_edt(~core)
    soft = np.clip(1.0 - dist / band, 0.0, 1.0).astype(np.float32)
    soft[core] = 1.0
    return soft


_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def largest_component(mask: BitMask, connectivity: int = 8) -> BitMask:
    """Keep only the largest connected component.

    Ties go to the component whose first pixel in row-major order comes
    first, which keeps results reproducible.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    if not mask.any():
        return np.zeros_like(mask)
    labels, n = ndimage.label(mask, structure=_STRUCT_4 if connectivity == 4 else _STRUCT_8)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) == 1:
        winner = candidates[0]
    else:
        flat = labels.ravel()
        first = np.argmax(np.isin(flat, candidates))
        winner = flat[first]
    return labels == winner


def convex_hull_mask(mask: BitMask) -> BitMask:
    """Rasterized convex hull of the true-pixel centers, union the input.

    Pixel centers on the hull boundary count as inside, which makes already
    convex shapes fixed points and the operation idempotent.
    """
    pts = np.argwhere(mask)
    if len(pts) <= 1:
        return mask.copy()
    hull = _monotone_chain(pts[:, 1], pts[:, 0])
    if len(hull) <= 1:
        return mask.copy()

    r0, c0 = pts[:, 0].min(), pts[:, 1].min()
    r1, c1 = pts[:, 0].max(), pts[:, 1].max()
    rr, cc = np.meshgrid(
        np.arange(r0, r1 + 1, dtype=np.int64),
        np.arange(c0, c1 + 1, dtype=np.int64),
        indexing="ij",
    )
    inside = np.ones(rr.shape, dtype=bool)
    m = len(hull)
    for i in range(m):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % m]
        cross = (bx - ax) * (rr - ay) - (by - ay) * (cc - ax)
        inside &= cross >= 0

    out = mask.copy()
    out[r0 : r1 + 1, c0 : c1 + 1] |= inside
    return out


def _monotone_chain(xs: np.ndarray, ys: np.ndarray) -> list[tuple[int, int]]:
    """Convex hull (Andrew's monotone chain) of integer points, CCW order."""
    pts = sorted(set(zip(xs.tolist(), ys.tolist())))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[int, int]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[int, int]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]
