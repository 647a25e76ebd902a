"""Tile container format and mask serialization.

One directory per tile:

* ``image.tif``    multi-band TIFF, bands R,G,B,NIR,ELEV, 8-bit, band-sequential,
  with basic GeoTIFF scale/tiepoint tags so GIS viewers place it correctly
* ``semantic.png`` single-channel 8-bit class ids
* ``change.png``   optional 16-bit packed trajectories (c1*K + c2 + 1, 0 = none)
* ``meta.json``    tile id, gsd, origin, CRS, band scaling, place/time metadata

Masks travel as 8-bit PNGs (weight * 255, round half up) or as run-length
lists inside plan files: row-major runs, alternating and starting with the
zero-run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import tifffile
from PIL import Image

from .raster import BAND_NAMES, ChangeMap, RasterTile, SemanticMap, TileGeoref

_TAG_MODEL_PIXEL_SCALE = 33550
_TAG_MODEL_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735


@dataclass
class TileBundle:
    """A tile directory loaded into memory."""

    tile: RasterTile
    semantic: SemanticMap
    change: Optional[ChangeMap]
    meta: dict


def _geo_extratags(georef: TileGeoref):
    tags = [
        (_TAG_MODEL_PIXEL_SCALE, "d", 3, (georef.gsd, georef.gsd, 0.0)),
        (_TAG_MODEL_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, georef.origin_x, georef.origin_y, 0.0)),
    ]
    m = re.fullmatch(r"EPSG:(\d+)", georef.crs or "")
    if m:
        code = int(m.group(1))
        # minimal GeoTIFF key directory: projected CRS by EPSG code
        keys = (1, 1, 0, 2, 1024, 0, 1, 1, 3072, 0, 1, code)
        tags.append((_TAG_GEO_KEYS, "H", len(keys), keys))
    return tags


def save_image_tif(path: Path, tile: RasterTile) -> None:
    tifffile.imwrite(
        path,
        tile.bands,
        photometric="minisblack",
        planarconfig="separate",
        extratags=_geo_extratags(tile.georef),
    )


def load_image_tif(path: Path) -> np.ndarray:
    bands = tifffile.imread(path)
    if bands.ndim == 2:
        bands = bands[None, :, :]
    return np.ascontiguousarray(bands.astype(np.uint8))


def save_semantic_png(path: Path, labels: np.ndarray) -> None:
    if labels.max(initial=0) > 255:
        raise ValueError("semantic ids exceed 8-bit range")
    Image.fromarray(labels.astype(np.uint8)).save(path, format="PNG")


def load_semantic_png(path: Path) -> np.ndarray:
    return np.array(Image.open(path), dtype=np.uint8)


def save_change_png(path: Path, packed: np.ndarray) -> None:
    Image.fromarray(packed.astype(np.uint16)).save(path, format="PNG")


def load_change_png(path: Path) -> np.ndarray:
    return np.array(Image.open(path), dtype=np.uint16)


def save_mask_png(path: Path, mask: np.ndarray) -> None:
    """Serialize a bit or soft mask as 8-bit PNG (weight * 255, round half up)."""
    soft = mask.astype(np.float32)
    data = np.floor(soft * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_mask_png(path: Path) -> np.ndarray:
    return np.array(Image.open(path), dtype=np.uint8).astype(np.float32) / 255.0


def save_meta(path: Path, tile: RasterTile, extra: Optional[dict] = None) -> None:
    meta = {
        "tile_id": tile.tile_id,
        "gsd": tile.georef.gsd,
        "origin": {"x": tile.georef.origin_x, "y": tile.georef.origin_y},
        "crs": tile.georef.crs,
        "bands": list(tile.band_names),
        "band_scaling": {
            "elevation": {
                "min": tile.elevation_range[0],
                "max": tile.elevation_range[1],
            }
        },
    }
    if extra:
        meta.update(extra)
    write_json(path, meta)


def load_meta(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: Path, obj) -> None:
    """Canonical JSON writer: sorted keys, stable float formatting, no timestamps."""
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def write_tile_dir(
    dirpath: Path,
    tile: RasterTile,
    semantic: SemanticMap,
    change: Optional[ChangeMap] = None,
    meta_extra: Optional[dict] = None,
) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    save_image_tif(dirpath / "image.tif", tile)
    save_semantic_png(dirpath / "semantic.png", semantic.labels)
    if change is not None:
        save_change_png(dirpath / "change.png", change.packed)
    save_meta(dirpath / "meta.json", tile, meta_extra)


def read_tile_dir(dirpath: Path, k: Optional[int] = None) -> TileBundle:
    dirpath = Path(dirpath)
    meta = load_meta(dirpath / "meta.json")
    scaling = meta.get("band_scaling", {}).get("elevation", {})
    georef = TileGeoref(
        origin_x=meta["origin"]["x"],
        origin_y=meta["origin"]["y"],
        gsd=meta["gsd"],
        crs=meta.get("crs", "EPSG:2154"),
    )
    tile = RasterTile(
        tile_id=meta["tile_id"],
        bands=load_image_tif(dirpath / "image.tif"),
        georef=georef,
        band_names=tuple(meta.get("bands", BAND_NAMES)),
        elevation_range=(scaling.get("min", 0.0), scaling.get("max", 255.0)),
    )
    semantic = SemanticMap(load_semantic_png(dirpath / "semantic.png"))
    change = None
    change_path = dirpath / "change.png"
    if change_path.exists():
        if k is None:
            raise ValueError("k (class count) required to decode change.png")
        change = ChangeMap(load_change_png(change_path), k)
    return TileBundle(tile=tile, semantic=semantic, change=change, meta=meta)


def list_tile_dirs(root: Path) -> list[Path]:
    """Tile directories under a dataset root, ordered by tile id."""
    root = Path(root)
    return sorted(
        (p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists()),
        key=lambda p: p.name,
    )


# ---------------------------------------------------------------------------
# run-length mask encoding for plan files
# ---------------------------------------------------------------------------


def encode_rle(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating values and starting with the zero-run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change_points = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change_points, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def decode_rle(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(np.prod(shape))
    values = np.arange(len(runs)) % 2
    flat = np.repeat(values.astype(bool), runs)
    if flat.size != total:
        raise ValueError(f"RLE length {flat.size} does not match shape {shape}")
    return flat.reshape(shape)
