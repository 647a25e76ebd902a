"""Synthetic source-dataset builder for tests and desk-scale demos.

Builds a small corpus in the source tile container format: smoothed-noise
land cover, rectangular/pentagonal instance footprints burned into the
semantic maps, matching procedural imagery, and one footprints.geojson for
the whole corpus. Everything is a pure function of the seed.

Run directly: ``python -m hyscdg.demo OUT_DIR --tiles 16 --size 128``.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng
from .backend import procedural_texture
from .raster import (
    ClassTable,
    RasterTile,
    SemanticMap,
    TileGeoref,
    default_class_table,
    rasterize_polygon,
)
from .tileio import write_json, write_tile_dir

BACKGROUND_CLASSES = (9, 10, 11, 1, 3)  # vegetation, fields, pervious, bare soil
INSTANCE_CLASSES = (0, 4, 2, 12)  # building, water, impervious, pool


def _background(labels_shape, r: np.random.Generator) -> np.ndarray:
    h, w = labels_shape
    fields = []
    for _ in BACKGROUND_CLASSES:
        coarse = r.standard_normal((max(2, h // 32), max(2, w // 32)))
        fields.append(ndimage.zoom(coarse, (h / coarse.shape[0], w / coarse.shape[1]), order=3))
    stack = np.stack(fields)
    pick = np.argmax(stack, axis=0)
    labels = np.array(BACKGROUND_CLASSES, dtype=np.uint8)[pick]
    return labels


def _instance_polygon(georef: TileGeoref, h, w, r: np.random.Generator):
    """A rectangle or pentagon in projected coordinates, inside the tile."""
    gsd = georef.gsd
    side = r.integers(10, 26)
    row = int(r.integers(2, h - side - 2))
    col = int(r.integers(2, w - side - 2))
    x0 = georef.origin_x + col * gsd
    y0 = georef.origin_y - row * gsd
    sx = side * gsd
    if r.uniform() < 0.5:
        ring = [(x0, y0), (x0 + sx, y0), (x0 + sx, y0 - sx), (x0, y0 - sx), (x0, y0)]
    else:
        ring = [
            (x0, y0),
            (x0 + sx, y0),
            (x0 + sx, y0 - 0.6 * sx),
            (x0 + 0.5 * sx, y0 - sx),
            (x0, y0 - 0.6 * sx),
            (x0, y0),
        ]
    return [ring]


def build_demo_corpus(
    root: Path,
    tiles: int = 16,
    size: int = 128,
    seed: int = 7,
    gsd: float = 0.2,
    table: ClassTable | None = None,
    instances_per_tile: tuple[int, int] = (4, 9),
) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    table = table or default_class_table()
    features = []

    for t in range(tiles):
        tile_id = f"tile{t:03d}"
        r = rng.generator_from_seed(rng.counter_hash(seed, t))
        georef = TileGeoref(
            origin_x=100000.0 + (t % 4) * size * gsd * 2,
            origin_y=6500000.0 - (t // 4) * size * gsd * 2,
            gsd=gsd,
        )
        labels = _background((size, size), r)

        n_inst = int(r.integers(*instances_per_tile))
        for i in range(n_inst):
            rings = _instance_polygon(georef, size, size, r)
            cls = int(INSTANCE_CLASSES[int(r.integers(len(INSTANCE_CLASSES)))])
            mask = rasterize_polygon(rings, georef, size, size)
            labels[mask] = cls
            features.append(
                {
                    "type": "Feature",
                    "id": f"{tile_id}_i{i}",
                    "properties": {"id": f"{tile_id}_i{i}", "class_id": cls},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[list(pt) for pt in ring] for ring in rings],
                    },
                }
            )

        bands = procedural_texture(rng.counter_hash(seed, t, 99), labels.astype(np.int64), table)
        tile = RasterTile(tile_id=tile_id, bands=bands, georef=georef)
        month = 1 + t % 12
        meta_extra = {
            "place": {"locality": f"Testville-{t:02d}", "region": "Fixture County"},
            "acquired": f"2021-{month:02d}-15T{6 + t % 12:02d}:30:00",
        }
        write_tile_dir(root / tile_id, tile, SemanticMap(labels), meta_extra=meta_extra)

    write_json(
        root / "footprints.geojson",
        {"type": "FeatureCollection", "features": features},
    )
    return root


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path)
    parser.add_argument("--tiles", type=int, default=16)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    build_demo_corpus(args.out, tiles=args.tiles, size=args.size, seed=args.seed)
    print(f"wrote {args.tiles} tiles to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
