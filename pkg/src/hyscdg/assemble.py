"""Generation loop, pair expansion, dataset index and the consistency check.

Output layout, one directory per source tile::

    <root>/<tile_id>/real/{image.tif, semantic.png}
    <root>/<tile_id>/meta.json
    <root>/<tile_id>/v<k>/{image.tif, semantic.png, change_vs_real.png, plan.json}
    <root>/index.json
    <root>/class_stats.json

Pairs come in two flavors: (real, variant) with the change map materialized
on disk, and unordered sibling (variant, variant) pairs whose change map is
derived from the two planned semantic maps on read — plans are exact, so
there is no reason to diff pixels or duplicate rasters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .backend import InpaintBackend, InpaintRequest, render_condition_map
from .footprints import ClassStats, InstanceFootprint
from .planner import ChangePlan, PlanConfig, make_plan
from .raster import ClassTable, RasterTile, pack_trajectory
from .tileio import (
    TileBundle,
    list_tile_dirs,
    load_change_png,
    load_image_tif,
    load_semantic_png,
    read_tile_dir,
    save_change_png,
    save_image_tif,
    save_meta,
    save_semantic_png,
    write_json,
)

CONSISTENCY_THRESHOLD = 0.20


@dataclass
class VariantOutcome:
    variant: int
    plan: Optional[ChangePlan]
    image: Optional[np.ndarray]
    error: Optional[str] = None


def generate_variants(
    bundle: TileBundle,
    footprints: list[InstanceFootprint],
    stats: ClassStats,
    table: ClassTable,
    config: PlanConfig,
    backend: Optional[InpaintBackend],
    master_seed: int,
    variants: Optional[int] = None,
    plan_only: bool = False,
) -> list[VariantOutcome]:
    """Plan (and synthesize, unless ``plan_only``) all variants of one tile.

    A backend failure marks only that variant as failed; planning errors do
    not exist at this level because instance problems are handled inside the
    planner.
    """
    v_count = variants if variants is not None else config.variants
    outcomes: list[VariantOutcome] = []
    for v in range(v_count):
        plan = make_plan(
            bundle.tile,
            bundle.semantic,
            footprints,
            stats,
            table,
            config,
            variant=v,
            master_seed=master_seed,
            meta=bundle.meta,
        )
        if plan_only:
            outcomes.append(VariantOutcome(variant=v, plan=plan, image=None))
            continue
        request = InpaintRequest(
            tile_id=bundle.tile.tile_id,
            variant=v,
            seed=plan.seed,
            prompt=plan.prompt.rendered,
            image=bundle.tile.bands,
            mask=plan.merged_soft,
            condition=render_condition_map(plan.m2.labels, table),
        )
        try:
            result = backend.inpaint(request)
            outcomes.append(VariantOutcome(variant=v, plan=plan, image=result.image))
        except Exception as exc:  # noqa: BLE001 - variant isolation is the contract
            outcomes.append(VariantOutcome(variant=v, plan=plan, image=None, error=str(exc)))
    return outcomes


def write_tile_outputs(
    out_root: Path,
    bundle: TileBundle,
    outcomes: list[VariantOutcome],
    plan_only: bool = False,
) -> None:
    out_root = Path(out_root)
    tile_dir = out_root / bundle.tile.tile_id
    tile_dir.mkdir(parents=True, exist_ok=True)
    if not plan_only:
        real_dir = tile_dir / "real"
        real_dir.mkdir(parents=True, exist_ok=True)
        save_image_tif(real_dir / "image.tif", bundle.tile)
        save_semantic_png(real_dir / "semantic.png", bundle.semantic.labels)
    save_meta(tile_dir / "meta.json", bundle.tile, _meta_extra(bundle.meta))

    for oc in outcomes:
        v_dir = tile_dir / f"v{oc.variant}"
        v_dir.mkdir(parents=True, exist_ok=True)
        write_json(v_dir / "plan.json", oc.plan.to_json())
        if plan_only:
            continue
        save_semantic_png(v_dir / "semantic.png", oc.plan.m2.labels)
        save_change_png(v_dir / "change_vs_real.png", oc.plan.change.packed)
        if oc.image is not None:
            synth = RasterTile(
                tile_id=f"{bundle.tile.tile_id}_v{oc.variant}",
                bands=oc.image,
                georef=bundle.tile.georef,
                band_names=bundle.tile.band_names,
                elevation_range=bundle.tile.elevation_range,
            )
            save_image_tif(v_dir / "image.tif", synth)
        else:
            write_json(v_dir / "error.json", {"variant": oc.variant, "reason": oc.error})


def _meta_extra(meta: dict) -> dict:
    extra = {}
    for key in ("place", "acquired"):
        if key in meta:
            extra[key] = meta[key]
    return extra


def expand_pairs(tile_id: str, variant_records: list[dict], sibling: bool = True) -> list[dict]:
    """Pair records for one tile: every (real, variant) plus, when enabled,
    every unordered (variant, variant) sibling pair."""
    pairs: list[dict] = []
    ok = [r for r in variant_records if r.get("ok")]
    for rec in ok:
        k = rec["variant"]
        pairs.append(
            {
                "pair_id": f"{tile_id}_r_v{k}",
                "tile_id": tile_id,
                "kind": "real_synth",
                "variants": [k],
                "seeds": [rec["seed"]],
                "first": {
                    "image": f"{tile_id}/real/image.tif",
                    "semantic": f"{tile_id}/real/semantic.png",
                },
                "second": {
                    "image": f"{tile_id}/v{k}/image.tif",
                    "semantic": f"{tile_id}/v{k}/semantic.png",
                },
                "change": f"{tile_id}/v{k}/change_vs_real.png",
            }
        )
    if sibling:
        for a in range(len(ok)):
            for b in range(a + 1, len(ok)):
                j, k = ok[a]["variant"], ok[b]["variant"]
                pairs.append(
                    {
                        "pair_id": f"{tile_id}_v{j}_v{k}",
                        "tile_id": tile_id,
                        "kind": "synth_synth",
                        "variants": [j, k],
                        "seeds": [ok[a]["seed"], ok[b]["seed"]],
                        "first": {
                            "image": f"{tile_id}/v{j}/image.tif",
                            "semantic": f"{tile_id}/v{j}/semantic.png",
                        },
                        "second": {
                            "image": f"{tile_id}/v{k}/image.tif",
                            "semantic": f"{tile_id}/v{k}/semantic.png",
                        },
                        "change": None,
                    }
                )
    return pairs


def pair_change_packed(root: Path, pair: dict, k: int) -> np.ndarray:
    """The pair's packed change map, loading it or deriving it from the maps."""
    root = Path(root)
    if pair.get("change"):
        return load_change_png(root / pair["change"])
    first = load_semantic_png(root / pair["first"]["semantic"])
    second = load_semantic_png(root / pair["second"]["semantic"])
    return pack_trajectory(first, second, k)


def consistency_rate(
    planned: np.ndarray, external: np.ndarray, core: np.ndarray
) -> float:
    """Disagreement fraction between an external segmentation and the plan,
    over the inpainted core. Empty cores count as fully consistent."""
    if planned.shape != external.shape:
        raise ValueError("maps differ in shape")
    if not core.any():
        return 0.0
    return float((planned[core] != external[core]).mean())


def consistency_report(planned, external, core) -> dict:
    rate = consistency_rate(planned, external, core)
    return {
        "rate": rate,
        "threshold": CONSISTENCY_THRESHOLD,
        "pass": rate < CONSISTENCY_THRESHOLD,
    }


def build_index(out_root: Path, table: ClassTable, sibling: bool = True) -> dict:
    """Scan a generated dataset and build index.json's content.

    Prevalence, histograms and band statistics are recomputed from the
    rasters on disk, not trusted from the generation run; variants whose
    image is missing land in the failed list but never break the index.
    """
    out_root = Path(out_root)
    k = table.k
    dataset_id = out_root.name
    stats_path = out_root / "class_stats.json"
    if stats_path.exists():
        with open(stats_path, "r", encoding="utf-8") as fh:
            dataset_id = json.load(fh).get("dataset_id") or dataset_id
    pairs: list[dict] = []
    failed: list[dict] = []
    hist = np.zeros(k, dtype=np.int64)
    band_sum = None
    band_sumsq = None
    image_pixels = 0
    gsd = None
    variants_seen = 0

    for tile_dir in list_tile_dirs(out_root):
        tile_id = tile_dir.name
        meta_path = tile_dir / "meta.json"
        with open(meta_path, "r", encoding="utf-8") as fh:
            gsd = json.load(fh)["gsd"]
        records = []
        for v_dir in sorted(tile_dir.glob("v*"), key=lambda p: int(p.name[1:])):
            variant = int(v_dir.name[1:])
            variants_seen = max(variants_seen, variant + 1)
            plan_path = v_dir / "plan.json"
            if not plan_path.exists():
                failed.append({"tile_id": tile_id, "variant": variant, "reason": "missing plan"})
                continue
            with open(plan_path, "r", encoding="utf-8") as fh:
                seed = json.load(fh)["seed"]
            if not (v_dir / "image.tif").exists():
                reason = "missing image"
                err_path = v_dir / "error.json"
                if err_path.exists():
                    with open(err_path, "r", encoding="utf-8") as fh:
                        reason = json.load(fh).get("reason", reason)
                failed.append({"tile_id": tile_id, "variant": variant, "reason": reason})
                records.append({"variant": variant, "seed": seed, "ok": False})
                continue
            records.append({"variant": variant, "seed": seed, "ok": True})
        pairs.extend(expand_pairs(tile_id, records, sibling=sibling))

        for sem_rel in [tile_dir / "real" / "semantic.png"] + [
            tile_dir / f"v{r['variant']}" / "semantic.png" for r in records if r["ok"]
        ]:
            labels = load_semantic_png(sem_rel)
            hist += np.bincount(labels.ravel().astype(np.int64), minlength=k)
        for img_rel in [tile_dir / "real" / "image.tif"] + [
            tile_dir / f"v{r['variant']}" / "image.tif" for r in records if r["ok"]
        ]:
            bands = load_image_tif(img_rel).astype(np.float64)
            if band_sum is None:
                band_sum = np.zeros(bands.shape[0])
                band_sumsq = np.zeros(bands.shape[0])
            band_sum += bands.sum(axis=(1, 2))
            band_sumsq += (bands**2).sum(axis=(1, 2))
            image_pixels += bands.shape[1] * bands.shape[2]

    changed = 0
    pair_pixels = 0
    for pair in pairs:
        packed = pair_change_packed(out_root, pair, k)
        changed += int((packed != 0).sum())
        pair_pixels += packed.size

    mean = (band_sum / image_pixels).tolist() if image_pixels else []
    var = (
        (band_sumsq / image_pixels - (band_sum / image_pixels) ** 2).tolist()
        if image_pixels
        else []
    )
    return {
        "dataset_id": dataset_id,
        "k": k,
        "class_table_id": table.table_id,
        "gsd": gsd,
        "variants": variants_seen,
        "sibling_pairs": sibling,
        "tiles": len(list_tile_dirs(out_root)),
        "pairs": pairs,
        "failed": failed,
        "stats": {
            "pair_pixels": pair_pixels,
            "changed_pixels": changed,
            "change_prevalence_pct": 100.0 * changed / pair_pixels if pair_pixels else 0.0,
            "class_histogram": hist.tolist(),
            "band_mean": mean,
            "band_variance": var,
            "image_pixels": image_pixels,
        },
    }


def compute_source_stats(source_root: Path, table: ClassTable, dataset_id: str = "") -> ClassStats:
    """Class pixel counts over every semantic map of a source dataset."""
    stats = ClassStats(k=table.k, class_table_id=table.table_id, dataset_id=dataset_id)
    for tile_dir in list_tile_dirs(source_root):
        stats.accumulate(load_semantic_png(tile_dir / "semantic.png"))
    return stats


def load_source_bundle(tile_dir: Path) -> TileBundle:
    return read_tile_dir(tile_dir)
