"""Stochastic change planning for one tile variant.

A plan is the complete recipe for one synthetic epoch of a tile: how many
instances change, which ones, their old and new classes, the exact masks
(footprint, buffered, changed area), the no-change decoy blobs, the merged
soft inpainting mask and the text prompt. Plans are pure functions of
``(tile id, variant, master seed)`` and serialize to JSON with run-length
masks, so any plan can be replayed bit for bit.

Sampling laws: the number of changed instances is ``floor(sqrt(U(0,10)))``
clamped to ``min(3, n)``; the decoy count is
``floor(sqrt(U(0,10) * (1 - n_change/4)))`` under the same clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import rng
from .footprints import ClassStats, InstanceFootprint
from .prompts import PromptSpec, build_prompt
from .raster import (
    BitMask,
    ChangeMap,
    ClassTable,
    GeometryError,
    RasterTile,
    SemanticMap,
    SoftMask,
    convex_hull_mask,
    dilate,
    feather,
    largest_component,
    rasterize_polygon,
)
from .tileio import decode_rle, encode_rle

MAX_CHANGES = 3
DECOY_AREA_MIN = 0.002
DECOY_AREA_MAX = 0.02


class InstanceSkip(Exception):
    """Raised when one instance cannot be planned; the plan continues."""


@dataclass(frozen=True)
class PlanConfig:
    buffer_px: int = 8
    feather_px: int = 8
    variants: int = 3
    tau: float = 1.5
    connectivity: int = 8

    def to_json(self) -> dict:
        return {
            "buffer_px": self.buffer_px,
            "feather_px": self.feather_px,
            "variants": self.variants,
            "tau": self.tau,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PlanConfig":
        return cls(
            buffer_px=obj.get("buffer_px", 8),
            feather_px=obj.get("feather_px", 8),
            variants=obj.get("variants", 3),
            tau=obj.get("tau", 1.5),
            connectivity=obj.get("connectivity", 8),
        )


@dataclass
class PlanBudget:
    n: int
    n_change: int
    n_nochange: int


def sample_budget(n: int, r: np.random.Generator) -> PlanBudget:
    """Draw how many instances to change and how many decoys to add.

    Both draws always happen, even when the clamp forces zero, so the
    generator state after this call does not depend on ``n``.
    """
    if n < 0:
        raise ValueError("instance count must be >= 0")
    cap = min(MAX_CHANGES, n)
    u = r.uniform(0.0, 10.0)
    n_change = min(int(math.sqrt(u)), cap)
    u2 = r.uniform(0.0, 10.0)
    n_nochange = min(int(math.sqrt(u2 * (1.0 - n_change / 4.0))), cap)
    return PlanBudget(n=n, n_change=n_change, n_nochange=n_nochange)


def modal_class(labels: np.ndarray, mask: BitMask) -> int:
    """Most frequent class under the mask; ties go to the smaller id."""
    if not mask.any():
        raise InstanceSkip("empty mask")
    counts = np.bincount(labels[mask].astype(np.int64))
    return int(np.argmax(counts))


def build_change_mask(
    labels: np.ndarray,
    footprint_mask: BitMask,
    buffered_mask: BitMask,
    c1: int,
    connectivity: int = 8,
) -> BitMask:
    """Area whose label will flip: convex hull of the largest blob of ``c1``
    inside the buffered zone, clipped back to that zone."""
    class_pixels = (labels == c1) & buffered_mask
    if not class_pixels.any():
        raise InstanceSkip(f"no pixel of class {c1} in the buffered zone")
    blob = largest_component(class_pixels, connectivity)
    return convex_hull_mask(blob) & buffered_mask


def pick_new_class(
    stats: ClassStats,
    labels: np.ndarray,
    change_mask: BitMask,
    c1: int,
    r: np.random.Generator,
) -> int:
    """Draw the replacement class, biased toward globally frequent classes
    that are rare inside the change area.

    Weight of class c is ``f_global(c) / (f_local(c) + eps)`` with
    ``eps = 1 / (mask pixels + K)``; the old class is excluded. If every
    weight vanishes the draw is uniform over the remaining classes.
    """
    k = stats.k
    n_pixels = int(change_mask.sum())
    if n_pixels == 0:
        raise InstanceSkip("empty change mask")
    eps = 1.0 / (n_pixels + k)
    f_local = np.bincount(labels[change_mask].astype(np.int64), minlength=k) / n_pixels
    weights = stats.frequencies() / (f_local + eps)
    weights[c1] = 0.0
    total = weights.sum()
    if total <= 0:
        weights = np.ones(k)
        weights[c1] = 0.0
        total = weights.sum()
    return int(r.choice(k, p=weights / total))


def sample_decoys(
    n_nochange: int, shape: tuple[int, int], r: np.random.Generator
) -> list[BitMask]:
    """Random blob masks from thresholded smoothed noise.

    Each blob's area lands in [0.2%, 2%] of the tile; the threshold is
    widened until the largest component clears the lower bound, with a
    centered disc as a last resort on pathological noise fields.
    """
    h, w = shape
    lo = math.ceil(DECOY_AREA_MIN * h * w)
    hi = math.floor(DECOY_AREA_MAX * h * w)
    decoys: list[BitMask] = []
    for _ in range(n_nochange):
        gh, gw = max(2, round(h / 16)), max(2, round(w / 16))
        coarse = r.standard_normal((gh, gw))
        field_hw = ndimage.zoom(coarse, (h / gh, w / gw), order=3)
        assert field_hw.shape == (h, w)
        target = int(r.uniform(0.004, 0.018) * h * w)
        k = min(max(target, lo), hi)
        order = np.argsort(field_hw, axis=None)[::-1]
        blob = _threshold_blob(order, k, lo, hi, shape)
        if blob is None:
            blob = _centered_disc(shape, lo)
        decoys.append(blob)
    return decoys


def _threshold_blob(order, k, lo, hi, shape) -> Optional[BitMask]:
    while True:
        mask = np.zeros(shape[0] * shape[1], dtype=bool)
        mask[order[:k]] = True
        blob = largest_component(mask.reshape(shape), 8)
        if int(blob.sum()) >= lo:
            return blob
        if k >= hi:
            return None
        k = min(hi, k * 2)


def _centered_disc(shape: tuple[int, int], lo: int) -> BitMask:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    radius = max(1, math.ceil(math.sqrt(lo / math.pi)))
    while True:
        disc = (yy - h // 2) ** 2 + (xx - w // 2) ** 2 <= radius**2
        if int(disc.sum()) >= lo:
            return disc
        radius += 1


@dataclass
class ChangeItem:
    instance_id: str
    c1: int
    c2: int
    footprint_mask: BitMask
    buffered_mask: BitMask
    change_mask: BitMask
    soft_mask: SoftMask


@dataclass
class ChangePlan:
    tile_id: str
    variant: int
    seed: int
    config: PlanConfig
    items: list[ChangeItem]
    decoys: list[BitMask]
    core: BitMask
    merged_soft: SoftMask
    m2: SemanticMap
    change: ChangeMap
    prompt: PromptSpec
    skipped: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.m2.shape

    def to_json(self) -> dict:
        h, w = self.shape
        return {
            "tile_id": self.tile_id,
            "variant": self.variant,
            "seed": self.seed,
            "width": w,
            "height": h,
            "config": self.config.to_json(),
            "prompt": self.prompt.rendered,
            "items": [
                {
                    "instance_id": it.instance_id,
                    "c1": it.c1,
                    "c2": it.c2,
                    "footprint_rle": encode_rle(it.footprint_mask),
                    "buffered_rle": encode_rle(it.buffered_mask),
                    "change_rle": encode_rle(it.change_mask),
                }
                for it in self.items
            ],
            "decoys": [encode_rle(d) for d in self.decoys],
            "skipped": list(self.skipped),
        }


@dataclass
class ParsedPlan:
    """A plan file decoded back into masks, sufficient to rebuild M2 and C."""

    tile_id: str
    variant: int
    seed: int
    width: int
    height: int
    config: PlanConfig
    prompt: str
    items: list[dict]
    decoys: list[BitMask]
    skipped: list[str]


def plan_from_json(obj: dict) -> ParsedPlan:
    shape = (obj["height"], obj["width"])
    items = []
    for it in obj["items"]:
        items.append(
            {
                "instance_id": it["instance_id"],
                "c1": it["c1"],
                "c2": it["c2"],
                "footprint_mask": decode_rle(it["footprint_rle"], shape),
                "buffered_mask": decode_rle(it["buffered_rle"], shape),
                "change_mask": decode_rle(it["change_rle"], shape),
            }
        )
    return ParsedPlan(
        tile_id=obj["tile_id"],
        variant=obj["variant"],
        seed=obj["seed"],
        width=obj["width"],
        height=obj["height"],
        config=PlanConfig.from_json(obj.get("config", {})),
        prompt=obj.get("prompt", ""),
        items=items,
        decoys=[decode_rle(d, shape) for d in obj.get("decoys", [])],
        skipped=list(obj.get("skipped", [])),
    )


def apply_plan_items(m1_labels: np.ndarray, items) -> np.ndarray:
    """Replay the per-item writes in order; later items win on overlap."""
    working = m1_labels.copy()
    for it in items:
        mask = it["change_mask"] if isinstance(it, dict) else it.change_mask
        c2 = it["c2"] if isinstance(it, dict) else it.c2
        working[mask] = c2
    return working


def make_plan(
    tile: RasterTile,
    m1: SemanticMap,
    footprints: list[InstanceFootprint],
    stats: ClassStats,
    table: ClassTable,
    config: PlanConfig,
    variant: int,
    master_seed: int,
    meta: Optional[dict] = None,
) -> ChangePlan:
    """Plan one synthetic variant of a tile.

    Instances are processed sequentially: each one reads the working map
    already updated by its predecessors, so overlapping changes cumulate
    the way they would over time. Instance-level failures skip just that
    instance. The trajectory map is derived at the end from (M1, M2), and
    each item's change mask is trimmed to pixels that still differ, so
    ``nonzero(C) == {M2 != M1}`` holds exactly.
    """
    h, w = m1.shape
    seed = rng.stream_seed(master_seed, tile.tile_id, variant)
    r = rng.generator_from_seed(seed)
    fps = sorted(footprints, key=lambda f: f.instance_id)

    budget = sample_budget(len(fps), r)
    selected: list[InstanceFootprint] = []
    if budget.n_change > 0:
        idx = r.choice(len(fps), size=budget.n_change, replace=False)
        selected = [fps[int(i)] for i in idx]

    working = m1.labels.astype(np.int64).copy()
    items: list[ChangeItem] = []
    skipped: list[str] = []
    for fp in selected:
        try:
            try:
                fmask = rasterize_polygon(list(fp.rings), tile.georef, h, w)
            except GeometryError as exc:
                raise InstanceSkip(str(exc)) from exc
            if not fmask.any():
                raise InstanceSkip("footprint misses the tile")
            bmask = dilate(fmask, config.buffer_px)
            c1 = modal_class(working, fmask)
            cmask = build_change_mask(working, fmask, bmask, c1, config.connectivity)
            c2 = pick_new_class(stats, working, cmask, c1, r)
            applied = cmask & (working != c2)
            if not applied.any():
                raise InstanceSkip("change area already carries the new class")
            working[applied] = c2
            items.append(
                ChangeItem(
                    instance_id=fp.instance_id,
                    c1=c1,
                    c2=c2,
                    footprint_mask=fmask,
                    buffered_mask=bmask,
                    change_mask=applied,
                    soft_mask=feather(bmask, config.feather_px),
                )
            )
        except InstanceSkip as exc:
            skipped.append(f"{fp.instance_id}: {exc}")

    decoys = sample_decoys(budget.n_nochange, (h, w), r)

    m2 = SemanticMap(working.astype(m1.labels.dtype), m1.class_table_id)
    change = ChangeMap.from_maps(m1, m2, table.k)
    diff = change.binary()
    for it in items:
        it.change_mask = it.change_mask & diff

    core = np.zeros((h, w), dtype=bool)
    for it in items:
        core |= it.buffered_mask
    for d in decoys:
        core |= d
    merged_soft = feather(core, config.feather_px)

    prompt = build_prompt(m2.labels, core, stats, table, meta=meta, tau=config.tau)

    return ChangePlan(
        tile_id=tile.tile_id,
        variant=variant,
        seed=seed,
        config=config,
        items=items,
        decoys=decoys,
        core=core,
        merged_soft=merged_soft,
        m2=m2,
        change=change,
        prompt=prompt,
        skipped=skipped,
    )
