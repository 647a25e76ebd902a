"""Text prompt composition for the synthesis backend.

A prompt has three parts: spatial (locality, region), temporal (time of day,
season) and semantic (classes that are salient inside the inpainted area
relative to the whole dataset). Parts that cannot be derived are simply left
out; the rendered string never carries dangling separators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional

import numpy as np

from .footprints import ClassStats
from .raster import BitMask, ClassTable

SALIENT_CAP = 3


@dataclass
class PromptSpec:
    locality: str = ""
    region: str = ""
    time_of_day: str = ""
    season: str = ""
    semantic: list[str] = field(default_factory=list)
    rendered: str = ""


def salient_classes(
    labels: np.ndarray,
    core: BitMask,
    stats: ClassStats,
    tau: float = 1.5,
) -> list[int]:
    """Class ids over-represented in the mask core versus the dataset.

    A class is salient when its in-mask frequency exceeds ``tau`` times its
    global frequency; the result is ordered by that ratio, largest first,
    and capped at three entries. Ratio ties break on the smaller class id.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not core.any():
        return []
    inside = labels[core].astype(np.int64)
    local = np.bincount(inside, minlength=stats.k) / inside.size
    f_global = stats.frequencies()
    with np.errstate(divide="ignore"):
        ratio = np.where(local > 0, local / np.where(f_global > 0, f_global, np.inf), 0.0)
        ratio = np.where((local > 0) & (f_global == 0), np.inf, ratio)
    salient = [c for c in range(stats.k) if local[c] > tau * f_global[c] and local[c] > 0]
    salient.sort(key=lambda c: (-ratio[c], c))
    return salient[:SALIENT_CAP]


def render_prompt(spec: PromptSpec) -> str:
    """Join the available parts into the final prompt string."""
    parts: list[str] = []
    if spec.semantic:
        parts.append(" and ".join(spec.semantic))
    if spec.locality:
        parts.append(f"locality of {spec.locality}")
    if spec.region:
        parts.append(spec.region)
    if spec.time_of_day:
        parts.append(f"in the {spec.time_of_day}")
    if spec.season:
        parts.append(f"during {spec.season}")
    if not parts:
        return ""
    return ", ".join(parts) + "."


def season_of(timestamp: datetime) -> str:
    """Meteorological season (northern hemisphere) of a local timestamp."""
    m = timestamp.month
    if m in (12, 1, 2):
        return "Winter"
    if m in (3, 4, 5):
        return "Spring"
    if m in (6, 7, 8):
        return "Summer"
    return "Autumn"


def time_of_day_of(timestamp: datetime) -> str:
    h = timestamp.hour
    if 5 <= h < 12:
        return "morning"
    if 12 <= h < 18:
        return "afternoon"
    if 18 <= h < 22:
        return "evening"
    return "night"


def build_prompt(
    labels: np.ndarray,
    core: BitMask,
    stats: ClassStats,
    table: ClassTable,
    meta: Optional[dict] = None,
    tau: float = 1.5,
) -> PromptSpec:
    """Assemble the full prompt for one planned tile variant."""
    meta = meta or {}
    place = meta.get("place") or {}
    spec = PromptSpec(
        locality=str(place.get("locality", "") or ""),
        region=str(place.get("region", "") or ""),
    )
    acquired = meta.get("acquired")
    if acquired:
        try:
            ts = datetime.fromisoformat(acquired)
        except ValueError:
            ts = None
        if ts is not None:
            spec.time_of_day = time_of_day_of(ts)
            spec.season = season_of(ts)
    names = table.names()
    spec.semantic = [names[c] for c in salient_classes(labels, core, stats, tau)]
    spec.rendered = render_prompt(spec)
    return spec
