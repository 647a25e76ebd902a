"""Procedural texture and masked blend, matching the client reference.

Base values per class: the legend RGB, a derived NIR channel
``clip(2*g - (r + b) // 2, 0, 255)`` and a per-class elevation constant.
Color/NIR bands get counter-hash noise of amplitude 16; elevation is flat.
The blend is exact integer arithmetic: with ``a`` the 8-bit mask weight,
``out = (2 * (a * synth + (255 - a) * orig) + 255) // 510`` — i.e.
round-half-up of the weighted mean, so weight 0 returns the input byte.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .prng import noise_grid

NOISE_AMPLITUDE = 16
ELEVATION_BAND = 4

ELEVATION_CONSTANTS = {
    "Building": 200,
    "Coniferous": 160,
    "Mixed": 155,
    "Deciduous": 150,
    "Ligneous": 140,
    "Greenhouse": 110,
    "Brushwood": 80,
    "Vineyard": 40,
    "Snow": 20,
}


class Legend:
    """Class names and legend colors; colors are pairwise distinct."""

    def __init__(self, names: list[str], colors: list[tuple[int, int, int]]):
        if len(set(colors)) != len(colors):
            raise ValueError("legend colors must be pairwise distinct")
        self.names = names
        self.colors = np.array(colors, dtype=np.int64)
        self._by_key = {
            (c[0] << 16) | (c[1] << 8) | c[2]: i for i, c in enumerate(colors)
        }

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def load_default(cls) -> "Legend":
        ref = resources.files("hyscdg_service.data").joinpath("class_table.json")
        doc = json.loads(ref.read_text(encoding="utf-8"))
        return cls(
            names=[c["name"] for c in doc["classes"]],
            colors=[tuple(c["color"]) for c in doc["classes"]],
        )

    def base_values(self) -> np.ndarray:
        """(K, 5) per-class base: R, G, B, derived NIR, elevation constant."""
        r, g, b = self.colors[:, 0], self.colors[:, 1], self.colors[:, 2]
        nir = np.clip(2 * g - (r + b) // 2, 0, 255)
        elev = np.array([ELEVATION_CONSTANTS.get(n, 0) for n in self.names], dtype=np.int64)
        return np.stack([r, g, b, nir, elev], axis=1)

    def labels_from_condition(self, condition: np.ndarray) -> np.ndarray:
        """Invert the color rendering; unknown colors raise KeyError."""
        keys = (
            condition[..., 0].astype(np.int64) * 65536
            + condition[..., 1].astype(np.int64) * 256
            + condition[..., 2].astype(np.int64)
        )
        labels = np.zeros(keys.shape, dtype=np.int64)
        for value in np.unique(keys):
            idx = self._by_key.get(int(value))
            if idx is None:
                r, g, b = value >> 16, (value >> 8) & 255, value & 255
                raise KeyError(f"unknown class color ({r},{g},{b})")
            labels[keys == value] = idx
        return labels


def synthesize(seed: int, labels: np.ndarray, legend: Legend, n_bands: int = 5) -> np.ndarray:
    base = legend.base_values()
    h, w = labels.shape
    out = np.empty((n_bands, h, w), dtype=np.uint8)
    for band in range(n_bands):
        plane = base[labels, band]
        if band == ELEVATION_BAND:
            out[band] = plane.astype(np.uint8)
        else:
            noise = noise_grid(seed, h, w, band, NOISE_AMPLITUDE)
            out[band] = np.clip(plane + noise, 0, 255).astype(np.uint8)
    return out


def blend(synth: np.ndarray, original: np.ndarray, mask_bytes: np.ndarray) -> np.ndarray:
    a = mask_bytes.astype(np.int64)[None, :, :]
    num = a * synth.astype(np.int64) + (255 - a) * original.astype(np.int64)
    return ((2 * num + 255) // 510).astype(np.uint8)


def procedural_inpaint(
    seed: int, image: np.ndarray, mask_bytes: np.ndarray, condition: np.ndarray, legend: Legend
) -> np.ndarray:
    labels = legend.labels_from_condition(condition)
    synth = synthesize(seed, labels, legend, image.shape[0])
    return blend(synth, image, mask_bytes)
