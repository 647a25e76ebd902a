"""Stateless counter-based noise, bit-compatible with the pipeline client.

SplitMix64 finalizer with the published constants; a noise value depends
only on (seed, pixel, channel), so an implementation in any language that
reproduces these three lines reproduces every byte of the texture.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    x = (x + _GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def _mix64_array(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GAMMA)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def noise_grid(seed: int, height: int, width: int, channel: int, amplitude: int) -> np.ndarray:
    """Integer noise in [-amplitude, amplitude] at every pixel."""
    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.uint64),
        np.arange(width, dtype=np.uint64),
        indexing="ij",
    )
    counter = (ys << np.uint64(32)) | xs
    h = _mix64_array(np.full(counter.shape, mix64(seed & _MASK64), dtype=np.uint64) ^ counter)
    h = _mix64_array(h ^ np.uint64(channel))
    span = np.uint64(2 * amplitude + 1)
    return (h % span).astype(np.int32) - amplitude
