"""Seedable, splittable random streams for the generation pipeline.

Two layers:

* ``mix64`` / ``counter_hash`` — a SplitMix64 finalizer used as a stateless
  counter-based hash. This is the bit-level contract shared with any
  re-implementation of the procedural texture (noise values depend only on
  ``(seed, counter words)``, never on call order).
* ``stream_for`` — derives an independent 64-bit stream seed per
  ``(master seed, tile id, variant)`` and wraps it in a Philox4x64 generator,
  so plans for different tiles/variants can run in parallel and still replay
  bit-for-bit from the seed recorded in the plan file.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer of a single 64-bit word."""
    x = (x + _GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def counter_hash(seed: int, *words: int) -> int:
    """Hash ``seed`` and counter words into one 64-bit value.

    Stateless: equal inputs give equal outputs in any language that
    reproduces SplitMix64 (the constants above are the published ones).
    """
    h = mix64(seed & _MASK64)
    for w in words:
        h = mix64(h ^ (w & _MASK64))
    return h


def hash_text(text: str) -> int:
    """64-bit hash of a string, stable across processes and platforms."""
    data = text.encode("utf-8")
    h = mix64(len(data))
    for i in range(0, len(data), 8):
        chunk = int.from_bytes(data[i : i + 8], "little")
        h = mix64(h ^ chunk)
    return h


def stream_seed(master_seed: int, tile_id: str, variant: int) -> int:
    """Derive the 64-bit seed of the (tile, variant) plan stream."""
    return counter_hash(master_seed, hash_text(tile_id), variant)


def stream_for(master_seed: int, tile_id: str, variant: int) -> np.random.Generator:
    """Philox generator for one (tile, variant) plan, independent of all others."""
    return generator_from_seed(stream_seed(master_seed, tile_id, variant))


def generator_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def _mix64_array(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GAMMA)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def noise_grid(seed: int, height: int, width: int, channel: int, amplitude: int) -> np.ndarray:
    """Per-pixel integer noise in [-amplitude, +amplitude], shape (height, width).

    Value at (y, x) is a pure function of (seed, y, x, channel):
    ``counter_hash(seed, (y << 32) | x, channel) % (2*amplitude + 1) - amplitude``.
    """
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
