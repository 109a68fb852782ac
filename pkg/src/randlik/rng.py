"""Deterministic seed derivation and counter-based random streams.

Every random draw in the package comes from a Philox4x64-10 generator
(numpy's ``Philox`` bit generator) keyed by a 64-bit seed. Seeds for
sub-tasks are derived with :func:`mix64`, a SplitMix64-style finalizer
applied to the pair ``(parent, index)``::

    z = (parent + 0x9E3779B97F4A7C15 * (index + 1)) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z = z ^ (z >> 31)

A realization therefore depends only on ``(master_seed, sweep index,
realization index)`` and never on evaluation order or worker count.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(parent: int, index: int) -> int:
    """Derive a child seed from ``parent`` and a non-negative ``index``."""
    if index < 0:
        raise ValueError("index must be non-negative")
    z = (int(parent) + _GOLDEN * (int(index) + 1)) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream(seed: int) -> np.random.Generator:
    """Philox generator keyed by the 64-bit ``seed`` with counter zero."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


def point_seed(master_seed: int, sweep_index: int) -> int:
    return mix64(master_seed, sweep_index)


def realization_seeds(parent: int, count: int) -> list[int]:
    return [mix64(parent, i) for i in range(count)]
