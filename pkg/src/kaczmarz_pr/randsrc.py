"""Seedable random sources.

Every stream is keyed by ``(base_seed, stream_index)`` through numpy's
``SeedSequence`` spawn keys feeding a Philox counter-based generator, so a
run's draws never depend on how many other runs were scheduled alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


class InvalidDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class SeededStream:
    base_seed: int = 0
    stream_index: int = 0

    def __post_init__(self):
        for name in ("base_seed", "stream_index"):
            val = getattr(self, name)
            if not 0 <= int(val) <= _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {val}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "SeededStream":
        # sub-streams live in a disjoint index range mixed from the parent index
        mixed = (int(self.stream_index) * 0x9E3779B97F4A7C15 + int(index) + 1) & _U64
        return SeededStream(self.base_seed, mixed)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeededStream):
        return rng.generator()
    raise TypeError(f"expected SeededStream or numpy Generator, got {type(rng).__name__}")


def streams_for_runs(seed: int, runs: int, offset: int = 0) -> list[SeededStream]:
    return [SeededStream(seed, offset + i) for i in range(runs)]


def sample_sphere_vector(d: int, rng, size=None) -> np.ndarray:
    """Uniform draw(s) on the sphere of radius sqrt(d) in R^d.

    ``size`` prepends batch dimensions; the last axis always has length d.
    """
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    rng = as_generator(rng)
    shape = (d,) if size is None else tuple(np.atleast_1d(size)) + (d,)
    g = rng.standard_normal(shape)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return (g / norm) * np.sqrt(d)


def sample_uv_marginal(d: int, rng, size=None):
    """First two coordinates of a uniform vector on sqrt(d) S^{d-1}.

    Uses (u, v) = sqrt(d) (g1, g2) / sqrt(g1^2 + g2^2 + S) with S ~ chi^2_{d-2},
    so each draw is O(1) regardless of d.
    """
    if d < 3:
        raise InvalidDimensionError(f"marginal sampler needs d >= 3, got {d}")
    rng = as_generator(rng)
    g = rng.standard_normal((2,) if size is None else (2,) + tuple(np.atleast_1d(size)))
    rest = rng.gamma((d - 2) / 2.0, 2.0, size=size)
    scale = np.sqrt(d / (g[0] ** 2 + g[1] ** 2 + rest))
    return g[0] * scale, g[1] * scale


def sample_gaussian(rng, size=None):
    return as_generator(rng).standard_normal(size)
