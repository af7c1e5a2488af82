"""Reproducible random components: positive-sphere directions and index subsets.

Each base test ``i`` gets its own counter-based generator keyed by
``(master_seed, label)`` with ``i`` as the counter, so the draw for index
``i`` never depends on how many other indices were drawn or in which order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError

MAX_RETRIES = 100


class LawKind(str, Enum):
    UNIFORM = "uniform-positive-sphere"
    AUXILIARY = "auxiliary-weighted-sphere"


@dataclass(frozen=True)
class WeightLaw:
    """Law of the random direction ``w = |xi| / ||xi||``.

    ``uniform-positive-sphere`` draws ``xi ~ N(0, I)``; the auxiliary law
    draws ``xi_j ~ N(0, a_j^2)`` so that ``E[w_j] / E[w_k] = a_j / a_k``.
    """

    kind: LawKind = LawKind.UNIFORM
    aux: Optional[tuple] = None

    def __post_init__(self):
        kind = LawKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.aux is not None:
            aux = tuple(float(a) for a in np.ravel(self.aux))
            object.__setattr__(self, "aux", aux)
        if kind is LawKind.AUXILIARY:
            if self.aux is None:
                raise ConfigError("auxiliary-weighted law requires aux weights")
            if not all(np.isfinite(a) and a > 0 for a in self.aux):
                raise ConfigError("aux weights must be positive and finite")

    @classmethod
    def uniform(cls) -> "WeightLaw":
        return cls(LawKind.UNIFORM)

    @classmethod
    def auxiliary(cls, aux: Sequence[float]) -> "WeightLaw":
        return cls(LawKind.AUXILIARY, tuple(aux))

    def scales(self, p: int) -> Optional[np.ndarray]:
        """Per-coordinate standard deviations of ``xi`` (``None`` for uniform)."""
        if self.kind is LawKind.UNIFORM:
            return None
        if len(self.aux) != p:
            raise ConfigError(f"aux has length {len(self.aux)}, expected {p}")
        return np.asarray(self.aux)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_label: str = "base"

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)):
            raise ConfigError("master_seed must be an integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def child(self, label: str) -> "SeedSpec":
        return SeedSpec(self.master_seed, f"{self.stream_label}/{label}")


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_for(seed: SeedSpec, i: int) -> np.random.Generator:
    """Generator for base-test index ``i``; a pure function of ``(seed, i)``."""
    if i < 0:
        raise DomainError("stream index must be nonnegative")
    key = [seed.master_seed % 2**64, _label_key(seed.stream_label)]
    bits = np.random.Philox(key=np.array(key, dtype=np.uint64), counter=[0, 0, 0, int(i)])
    return np.random.Generator(bits)


def direction_from_normals(xi: np.ndarray, scales=None) -> np.ndarray:
    """Map Gaussian draws (rows) onto the positive unit sphere."""
    xi = np.abs(np.asarray(xi, dtype=float))
    if scales is not None:
        xi = xi * scales
    norm = np.linalg.norm(xi, axis=-1, keepdims=True)
    return xi / norm


def sample_positive_direction(p: int, law: WeightLaw, stream: SeedSpec, i: int) -> np.ndarray:
    """Unit vector with nonnegative entries drawn from ``law``."""
    if p < 1:
        raise DomainError("p must be at least 1")
    scales = law.scales(p)
    rng = stream_for(stream, i)
    for _ in range(MAX_RETRIES):
        xi = rng.standard_normal(p)
        if scales is not None:
            xi = xi * scales
        norm = np.linalg.norm(xi)
        if norm > 0 and np.isfinite(norm):
            return np.abs(xi) / norm
    raise NumericalError("could not draw a nonzero Gaussian vector", {"p": p, "index": i})


def sample_directions(p: int, law: WeightLaw, stream: SeedSpec, start: int, stop: int) -> np.ndarray:
    """Rows ``start..stop-1`` of :func:`sample_positive_direction`, stacked."""
    return np.stack([sample_positive_direction(p, law, stream, i) for i in range(start, stop)])


def sample_subset(p: int, s: int, stream: SeedSpec, i: int) -> np.ndarray:
    """``s`` distinct indices from ``range(p)``, uniform without replacement, sorted."""
    if p < 1 or not 1 <= s <= p:
        raise DomainError(f"need 1 <= s <= p, got s={s}, p={p}")
    rng = stream_for(stream, i)
    idx = np.arange(p)
    # partial Fisher-Yates: only the first s positions are shuffled
    for k in range(s):
        j = k + int(rng.integers(p - k))
        idx[k], idx[j] = idx[j], idx[k]
    return np.sort(idx[:s])
