"""Exact samplers of the score vector for simulation studies.

Two designs are supported:

* :class:`RegressionDesign` - a fixed genotype matrix (and covariates) with
  ``Y = Z gamma + G beta + eps``.  After residualizing on ``[1, Z]`` and
  taking the thin SVD ``G~ = U D V^T`` (rank ``r``), the score statistic
  only depends on ``u = U^T eps ~ N(0, I_r)`` and the leftover residual sum
  of squares ``c ~ chi2(n - q - 1 - r)``, so each replicate costs ``O(p r)``
  instead of ``O(n p)`` while matching :func:`entest.score_model.from_regression`
  in distribution exactly.
* :class:`GaussianDesign` - the idealized model ``S ~ N(sqrt(n) Sigma beta, Sigma)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DataError
from ..score_model import _residualizer


@dataclass
class Noise:
    """Random parts of a batch of replicates, reusable across effect sizes."""

    u: np.ndarray
    c: Optional[np.ndarray] = None


class RegressionDesign:
    def __init__(self, G, Z=None, mafs=None):
        G = np.asarray(G, dtype=float)
        n, p = G.shape
        q = 0 if Z is None else np.asarray(Z).reshape(n, -1).shape[1]
        Q = _residualizer(n, Z)
        g = G - Q @ (Q.T @ G)
        _, d, vt = np.linalg.svd(g, full_matrices=False)
        r = int(np.sum(d > 1e-10 * d[0]))
        self.n, self.p, self.q = n, p, q
        self.dof = n - q - 1
        if self.dof <= r:
            raise DataError("need n - q - 1 > rank(G)")
        self.V = vt[:r].T
        self.d = d[:r]
        self.Sigma = (self.V * self.d**2) @ self.V.T / n
        self.Sigma = 0.5 * (self.Sigma + self.Sigma.T)
        self.mafs = None if mafs is None else np.asarray(mafs, dtype=float)

    @property
    def rank(self) -> int:
        return self.d.size

    def draw_noise(self, rng: np.random.Generator, reps: int) -> Noise:
        u = rng.standard_normal((reps, self.rank))
        c = rng.chisquare(self.dof - self.rank, reps)
        return Noise(u, c)

    def scores(self, noise: Noise, beta=None, scale: float = 1.0) -> np.ndarray:
        """Score vectors (one row per replicate) for coefficients ``scale * beta``.

        ``beta`` is ``None`` (null), a length-``p`` vector or one row per replicate.
        """
        h = noise.u
        if beta is not None:
            h = h + scale * (np.atleast_2d(beta) @ self.V) * self.d
        sigma2 = (np.sum(h * h, axis=1) + noise.c) / self.dof
        return ((h * self.d) @ self.V.T) / np.sqrt(self.n * sigma2)[:, None]


class GaussianDesign:
    def __init__(self, Sigma, n: int = 1, mafs=None):
        self.Sigma = np.asarray(Sigma, dtype=float)
        self.p = self.Sigma.shape[0]
        self.n = int(n)
        vals, vecs = np.linalg.eigh(self.Sigma)
        self._root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        self.mafs = None if mafs is None else np.asarray(mafs, dtype=float)

    def draw_noise(self, rng: np.random.Generator, reps: int) -> Noise:
        return Noise(rng.standard_normal((reps, self.p)) @ self._root.T)

    def scores(self, noise: Noise, beta=None, scale: float = 1.0, n: Optional[float] = None) -> np.ndarray:
        if beta is None:
            return noise.u
        n = self.n if n is None else n
        return noise.u + np.sqrt(n) * scale * (np.atleast_2d(beta) @ self.Sigma)
