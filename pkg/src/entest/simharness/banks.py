"""Vectorized base tests for a fixed set of directions or subsets.

A bank holds the ``B`` random components of one ensemble (or the single
weight vector of a fixed-weight test) and maps a batch of score vectors,
one per row, to a ``(reps, B)`` array of base p-values.  Everything that
depends only on the components (normalizers, eigen-decompositions, mixture
tail tables) is computed once at construction.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaincc

from ..acat import combine_rows
from ..base_tests import default_theta, weighted_sigma
from ..dist import MixtureTail, clamp_p, two_sided_normal_p
from ..errors import DegenerateSubsetError
from ..reference_tests import bj_stat, calibrated_p, hc_stat, null_table
from ..base_tests import MAX_COND


class Bank:
    size: int

    def pvalues(self, S: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ensemble(self, S: np.ndarray) -> np.ndarray:
        """Cauchy-combined p-value per row (equals the base p-value when ``B == 1``)."""
        p = self.pvalues(S)
        if p.shape[1] == 1:
            return p[:, 0]
        return combine_rows(p)


class BurdenBank(Bank):
    def __init__(self, Sigma, W):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        var = np.einsum("bi,ij,bj->b", W, Sigma, W)
        self.A = (W / np.sqrt(var)[:, None]).T
        self.size = W.shape[0]

    def pvalues(self, S):
        return np.asarray(two_sided_normal_p(S @ self.A))


class _MixtureColumns:
    def _tail(self, stats):
        out = np.empty(stats.shape)
        for b, tab in enumerate(self.tables):
            out[:, b] = tab.sf(stats[:, b])
        return out


class SkatBank(Bank, _MixtureColumns):
    def __init__(self, Sigma, W):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        self.W2 = (W**2).T
        self.size = W.shape[0]
        self.tables = [MixtureTail(np.linalg.eigvalsh(weighted_sigma(Sigma, w))) for w in W]

    def pvalues(self, S):
        return self._tail((S * S) @ self.W2)


class MorstBank(Bank, _MixtureColumns):
    """MORST statistics ``sum_j (q_j^T W S)^2 / (1 + theta mu_j)`` for each direction."""

    group = 32

    def __init__(self, Sigma, W, theta=None):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        p = W.shape[1]
        self.size = W.shape[0]
        self.p = p
        mats, self.tables = [], []
        for w in W:
            mu, vecs = np.linalg.eigh(weighted_sigma(Sigma, w))
            mu = np.clip(mu, 0.0, None)
            th = default_theta(mu) if theta is None else (theta(mu) if callable(theta) else theta)
            mats.append((w[:, None] * vecs) / np.sqrt(1.0 + th * mu))
            self.tables.append(MixtureTail(mu / (1.0 + th * mu)))
        self.M = np.concatenate(mats, axis=1)  # p x (B p)

    def pvalues(self, S):
        reps = S.shape[0]
        stats = np.empty((reps, self.size))
        for lo in range(0, self.size, self.group):
            hi = min(lo + self.group, self.size)
            proj = S @ self.M[:, lo * self.p:hi * self.p]
            stats[:, lo:hi] = np.einsum("rbp,rbp->rb", *(2 * [proj.reshape(reps, hi - lo, self.p)]))
        return self._tail(stats)


class SubsetBank(Bank):
    """Chi-squared tests on coordinate subsets: ``||L_J^{-1} Z_J||^2`` with ``Omega_J = L_J L_J^T``."""

    def __init__(self, Omega, subsets):
        Omega = np.asarray(Omega, dtype=float)
        subsets = [np.asarray(J, dtype=int) for J in subsets]
        self.size = len(subsets)
        self.s = subsets[0].size
        if any(J.size != self.s for J in subsets):
            raise ValueError("all subsets must have the same size")
        p = Omega.shape[0]
        self.identity = np.allclose(Omega, np.eye(p))
        if self.identity:
            ind = np.zeros((p, self.size))
            for b, J in enumerate(subsets):
                ind[J, b] = 1.0
            self.ind = ind
        else:
            M = np.zeros((p, self.size * self.s))
            for b, J in enumerate(subsets):
                sub = Omega[np.ix_(J, J)]
                if np.linalg.cond(sub) > MAX_COND:
                    raise DegenerateSubsetError(f"Omega_J is ill-conditioned for J={J.tolist()}")
                M[J, b * self.s:(b + 1) * self.s] = np.linalg.inv(np.linalg.cholesky(sub)).T
            self.M = M

    def statistics(self, Z):
        if self.identity:
            return (Z * Z) @ self.ind
        proj = (Z @ self.M).reshape(Z.shape[0], self.size, self.s)
        return np.einsum("rbs,rbs->rb", proj, proj)

    def pvalues(self, Z):
        return clamp_p(gammaincc(0.5 * self.s, 0.5 * self.statistics(Z)))


class CalibratedBank(Bank):
    """Higher Criticism or Berk-Jones with Monte Carlo null tables."""

    def __init__(self, test: str, p: int, draws: int, seed: int):
        self.stat = {"hc": hc_stat, "bj": bj_stat}[test]
        self.table = null_table(test, p, draws, seed)
        self.size = 1

    def pvalues(self, Z):
        return calibrated_p(self.stat(Z), self.table)[:, None]
