"""Gaussian score model ``S ~ N_p(sqrt(n) Sigma beta, Sigma)`` and linear-test geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, DegenerateDirectionError, DomainError

SYM_TOL = 1e-10
NEG_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EigenSystem:
    """``Sigma = U diag(values) U^T`` with values nonincreasing and clamped at 0."""

    values: np.ndarray
    vectors: np.ndarray

    def transform(self, w) -> np.ndarray:
        """``Lambda^{1/2} U^T w``; Euclidean angles here are Sigma-angles of ``w``."""
        return np.sqrt(self.values) * (self.vectors.T @ np.asarray(w, dtype=float))

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _check_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > SYM_TOL * scale:
        raise DomainError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def _round_robin(m: int):
    """Pairings of ``m`` (even) players so every pair meets once over ``m - 1`` rounds."""
    players = list(range(m))
    for _ in range(m - 1):
        yield [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        players = [players[0], players[-1]] + players[1:-1]


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a dense symmetric matrix.

    Rotations are applied in parallel (tournament) order: each round
    annihilates ``p/2`` disjoint off-diagonal pairs at once, so a sweep costs
    ``p - 1`` matrix products.  Stops once the off-diagonal Frobenius norm is
    below ``tol * ||a||_F``.
    """
    a = np.array(a, dtype=float)
    p = a.shape[0]
    v = np.eye(p)
    if p == 1:
        return a.diagonal().copy(), v
    m = p + (p % 2)
    target = tol * np.linalg.norm(a)
    rounds = [
        np.array([(i, j) if i < j else (j, i) for i, j in pairs if max(i, j) < p], dtype=int)
        for pairs in _round_robin(m)
    ]
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(a.diagonal() ** 2), 0.0))
        if off <= target:
            break
        for pq in rounds:
            if pq.size == 0:
                continue
            ip, iq = pq[:, 0], pq[:, 1]
            apq = a[ip, iq]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            ip, iq, apq = ip[active], iq[active], apq[active]
            theta = (a[iq, iq] - a[ip, ip]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            r = np.eye(p)
            r[ip, ip] = c
            r[iq, iq] = c
            r[ip, iq] = s
            r[iq, ip] = -s
            a = r.T @ a @ r
            a = 0.5 * (a + a.T)
            v = v @ r
    return a.diagonal().copy(), v


def eigen(sigma, method: str = "jacobi") -> EigenSystem:
    """Full eigensystem of a symmetric matrix, values clamped at 0 and sorted down.

    ``method="jacobi"`` uses :func:`jacobi_eigh`; ``"lapack"`` calls
    ``numpy.linalg.eigh`` and is what the per-base-test hot paths use.
    """
    a = _check_symmetric(sigma)
    if method == "jacobi":
        vals, vecs = jacobi_eigh(a)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(a)
    else:
        raise ConfigError(f"unknown eigen method {method!r}")
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    return EigenSystem(_frozen(vals), _frozen(vecs[:, order]))


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Score vector ``S``, its null covariance ``Sigma`` and the sample size ``n``."""

    S: np.ndarray
    Sigma: np.ndarray
    n: int = 1
    _scale: float = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.S, dtype=float).ravel()
        sig = np.atleast_2d(_check_symmetric(np.atleast_2d(self.Sigma)))
        if sig.shape != (s.size, s.size):
            raise DataError(f"S has length {s.size} but Sigma is {sig.shape}")
        if not np.all(np.isfinite(s)):
            raise DataError("S has non-finite entries")
        if int(self.n) < 1:
            raise DataError("n must be a positive integer")
        vals, vecs = np.linalg.eigh(sig)
        top = max(vals[-1], 0.0)
        if top <= 0:
            raise DataError("Sigma has no positive eigenvalue")
        if vals[0] < -NEG_TOL * top:
            raise DataError(f"Sigma is not positive semidefinite (min eigenvalue {vals[0]:.3g})")
        if vals[0] < 0:
            sig = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            sig = 0.5 * (sig + sig.T)
        object.__setattr__(self, "S", _frozen(s))
        object.__setattr__(self, "Sigma", _frozen(sig))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "_scale", float(top))

    @property
    def p(self) -> int:
        return self.S.size

    @property
    def lambda_max(self) -> float:
        return self._scale

    def with_scores(self, S) -> "ScoreModel":
        return ScoreModel(S, self.Sigma, self.n)


@dataclass(frozen=True, eq=False)
class SignalSpec:
    """True coefficients ``beta`` with strength ``||beta||`` and direction ``beta/||beta||``."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.ravel(self.beta)))

    @property
    def strength(self) -> float:
        return float(np.linalg.norm(self.beta))

    @property
    def direction(self) -> np.ndarray:
        b = self.strength
        if b == 0:
            raise DegenerateDirectionError("zero signal has no direction")
        return self.beta / b

    def mean_score(self, sigma, n: int) -> np.ndarray:
        return np.sqrt(n) * (np.asarray(sigma) @ self.beta)


def _residualizer(n: int, Z) -> np.ndarray:
    cols = [np.ones((n, 1))]
    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        cols.append(Z.reshape(n, -1))
    x = np.hstack(cols)
    q, r = np.linalg.qr(x)
    d = np.abs(np.diag(r))
    if d.min() <= 1e-10 * max(d.max(), 1.0):
        raise ConfigError("covariate matrix (with intercept) is rank deficient")
    return q


def from_regression(Y, G, Z=None) -> ScoreModel:
    """Score model from a linear regression of ``Y`` on ``G`` adjusting for ``Z``.

    ``Y`` and each column of ``G`` are residualized on ``[1, Z]``; then
    ``S = G~^T Y~ / (sigma_hat sqrt(n))`` and ``Sigma = G~^T G~ / n`` with
    ``sigma_hat^2 = ||Y~||^2 / (n - q - 1)``.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    n = Y.size
    if G.shape[0] != n:
        raise DataError(f"G has {G.shape[0]} rows but Y has {n} entries")
    q = 0 if Z is None else np.asarray(Z).reshape(n, -1).shape[1]
    if n <= q + 1:
        raise ConfigError(f"need n > q + 1 (n={n}, q={q})")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(G))):
        raise DataError("non-finite values in Y or G")
    Q = _residualizer(n, Z)
    y = Y - Q @ (Q.T @ Y)
    g = G - Q @ (Q.T @ G)
    scale = np.sqrt(np.sum(G * G, axis=0)) + 1e-300
    flat = np.flatnonzero(np.linalg.norm(g, axis=0) <= 1e-10 * scale)
    if flat.size:
        raise DataError(f"genotype columns {flat.tolist()} are constant after adjustment")
    rss = float(y @ y)
    if rss <= 0:
        raise DataError("residual variance is zero")
    sigma_hat = np.sqrt(rss / (n - q - 1))
    S = g.T @ y / (sigma_hat * np.sqrt(n))
    Sigma = g.T @ g / n
    return ScoreModel(S, Sigma, n)


def exchangeable_sigma(p: int, rho: float) -> np.ndarray:
    """Unit diagonal, constant off-diagonal ``rho``."""
    if p < 1:
        raise DomainError("p must be at least 1")
    lo = -1.0 / (p - 1) if p > 1 else -np.inf
    if not (lo - 1e-15 <= rho <= 1.0):
        raise DomainError(f"rho={rho} outside [{lo:.6g}, 1] for p={p}")
    sig = np.full((p, p), float(rho))
    np.fill_diagonal(sig, 1.0)
    return sig


def linear_stat(model: ScoreModel, w) -> float:
    """Standardized linear statistic ``w^T S / sqrt(w^T Sigma w)``."""
    w = np.asarray(w, dtype=float)
    var = float(w @ model.Sigma @ w)
    if var <= 1e-12 * model.lambda_max * float(w @ w):
        raise DegenerateDirectionError("w' Sigma w is numerically zero")
    return float(w @ model.S) / np.sqrt(var)


def relative_efficiency(sigma, w, w_beta, system: Optional[EigenSystem] = None) -> float:
    """Squared cosine between ``Lambda^{1/2} U^T w`` and ``Lambda^{1/2} U^T w_beta``."""
    es = system if system is not None else eigen(sigma, method="lapack")
    a = es.transform(w)
    b = es.transform(w_beta)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateDirectionError("transformed direction is zero")
    return float(min((a @ b / (na * nb)) ** 2, 1.0))
