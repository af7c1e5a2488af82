"""Synthetic genotypes: binomial(2, MAF) counts tied together by a Gaussian copula."""

from __future__ import annotations

from typing import List, Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import betaln, ndtri

from ..errors import ConfigError, DomainError, NumericalError


class GenotypeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(gt=1)
    p: int = Field(ge=1)
    maf_law: Literal["uniform", "log-uniform"] = "log-uniform"
    maf_lo: float = Field(0.001, gt=0, le=0.5)
    maf_hi: float = Field(0.05, gt=0, le=0.5)
    correlation: Literal["independent", "exchangeable", "autoregressive", "block"] = "independent"
    rho: float = 0.0
    block_sizes: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.maf_lo > self.maf_hi:
            raise ValueError("maf_lo must not exceed maf_hi")
        if self.correlation == "exchangeable" and not (-1.0 / max(self.p - 1, 1) < self.rho < 1.0):
            raise ValueError(f"exchangeable rho={self.rho} not positive definite for p={self.p}")
        if self.correlation in ("autoregressive", "block") and not (-1.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (-1, 1)")
        if self.correlation == "block":
            if not self.block_sizes or sum(self.block_sizes) != self.p or min(self.block_sizes) < 1:
                raise ValueError("block_sizes must be positive and sum to p")
            if self.rho <= -1.0 / (max(self.block_sizes) - 1 or 1):
                raise ValueError("block rho not positive definite")
        return self


class Genotypes(NamedTuple):
    matrix: np.ndarray  # n x p, centered
    mafs: np.ndarray


def latent_correlation(spec: GenotypeSpec) -> np.ndarray:
    p, rho = spec.p, spec.rho
    if spec.correlation == "independent":
        return np.eye(p)
    if spec.correlation == "exchangeable":
        r = np.full((p, p), rho)
    elif spec.correlation == "autoregressive":
        idx = np.arange(p)
        r = rho ** np.abs(idx[:, None] - idx[None, :])
    else:
        r = np.zeros((p, p))
        start = 0
        for size in spec.block_sizes:
            r[start:start + size, start:start + size] = rho
            start += size
    np.fill_diagonal(r, 1.0)
    return r


def draw_mafs(spec: GenotypeSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    if spec.maf_law == "uniform":
        return rng.uniform(spec.maf_lo, spec.maf_hi, size)
    return np.exp(rng.uniform(np.log(spec.maf_lo), np.log(spec.maf_hi), size))


def _counts(latent: np.ndarray, maf: np.ndarray) -> np.ndarray:
    # P(G=0) = (1-m)^2, P(G<=1) = 1-m^2
    t0 = ndtri((1.0 - maf) ** 2)
    t1 = ndtri(1.0 - maf**2)
    return (latent > t0).astype(float) + (latent > t1)


def gen_genotypes(spec: GenotypeSpec, rng: np.random.Generator, max_redraws: int = 100) -> Genotypes:
    """Correlated allele counts with column-specific MAFs, columns centered.

    A column that comes out monomorphic gets a fresh MAF (same latent
    Gaussians) until it varies, so every column carries information.
    """
    try:
        chol = np.linalg.cholesky(latent_correlation(spec))
    except np.linalg.LinAlgError:
        raise ConfigError("latent correlation is not positive definite") from None
    latent = rng.standard_normal((spec.n, spec.p)) @ chol.T
    mafs = draw_mafs(spec, rng, spec.p)
    g = _counts(latent, mafs)
    for _ in range(max_redraws):
        flat = np.flatnonzero(np.ptp(g, axis=0) == 0)
        if flat.size == 0:
            break
        mafs[flat] = draw_mafs(spec, rng, flat.size)
        g[:, flat] = _counts(latent[:, flat], mafs[flat])
    else:
        raise NumericalError("could not make every genotype column polymorphic")
    return Genotypes(g - g.mean(axis=0), mafs)


def beta_weights(mafs, c1: float, c2: float) -> np.ndarray:
    """Beta(c1, c2) density at each MAF."""
    m = np.asarray(mafs, dtype=float)
    if np.any((m <= 0) | (m >= 1)):
        raise DomainError("MAFs must lie strictly inside (0, 1)")
    if c1 <= 0 or c2 <= 0:
        raise DomainError("beta parameters must be positive")
    return np.exp((c1 - 1.0) * np.log(m) + (c2 - 1.0) * np.log1p(-m) - betaln(c1, c2))
