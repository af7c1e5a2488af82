"""Declarative experiment specifications (read from JSON) and effect-vector laws."""

from __future__ import annotations

import hashlib
import json
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


TEST_NAMES = (
    "en-burden", "en-skat", "en-morst", "en-subset-chisq",
    "burden", "skat", "morst", "hc", "bj", "chisq",
)
ENSEMBLE_TESTS = ("en-burden", "en-skat", "en-morst", "en-subset-chisq")


def parse_weights(text: str) -> Tuple[float, float]:
    """``flat`` -> (1, 1); ``beta:c1,c2`` -> (c1, c2)."""
    if text == "flat":
        return (1.0, 1.0)
    if text.startswith("beta:"):
        try:
            c1, c2 = (float(v) for v in text[5:].split(","))
        except ValueError:
            raise ValueError(f"bad weight spec {text!r}; expected beta:c1,c2") from None
        if c1 <= 0 or c2 <= 0:
            raise ValueError("beta parameters must be positive")
        return (c1, c2)
    raise ValueError(f"unknown weight spec {text!r}; use flat or beta:c1,c2")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DesignSpec(_Strict):
    """Where scores come from.

    ``genotype`` simulates a genotype matrix (and optional covariates) and
    regresses; ``exchangeable`` and ``identity`` use ``S ~ N(sqrt(n) Sigma beta, Sigma)``
    directly.
    """

    kind: Literal["genotype", "exchangeable", "identity"] = "genotype"
    p: int = Field(ge=1)
    n: int = Field(2000, ge=1)
    rho: float = 0.0
    maf_law: Literal["uniform", "log-uniform"] = "log-uniform"
    maf_lo: float = 0.001
    maf_hi: float = 0.05
    correlation: Literal["independent", "exchangeable", "autoregressive", "block"] = "exchangeable"
    block_sizes: Optional[List[int]] = None
    covariates: bool = False
    n_designs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "exchangeable" and self.p > 1 and not (-1.0 / (self.p - 1) <= self.rho <= 1.0):
            raise ValueError(f"rho={self.rho} invalid for p={self.p}")
        return self


class EffectSpec(_Strict):
    """Law of the coefficient vector under the alternative.

    ``regression``: a uniformly chosen support of size ``proportion * p`` with
    ``|beta_j| = beta0`` (``constant``) or ``beta0 |log10 MAF_j|`` (``log-maf``)
    and common or random signs.  ``sphere``: ``beta = strength * w`` with
    ``w`` uniform on the positive unit sphere.  ``sparse-mean``: ``m``
    randomly placed entries equal to ``mu0``.
    """

    kind: Literal["regression", "sphere", "sparse-mean"] = "regression"
    proportion: float = Field(0.2, gt=0, le=1)
    magnitude: Literal["constant", "log-maf"] = "constant"
    sign: Literal["same", "random"] = "same"
    strength: float = Field(1.0, ge=0)
    m: int = Field(1, ge=1)


class GridSpec(_Strict):
    """Effect-size grid.  Either explicit ``values`` or tuned so ``reference`` has
    power between ``target[0]`` and ``target[1]`` (``points`` equally spaced values;
    with one point only ``target[0]`` is used)."""

    param: Literal["scale", "n"] = "scale"
    values: Optional[List[float]] = None
    target: Tuple[float, float] = (0.1, 0.9)
    points: int = Field(5, ge=1)
    reference: Optional[str] = None
    pilot_reps: int = Field(1000, ge=100)

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.target
        if not (0 < lo <= hi < 1):
            raise ValueError("target powers must satisfy 0 < lo <= hi < 1")
        if self.values is not None and (len(self.values) == 0 or min(self.values) < 0):
            raise ValueError("grid values must be a nonempty list of nonnegative numbers")
        return self


class ExperimentSpec(_Strict):
    kind: Literal["type1", "power", "path", "variability"]
    name: str = "experiment"
    seed: int = 0
    design: DesignSpec
    effect: EffectSpec = Field(default_factory=EffectSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    tests: List[str]
    weights: List[str] = Field(default_factory=lambda: ["flat"])
    reps: int = Field(1000, ge=100)
    alphas: List[float] = Field(default_factory=lambda: [0.05])
    B: int = Field(1000, ge=1)
    subset_size: Optional[int] = None
    theta: Optional[float] = None
    mc_levels: List[float] = Field(default_factory=lambda: [0.05])
    mc_reps: int = Field(1_000_000, ge=100)
    calib_draws: int = Field(1_000_000, ge=1000)
    chunk: int = Field(2000, ge=1)
    threads: int = Field(1, ge=1)
    # path experiments
    block: int = Field(100, ge=1)
    min_B: int = Field(300, ge=1)
    target_alpha: Optional[float] = None
    signal: bool = False
    # variability experiments
    alternatives: int = Field(1000, ge=1)
    reps_per_alternative: int = Field(200, ge=10)
    target_mean_power: float = Field(0.5, gt=0, lt=1)

    @field_validator("tests")
    @classmethod
    def _tests(cls, v):
        bad = [t for t in v if t not in TEST_NAMES]
        if bad or not v:
            raise ValueError(f"unknown tests {bad}; choose from {list(TEST_NAMES)}")
        return v

    @field_validator("weights")
    @classmethod
    def _weights(cls, v):
        for w in v:
            parse_weights(w)
        return v

    @field_validator("alphas", "mc_levels")
    @classmethod
    def _alphas(cls, v):
        if any(not 0 < a < 1 for a in v):
            raise ValueError("alpha levels must lie in (0, 1)")
        return sorted(v, reverse=True)

    @model_validator(mode="after")
    def _check(self):
        if self.grid.param == "n" and self.design.kind == "genotype":
            raise ValueError("grid over n needs a Gaussian (exchangeable/identity) design")
        if self.grid.reference is not None and self.grid.reference not in self.tests:
            raise ValueError("grid.reference must be one of the tests")
        return self

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form (threads excluded: they never change results)."""
        data = self.model_dump(mode="json", exclude={"threads"})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        return ExperimentSpec.model_validate_json(fh.read())


def effect_vector(effect: EffectSpec, p: int, mafs, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """One coefficient vector drawn from ``effect`` with base size ``scale``
    (``beta0``, ``strength`` or ``mu0`` depending on the law)."""
    beta = np.zeros(p)
    if effect.kind == "sphere":
        xi = np.abs(rng.standard_normal(p))
        return scale * effect.strength * xi / np.linalg.norm(xi)
    if effect.kind == "sparse-mean":
        k = min(effect.m, p)
        beta[rng.choice(p, size=k, replace=False)] = scale
        return beta
    k = max(1, int(round(effect.proportion * p)))
    support = rng.choice(p, size=k, replace=False)
    if effect.magnitude == "constant":
        mag = np.full(k, float(scale))
    else:
        if mafs is None:
            raise ValueError("log-maf effects need MAFs (genotype design)")
        mag = scale * np.abs(np.log10(np.asarray(mafs)[support]))
    if effect.sign == "random":
        mag = mag * rng.choice([-1.0, 1.0], size=k)
    beta[support] = mag
    return beta
