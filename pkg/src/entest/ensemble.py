"""Ensembles of randomized base tests combined by the Cauchy combination.

The adaptive controller evaluates base tests in blocks, records the
ensemble p-value after each block (the p-value path) and stops when the
path has settled, when the test is hopeless or when it is already far
beyond the target level.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .acat import combine
from .base_tests import burden, morst, skat, subset_chisq
from .errors import (
    ConfigError,
    DataError,
    DegenerateDirectionError,
    DegenerateSubsetError,
    NumericalError,
)
from .sampling import MAX_RETRIES, SeedSpec, WeightLaw, sample_positive_direction, sample_subset
from .score_model import ScoreModel

STOP_REASONS = ("stable", "futility", "super-significant", "B_max")


@dataclass(frozen=True)
class EnsembleConfig:
    seed: SeedSpec = field(default_factory=lambda: SeedSpec(0))
    B_max: int = 1000
    block: int = 100
    min_B: int = 300
    stability_tol: float = 0.05
    futility_margin: float = 100.0
    supersig_margin: float = 1e-3
    target_alpha: Optional[float] = None
    law: WeightLaw = field(default_factory=WeightLaw.uniform)
    subset_size: Optional[int] = None
    early_stop: bool = True

    def __post_init__(self):
        if isinstance(self.seed, (int, np.integer)):
            object.__setattr__(self, "seed", SeedSpec(int(self.seed)))
        for name in ("B_max", "block", "min_B"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("stability_tol", "futility_margin", "supersig_margin"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.target_alpha is not None and not 0 < self.target_alpha < 1:
            raise ConfigError("target_alpha must lie in (0, 1)")
        if self.subset_size is not None and self.subset_size < 1:
            raise ConfigError("subset_size must be positive")

    @property
    def effective_min_B(self) -> int:
        return min(self.min_B, self.B_max)


@dataclass(frozen=True, eq=False)
class TestResult:
    p_value: float
    statistic: float
    B_used: int
    stop_reason: str
    path: tuple
    base_p: np.ndarray = field(repr=False)

    __test__ = False  # not a pytest class


def _stop_reason(path, B: int, cfg: EnsembleConfig) -> Optional[str]:
    p_en = path[-1][1]
    alpha = cfg.target_alpha
    if alpha is not None and p_en < cfg.supersig_margin * alpha:
        return "super-significant"
    if B < cfg.effective_min_B:
        return None
    if alpha is not None and p_en > cfg.futility_margin * alpha:
        return "futility"
    if len(path) >= 3:
        logs = [math.log10(v) for _, v in path[-3:]]
        if all(abs(b - a) <= cfg.stability_tol for a, b in zip(logs, logs[1:])):
            return "stable"
    return None


def run_adaptive(base_p: Callable[[int], float], cfg: EnsembleConfig, workers: int = 1) -> TestResult:
    """Evaluate ``base_p(0), base_p(1), ...`` in blocks until a stop rule fires.

    Stop rules, checked after every block in this order: super-significance
    (``p_en < supersig_margin * target_alpha``), futility (``B >= min_B`` and
    ``p_en > futility_margin * target_alpha``), stability (``B >= min_B`` and
    the last two changes of ``log10 p_en`` between block boundaries are
    within ``stability_tol``), and finally ``B_max``.  With
    ``cfg.early_stop`` false only ``B_max`` applies.  Results do not depend
    on ``workers``.
    """
    ps: list[float] = []
    path = []
    reason = "B_max"
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while len(ps) < cfg.B_max:
            lo = len(ps)
            hi = min(lo + cfg.block, cfg.B_max)
            if pool is None:
                ps.extend(base_p(i) for i in range(lo, hi))
            else:
                ps.extend(pool.map(base_p, range(lo, hi)))
            p_en = combine(ps).p_en
            path.append((hi, p_en))
            if cfg.early_stop and hi < cfg.B_max:
                why = _stop_reason(path, hi, cfg)
                if why is not None:
                    reason = why
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    stat, p_en = combine(ps)
    return TestResult(p_en, stat, len(ps), reason, tuple(path), np.asarray(ps))


def _with_retries(fn, seed: SeedSpec, i: int, degenerate, fail_exc):
    for k in range(MAX_RETRIES + 1):
        stream = seed if k == 0 else seed.child(f"retry{k}")
        try:
            return fn(stream, i)
        except degenerate:
            continue
    raise fail_exc(f"base test {i} stayed degenerate after {MAX_RETRIES} resamples")


def _direction_ensemble(model: ScoreModel, cfg: EnsembleConfig, base, workers, directions=None):
    p = model.p

    def draw(stream, i):
        w = directions(i) if directions is not None else sample_positive_direction(p, cfg.law, stream, i)
        return base(model, w).p_value

    def one(i):
        return _with_retries(draw, cfg.seed, i, DegenerateDirectionError, NumericalError)

    return run_adaptive(one, cfg, workers)


def en_burden(model: ScoreModel, cfg: EnsembleConfig, workers: int = 1, directions=None) -> TestResult:
    """Ensemble of Burden tests along random positive directions.

    ``directions`` optionally replaces the sampler with a function of the
    base index (useful for testing).
    """
    return _direction_ensemble(model, cfg, burden, workers, directions)


def en_skat(model: ScoreModel, cfg: EnsembleConfig, workers: int = 1, directions=None) -> TestResult:
    """Ensemble of SKAT tests with random diagonal weights."""
    return _direction_ensemble(model, cfg, skat, workers, directions)


def en_morst(
    model: ScoreModel,
    cfg: EnsembleConfig,
    theta_rule=None,
    workers: int = 1,
    directions=None,
) -> TestResult:
    """Ensemble of MORST tests; ``theta_rule`` maps the eigenvalues of ``W Sigma W`` to theta.

    A number is accepted as a constant rule; ``None`` uses the default
    reciprocal-mean-eigenvalue heuristic.
    """

    def base(m, w):
        return morst(m, w, theta_rule)

    return _direction_ensemble(model, cfg, base, workers, directions)


def default_subset_size(p: int) -> int:
    return max(1, math.isqrt(p))


def en_subset_chisq(Z, Omega, cfg: EnsembleConfig, workers: int = 1) -> TestResult:
    """Ensemble of chi-squared tests on random coordinate subsets of size ``s``.

    ``s`` is ``cfg.subset_size`` or ``floor(sqrt(p))``.  Subsets whose
    correlation block is ill-conditioned are redrawn.
    """
    Z = np.asarray(Z, dtype=float).ravel()
    Omega = np.asarray(Omega, dtype=float)
    p = Z.size
    if Omega.shape != (p, p):
        raise DataError(f"Omega has shape {Omega.shape}, expected {(p, p)}")
    s = cfg.subset_size if cfg.subset_size is not None else default_subset_size(p)
    if not 1 <= s <= p:
        raise ConfigError(f"subset size {s} not in [1, {p}]")

    def draw(stream, i):
        return subset_chisq(Z, Omega, sample_subset(p, s, stream, i)).p_value

    def one(i):
        return _with_retries(draw, cfg.seed, i, DegenerateSubsetError, DataError)

    return run_adaptive(one, cfg, workers)
