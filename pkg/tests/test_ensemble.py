import math

import numpy as np
import pytest

from entest.acat import combine, combine_rows
from entest.base_tests import burden, morst, skat, subset_chisq
from entest.dist import two_sided_normal_p
from entest.ensemble import (
    EnsembleConfig,
    default_subset_size,
    en_burden,
    en_morst,
    en_skat,
    en_subset_chisq,
    run_adaptive,
)
from entest.errors import ConfigError
from entest.reference_tests import full_chisq
from entest.sampling import SeedSpec, WeightLaw, sample_positive_direction, sample_subset
from entest.score_model import ScoreModel, exchangeable_sigma


def model(p=20, rho=0.2, shift=0.0, seed=0):
    sig = exchangeable_sigma(p, rho)
    rng = np.random.default_rng(seed)
    S = np.linalg.cholesky(sig) @ rng.standard_normal(p) + shift
    return ScoreModel(S, sig, 1000)


# ---- B = 1 identities -------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_single_base_test_identity(seed):
    m = model(seed=seed)
    cfg = EnsembleConfig(seed=seed, B_max=1)
    w = sample_positive_direction(m.p, cfg.law, cfg.seed, 0)
    assert abs(en_burden(m, cfg).p_value - burden(m, w).p_value) <= 1e-10
    assert abs(en_skat(m, cfg).p_value - skat(m, w).p_value) <= 1e-8
    assert abs(en_morst(m, cfg).p_value - morst(m, w).p_value) <= 1e-8


def test_subset_single_and_full():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal(100)
    assert default_subset_size(100) == 10
    cfg = EnsembleConfig(seed=4, B_max=1)
    J = sample_subset(100, 10, cfg.seed, 0)
    assert en_subset_chisq(Z, np.eye(100), cfg).p_value == pytest.approx(subset_chisq(Z, np.eye(100), J).p_value, rel=1e-10)
    cfg = EnsembleConfig(seed=4, B_max=1, subset_size=100)
    assert en_subset_chisq(Z, np.eye(100), cfg).p_value == pytest.approx(full_chisq(Z, np.eye(100)).p_value, rel=1e-10)


def test_equal_directions_reduce_to_one_test():
    m = model(seed=5)
    w = np.abs(np.random.default_rng(1).standard_normal(m.p))
    w /= np.linalg.norm(w)
    res = en_skat(m, EnsembleConfig(seed=1, B_max=300), directions=lambda i: w)
    assert res.p_value == pytest.approx(skat(m, w).p_value, rel=1e-10)


def test_morst_with_zero_theta_is_skat():
    m = model(seed=6)
    cfg = EnsembleConfig(seed=8, B_max=200, early_stop=False)
    a = en_morst(m, cfg, theta_rule=lambda mu: 0.0)
    b = en_skat(m, cfg)
    assert abs(a.p_value - b.p_value) <= 1e-8
    assert abs(en_morst(m, cfg, theta_rule=0.0).p_value - b.p_value) <= 1e-8


def test_auxiliary_law_is_used():
    m = model(seed=7)
    a = np.linspace(1, 5, m.p)
    cfg = EnsembleConfig(seed=2, B_max=1, law=WeightLaw.auxiliary(a))
    w = sample_positive_direction(m.p, cfg.law, cfg.seed, 0)
    assert en_burden(m, cfg).p_value == pytest.approx(burden(m, w).p_value, rel=1e-12)


# ---- controller ---------------------------------------------------------------------


def test_constant_half_stops_stable_at_min_b():
    res = run_adaptive(lambda i: 0.5, EnsembleConfig())
    assert (res.B_used, res.stop_reason, res.p_value) == (300, "stable", 0.5)


def test_futility_stop():
    res = run_adaptive(lambda i: 0.3, EnsembleConfig(target_alpha=1e-8))
    assert (res.B_used, res.stop_reason) == (300, "futility")


def test_super_significant_stop():
    res = run_adaptive(lambda i: 1e-15 if i == 0 else 0.5, EnsembleConfig(target_alpha=1e-8))
    assert (res.B_used, res.stop_reason) == (100, "super-significant")


def test_no_early_stop_runs_to_b_max():
    res = run_adaptive(lambda i: 0.5, EnsembleConfig(B_max=700, early_stop=False))
    assert (res.B_used, res.stop_reason, len(res.path)) == (700, "B_max", 7)


def test_min_b_above_b_max():
    res = run_adaptive(lambda i: 0.5, EnsembleConfig(B_max=150, min_B=300))
    assert res.B_used == 150
    assert [b for b, _ in res.path] == [100, 150]


def test_config_validation():
    with pytest.raises(ConfigError):
        EnsembleConfig(B_max=0)
    with pytest.raises(ConfigError):
        EnsembleConfig(target_alpha=1.5)
    with pytest.raises(ConfigError):
        EnsembleConfig(stability_tol=0.0)


def test_path_consistency():
    m = model(shift=0.4, seed=8)
    res = en_burden(m, EnsembleConfig(seed=3, B_max=1000, early_stop=False))
    for b, p in res.path:
        assert abs(combine(res.base_p[:b]).p_en - p) <= 1e-12 * max(p, 1e-300) + 1e-300
    assert res.path[-1][1] == res.p_value


@pytest.mark.parametrize("fn", [en_burden, en_skat, en_morst])
def test_deterministic_across_workers(fn):
    m = model(shift=0.3, seed=9)
    cfg = EnsembleConfig(seed=11, B_max=400)
    ref = fn(m, cfg, workers=1)
    for workers in (2, 4, 8):
        res = fn(m, cfg, workers=workers)
        assert res.p_value == ref.p_value and res.path == ref.path
        assert res.base_p.tobytes() == ref.base_p.tobytes()


def test_subset_deterministic_across_workers():
    Z = np.random.default_rng(1).standard_normal(49)
    cfg = EnsembleConfig(seed=5, B_max=300)
    a = en_subset_chisq(Z, np.eye(49), cfg, workers=1)
    b = en_subset_chisq(Z, np.eye(49), cfg, workers=6)
    assert a.base_p.tobytes() == b.base_p.tobytes()


def test_degenerate_subsets_are_redrawn():
    # coordinates 0 and 1 are perfectly correlated; subsets holding both are singular
    om = np.eye(6)
    om[0, 1] = om[1, 0] = 1.0
    Z = np.random.default_rng(2).standard_normal(6)
    res = en_subset_chisq(Z, om, EnsembleConfig(seed=1, B_max=200, subset_size=3, early_stop=False))
    assert res.B_used == 200 and np.all(np.isfinite(res.base_p))


def test_stability_improves_with_b():
    m = model(p=30, rho=0.1, shift=0.25, seed=10)
    sds = []
    for B in (100, 300, 1000):
        logs = [math.log10(en_burden(m, EnsembleConfig(seed=s, B_max=B, early_stop=False)).p_value)
                for s in range(50)]
        sds.append(np.std(logs))
    assert sds[0] > sds[1] > sds[2]


def test_null_calibration_en_burden():
    """P(p_en <= 1e-3) for EN-Burden (p=20, rho=0.2, B=100) over 1e6 null runs."""
    p, B, reps, chunk = 20, 100, 10**6, 10_000
    sig = exchangeable_sigma(p, 0.2)
    L = np.linalg.cholesky(sig)
    rng = np.random.default_rng(20240611)
    hits = 0
    for _ in range(reps // chunk):
        S = rng.standard_normal((chunk, p)) @ L.T
        w = np.abs(rng.standard_normal((chunk, B, p)))
        w /= np.linalg.norm(w, axis=2, keepdims=True)
        t = (w @ S[:, :, None])[:, :, 0] / np.linalg.norm(w @ L, axis=2)
        hits += int(np.sum(combine_rows(two_sided_normal_p(t)) <= 1e-3))
    rate = hits / reps
    assert 0.8e-3 <= rate <= 1.6e-3, rate
