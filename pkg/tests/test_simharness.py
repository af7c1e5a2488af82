import json
import math
import time

import numpy as np
import pytest
from pydantic import ValidationError

from entest.errors import ConfigError, DomainError
from entest.simharness import (
    EffectSpec,
    ExperimentSpec,
    GenotypeSpec,
    beta_weights,
    effect_vector,
    gen_genotypes,
    run_path,
    run_power,
    run_type1,
    run_variability,
)
from entest.simharness.genotypes import _counts, latent_correlation


# ---- genotypes ---------------------------------------------------------------------


def test_binomial_moments():
    spec = GenotypeSpec(n=100_000, p=5, maf_law="uniform", maf_lo=0.5, maf_hi=0.5)
    g = gen_genotypes(spec, np.random.default_rng(0))
    assert np.allclose(g.mafs, 0.5)
    assert np.allclose(g.matrix.mean(axis=0), 0.0, atol=1e-12)
    # Binomial(2, 1/2): variance 1/2, fourth central moment 1/2
    se = math.sqrt((0.5 - 0.25) / spec.n)
    assert np.all(np.abs(g.matrix.var(axis=0) - 0.5) <= 3 * se)
    for col in g.matrix.T:
        assert np.allclose(np.diff(np.unique(col)), 1.0)


def test_latent_copula_correlation():
    spec = GenotypeSpec(n=20_000, p=4, correlation="exchangeable", rho=0.3,
                        maf_law="uniform", maf_lo=0.2, maf_hi=0.4)
    g = gen_genotypes(spec, np.random.default_rng(1))
    # replay the latent Gaussians from the same stream
    rng = np.random.default_rng(1)
    latent = rng.standard_normal((spec.n, spec.p)) @ np.linalg.cholesky(latent_correlation(spec)).T
    counts = _counts(latent, g.mafs)
    assert np.array_equal(g.matrix, counts - counts.mean(axis=0))
    r = np.corrcoef(latent, rowvar=False)[np.triu_indices(4, 1)]
    se = (1 - 0.3**2) / math.sqrt(spec.n)
    assert np.all(np.abs(r - 0.3) <= 3 * se)
    # the counts inherit a positive correlation
    assert np.all(np.corrcoef(g.matrix, rowvar=False)[np.triu_indices(4, 1)] > 0.1)


def test_genotype_speed_and_polymorphism():
    spec = GenotypeSpec(n=10_000, p=100, correlation="exchangeable", rho=0.3)
    t0 = time.perf_counter()
    g = gen_genotypes(spec, np.random.default_rng(2))
    assert time.perf_counter() - t0 < 1.0
    assert np.all(np.ptp(g.matrix, axis=0) > 0)
    assert np.all((g.mafs >= 0.001) & (g.mafs <= 0.05))


def test_genotype_spec_validation():
    with pytest.raises(ValidationError):
        GenotypeSpec(n=10, p=5, correlation="exchangeable", rho=-0.5)
    with pytest.raises(ValidationError):
        GenotypeSpec(n=10, p=5, correlation="block", rho=0.2, block_sizes=[2, 2])
    with pytest.raises(ValidationError):
        GenotypeSpec(n=10, p=5, maf_lo=0.2, maf_hi=0.1)


# ---- weights and effects ---------------------------------------------------------------


def test_beta_weights():
    # 25 * 0.99^24 = 19.64195...
    assert beta_weights([0.01], 1, 25)[0] == pytest.approx(25 * 0.99**24, abs=1e-4)
    assert beta_weights([0.01], 1, 25)[0] == pytest.approx(19.6420, abs=1e-4)
    assert np.allclose(beta_weights([0.001, 0.2, 0.49], 1, 1), 1.0)
    with pytest.raises(DomainError):
        beta_weights([0.0, 0.1], 1, 25)
    with pytest.raises(DomainError):
        beta_weights([1.0], 1, 25)


def test_effect_vector_laws():
    rng = np.random.default_rng(3)
    eff = EffectSpec(proportion=0.2, magnitude="constant", sign="same")
    for _ in range(20):
        b = effect_vector(eff, 100, None, rng, scale=0.7)
        nz = b[b != 0]
        assert nz.size == 20
        assert np.allclose(np.abs(nz), 0.7)
        assert np.all(np.outer(nz, nz) > 0)
    mafs = np.full(100, 0.01)
    b = effect_vector(EffectSpec(proportion=0.4, magnitude="log-maf", sign="random"), 100, mafs, rng, 0.5)
    assert np.count_nonzero(b) == 40 and np.allclose(np.abs(b[b != 0]), 1.0)
    sphere = effect_vector(EffectSpec(kind="sphere", strength=0.3), 50, None, rng)
    assert np.linalg.norm(sphere) == pytest.approx(0.3) and np.all(sphere >= 0)


def test_support_is_uniform():
    rng = np.random.default_rng(4)
    eff = EffectSpec(proportion=0.2)
    hits = sum((effect_vector(eff, 10, None, rng) != 0).astype(int) for _ in range(5000))
    # each coordinate is in the support with probability 0.2
    se = math.sqrt(0.2 * 0.8 / 5000)
    assert np.all(np.abs(hits / 5000 - 0.2) <= 4 * se)


# ---- experiment specs ---------------------------------------------------------------------


def spec(**kw):
    base = dict(kind="type1", seed=5, design={"kind": "exchangeable", "p": 10, "rho": 0.2},
                tests=["chisq", "burden"], reps=20_000, alphas=[0.05, 0.01], chunk=5000)
    base.update(kw)
    return ExperimentSpec.model_validate(base)


def test_spec_validation():
    with pytest.raises(ValidationError):
        spec(reps=50)
    with pytest.raises(ValidationError):
        spec(alphas=[1.5])
    with pytest.raises(ValidationError):
        spec(tests=["nope"])
    with pytest.raises(ValidationError):
        spec(extra_field=1)
    with pytest.raises(ValidationError):
        spec(weights=["beta:1"])


def test_type1_exact_tests_nominal():
    table = run_type1(spec())
    for r in table.records():
        se = math.sqrt(r["alpha"] * (1 - r["alpha"]) / r["reps"])
        assert abs(r["estimate"] - r["alpha"]) <= 3 * se, r


def test_type1_exact_tests_on_genotypes():
    s = spec(design={"kind": "genotype", "p": 20, "n": 2000, "rho": 0.3, "covariates": True})
    for r in run_type1(s).records():
        se = math.sqrt(r["alpha"] * (1 - r["alpha"]) / r["reps"])
        assert abs(r["estimate"] - r["alpha"]) <= 3 * se, r


def test_type1_replication_underrun():
    with pytest.raises(ConfigError):
        run_type1(spec(reps=1000, alphas=[0.01]))


def test_type1_reproducible_across_threads():
    s = spec(tests=["en-burden", "en-skat"], reps=2000, alphas=[0.05], B=50, chunk=500)
    a = run_type1(s)
    b = run_type1(s.model_copy(update={"threads": 4}))
    assert a.rows == b.rows
    assert a.meta["spec_hash"] == b.meta["spec_hash"]


def test_table_write(tmp_path):
    table = run_type1(spec(reps=2000, alphas=[0.05]))
    tsv, meta = table.write(tmp_path, "t1")
    lines = tsv.read_text().splitlines()
    assert lines[0].split("\t") == ["test", "weights", "alpha", "estimate", "mc_se", "rejections", "reps"]
    assert len(lines) == 3
    info = json.loads(meta.read_text())
    assert info["seed"] == 5 and len(info["spec_hash"]) == 64 and "wall_time_s" in info


def test_power_monotone_in_effect_size():
    s = spec(kind="power", design={"kind": "exchangeable", "p": 20, "rho": 0.1, "n": 500},
             tests=["en-burden", "burden"], reps=2000, alphas=[0.01], B=100,
             effect={"kind": "sphere", "strength": 1.0}, grid={"values": [0.0, 0.05, 0.1, 0.15, 0.2]})
    table = run_power(s)
    for test in ("en-burden", "burden"):
        rows = table.select(test=test)
        pw = [r["power"] for r in rows]
        se = [r["mc_se"] for r in rows]
        assert all(b >= a - 2 * max(sa, sb, 1e-3) for a, b, sa, sb in zip(pw, pw[1:], se, se[1:]))
        assert pw[-1] > pw[0]


def test_path_null_futility():
    s = spec(kind="path", design={"kind": "exchangeable", "p": 20, "rho": 0.2},
             tests=["en-burden"], reps=100, B=1000, target_alpha=1e-8)
    table = run_path(s)
    stops = {r["rep"]: (r["stop_reason"], r["B_used"]) for r in table.records()}
    futile = sum(reason == "futility" and b < 1000 for reason, b in stops.values())
    assert futile >= 95


def test_path_strong_signal_stops_at_first_block():
    s = spec(kind="path", design={"kind": "exchangeable", "p": 20, "rho": 0.2, "n": 2000},
             tests=["en-burden"], reps=100, B=1000, target_alpha=1e-8, signal=True,
             effect={"kind": "sphere", "strength": 1.0}, grid={"values": [2.0]})
    table = run_path(s)
    for r in table.records():
        assert (r["stop_reason"], r["B_used"]) == ("super-significant", 100)


def test_path_deterministic():
    s = spec(kind="path", design={"kind": "exchangeable", "p": 10, "rho": 0.2},
             tests=["en-burden"], reps=100, B=300, min_B=300)
    assert run_path(s).rows == run_path(s.model_copy(update={"threads": 4})).rows


def test_variability_small():
    s = spec(kind="variability", design={"kind": "exchangeable", "p": 50, "rho": -0.018, "n": 2000},
             tests=["en-burden"], alphas=[1e-6], B=200, alternatives=100, reps_per_alternative=100,
             mc_levels=[0.05], effect={"kind": "sphere", "strength": 0.3}, grid={"values": [3000]})
    table = run_variability(s)
    summ = table.meta["summary"]
    assert len(table.rows) == 200
    assert summ["en_mean"] > summ["base_mean"]
