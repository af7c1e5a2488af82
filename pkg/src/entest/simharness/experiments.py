"""Type-I calibration, power curves, p-value paths and power variability.

All randomness is drawn from counter-based streams keyed by the experiment
seed and a chunk index, so results are identical for any thread count.
Ensemble arms use one fixed set of ``B`` random components per design (what
a user running with a fixed seed would get), shared by every replicate.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.special import ndtri

from ..dist import normal_sf
from ..ensemble import EnsembleConfig, default_subset_size, en_burden, en_morst, en_skat, en_subset_chisq
from ..errors import ConfigError, DegenerateSubsetError
from ..sampling import SeedSpec, WeightLaw, sample_positive_direction, sample_subset, stream_for
from ..score_model import ScoreModel, exchangeable_sigma
from ..reference_tests import DEFAULT_TABLE_SEED
from .banks import BurdenBank, CalibratedBank, MorstBank, SkatBank, SubsetBank
from .designs import GaussianDesign, RegressionDesign
from .genotypes import GenotypeSpec, beta_weights, draw_mafs, gen_genotypes
from .spec import ENSEMBLE_TESTS, ExperimentSpec, effect_vector, parse_weights

# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


@dataclass
class ExperimentTable:
    kind: str
    columns: List[str]
    rows: List[tuple]
    meta: Dict = field(default_factory=dict)

    def records(self) -> List[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def select(self, **where) -> List[dict]:
        return [r for r in self.records() if all(r[k] == v for k, v in where.items())]

    def to_tsv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, delimiter="\t", lineterminator="\n")
        out.writerow(self.columns)
        for r in self.rows:
            out.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, outdir, stem: Optional[str] = None):
        """Write ``<stem>.tsv`` and the ``<stem>.json`` metadata sidecar."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.meta.get("name", self.kind)
        tsv = outdir / f"{stem}.tsv"
        meta = outdir / f"{stem}.json"
        tsv.write_text(self.to_tsv())
        meta.write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=_jsonable))
        return tsv, meta


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def write_score_file(path, S, Sigma, n: int) -> None:
    """JSON score file ``{S, Sigma, n}`` as read by the ``test`` command.

    Floats are written with ``repr`` precision so they round-trip exactly.
    """
    data = {"S": [float(v) for v in np.ravel(S)],
            "Sigma": [[float(v) for v in row] for row in np.asarray(Sigma)],
            "n": int(n)}
    Path(path).write_text(json.dumps(data))


# --------------------------------------------------------------------------
# designs and arms
# --------------------------------------------------------------------------


def build_design(spec: ExperimentSpec, d: int):
    ds = spec.design
    rng = stream_for(SeedSpec(spec.seed, "design"), d)
    gspec = GenotypeSpec(
        n=max(ds.n, 2), p=ds.p, maf_law=ds.maf_law, maf_lo=ds.maf_lo, maf_hi=ds.maf_hi,
        correlation=ds.correlation, rho=ds.rho, block_sizes=ds.block_sizes,
    )
    if ds.kind == "genotype":
        geno = gen_genotypes(gspec, rng)
        Z = None
        if ds.covariates:
            z1 = rng.standard_normal(ds.n)
            z2 = rng.choice([-0.5, 0.5], size=ds.n)
            Z = np.column_stack([z1, z2])
        return RegressionDesign(geno.matrix, Z, geno.mafs)
    mafs = draw_mafs(gspec, rng, ds.p)
    if ds.kind == "exchangeable":
        return GaussianDesign(exchangeable_sigma(ds.p, ds.rho), ds.n, mafs)
    return GaussianDesign(np.eye(ds.p), ds.n, mafs)


@dataclass(frozen=True)
class Arm:
    test: str
    weights: str

    @property
    def label(self) -> str:
        return self.test if self.weights == "flat" else f"{self.test}[{self.weights}]"

    @property
    def ensemble(self) -> bool:
        return self.test in ENSEMBLE_TESTS


def arms_for(spec: ExperimentSpec) -> List[Arm]:
    out = []
    for t in spec.tests:
        uses_weights = t in ("en-burden", "en-skat", "en-morst", "burden", "skat", "morst")
        for w in (spec.weights if uses_weights else ["flat"]):
            out.append(Arm(t, w))
    return out


def _law(weights: str, mafs) -> WeightLaw:
    c1, c2 = parse_weights(weights)
    if weights == "flat":
        return WeightLaw.uniform()
    return WeightLaw.auxiliary(beta_weights(mafs, c1, c2))


def _subsets(p: int, s: int, B: int, seed: SeedSpec, Omega) -> list:
    out = []
    for i in range(B):
        for k in range(101):
            J = sample_subset(p, s, seed if k == 0 else seed.child(f"retry{k}"), i)
            if np.linalg.cond(Omega[np.ix_(J, J)]) <= 1e8:
                out.append(J)
                break
        else:
            raise DegenerateSubsetError(f"subset {i} stayed degenerate")
    return out


class _Standardized:
    """Applies a bank to ``Z = S / sqrt(diag Sigma)``."""

    def __init__(self, bank, sd):
        self.bank, self.sd, self.size = bank, sd, bank.size

    def pvalues(self, S):
        return self.bank.pvalues(S / self.sd)

    def ensemble(self, S):
        return self.bank.ensemble(S / self.sd)


def build_bank(spec: ExperimentSpec, design, d: int, arm: Arm, B: Optional[int] = None, directions=None):
    """Base-test bank for ``arm`` on ``design``; ``directions`` overrides the sampler."""
    B = spec.B if B is None else B
    Sigma = design.Sigma
    p = Sigma.shape[0]
    t = arm.test
    if t in ("en-burden", "en-skat", "en-morst"):
        W = directions
        if W is None:
            law = _law(arm.weights, design.mafs)
            seed = SeedSpec(spec.seed, f"directions/{d}/{arm.weights}")
            W = np.stack([sample_positive_direction(p, law, seed, i) for i in range(B)])
    elif t in ("burden", "skat", "morst"):
        c1, c2 = parse_weights(arm.weights)
        a = np.ones(p) if arm.weights == "flat" else beta_weights(design.mafs, c1, c2)
        W = (a / np.linalg.norm(a))[None, :]
    if t in ("en-burden", "burden"):
        return BurdenBank(Sigma, W)
    if t in ("en-skat", "skat"):
        return SkatBank(Sigma, W)
    if t in ("en-morst", "morst"):
        return MorstBank(Sigma, W, spec.theta)
    sd = np.sqrt(np.diag(Sigma))
    Omega = Sigma / np.outer(sd, sd)
    if t == "en-subset-chisq":
        s = spec.subset_size or default_subset_size(p)
        subsets = _subsets(p, s, B, SeedSpec(spec.seed, f"subsets/{d}"), Omega)
        return _Standardized(SubsetBank(Omega, subsets), sd)
    if t == "chisq":
        return _Standardized(SubsetBank(Omega, [np.arange(p)]), sd)
    return _Standardized(CalibratedBank(t, p, spec.calib_draws, DEFAULT_TABLE_SEED), sd)


class _Context:
    """Designs plus banks for every arm, built once per experiment."""

    def __init__(self, spec: ExperimentSpec, arms: List[Arm]):
        self.spec = spec
        self.arms = arms
        self.designs = [build_design(spec, d) for d in range(spec.design.n_designs)]
        self.banks = [{a: build_bank(spec, des, d, a) for a in arms} for d, des in enumerate(self.designs)]

    def chunks(self, reps: int, label: str):
        """``(index, design index, size)`` for each chunk of ``reps`` replicates."""
        size = self.spec.chunk
        n_chunks = math.ceil(reps / size)
        return [(k, k % len(self.designs), min(size, reps - k * size)) for k in range(n_chunks)]

    def map(self, fn, items):
        if self.spec.threads > 1:
            with ThreadPoolExecutor(self.spec.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(it) for it in items]

    def noise(self, label: str, k: int, d: int, size: int):
        rng = stream_for(SeedSpec(self.spec.seed, label), k)
        return self.designs[d].draw_noise(rng, size)

    def effects(self, label: str, k: int, d: int, size: int) -> np.ndarray:
        rng = stream_for(SeedSpec(self.spec.seed, label), k)
        des = self.designs[d]
        return np.stack([effect_vector(self.spec.effect, des.Sigma.shape[0], des.mafs, rng) for _ in range(size)])


def _meta(spec: ExperimentSpec, started: float, **extra) -> dict:
    meta = {
        "name": spec.name,
        "kind": spec.kind,
        "seed": spec.seed,
        "spec_hash": spec.hash(),
        "spec": spec.model_dump(mode="json"),
        "wall_time_s": round(time.time() - started, 3),
    }
    meta.update(extra)
    return meta


# --------------------------------------------------------------------------
# type-I error
# --------------------------------------------------------------------------


def run_type1(spec: ExperimentSpec) -> ExperimentTable:
    """Empirical rejection rates under the global null (no early stopping)."""
    if spec.kind != "type1":
        raise ConfigError("run_type1 needs kind='type1'")
    if spec.reps * min(spec.alphas) < 100:
        raise ConfigError(
            f"reps={spec.reps} gives fewer than 100 expected exceedances at alpha={min(spec.alphas)}"
        )
    started = time.time()
    arms = arms_for(spec)
    ctx = _Context(spec, arms)
    alphas = np.asarray(spec.alphas)

    def chunk(item):
        k, d, size = item
        S = ctx.designs[d].scores(ctx.noise("null", k, d, size))
        return np.stack([(ctx.banks[d][a].ensemble(S)[:, None] <= alphas).sum(axis=0) for a in arms])

    counts = sum(ctx.map(chunk, ctx.chunks(spec.reps, "null")))
    rows = []
    for i, a in enumerate(arms):
        for j, alpha in enumerate(spec.alphas):
            est = counts[i, j] / spec.reps
            se = math.sqrt(max(est * (1 - est), alpha * (1 - alpha)) / spec.reps)
            rows.append((a.test, a.weights, float(alpha), float(est), float(se), int(counts[i, j]), spec.reps))
    cols = ["test", "weights", "alpha", "estimate", "mc_se", "rejections", "reps"]
    return ExperimentTable("type1", cols, rows, _meta(spec, started))


# --------------------------------------------------------------------------
# power
# --------------------------------------------------------------------------


_null_cache: Dict[tuple, np.ndarray] = {}
_NULL_CACHE_MAX = 16


def _null_key(spec: ExperimentSpec, arm: Arm, d: int, reps: int) -> tuple:
    # everything the null ensemble p-values depend on; effect and grid do not enter
    fields = ("seed", "design", "B", "subset_size", "theta", "calib_draws", "chunk")
    blob = json.dumps(spec.model_dump(mode="json", include=set(fields)), sort_keys=True)
    return (blob, arm, d, reps)


def _null_pvalues(ctx: _Context, arm: Arm, d: int, reps: int) -> np.ndarray:
    """Null ensemble p-values, memoized so experiments that share a design reuse them."""
    key = _null_key(ctx.spec, arm, d, reps)
    if key not in _null_cache:
        if len(_null_cache) >= _NULL_CACHE_MAX:
            _null_cache.pop(next(iter(_null_cache)))
        null = _simulate_null_pvalues(ctx, arm, d, reps)
        null.setflags(write=False)
        _null_cache[key] = null
    return _null_cache[key]


def _simulate_null_pvalues(ctx: _Context, arm: Arm, d: int, reps: int) -> np.ndarray:
    size = ctx.spec.chunk
    items = [(k, min(size, reps - k * size)) for k in range(math.ceil(reps / size))]
    bank = ctx.banks[d][arm]

    def one(item):
        k, n = item
        rng = stream_for(SeedSpec(ctx.spec.seed, f"mc-null/{d}"), k)
        return bank.ensemble(ctx.designs[d].scores(ctx.designs[d].draw_noise(rng, n)))

    return np.concatenate(ctx.map(one, items))


def mc_critical_values(ctx: _Context) -> Dict:
    """``{(design, arm, alpha): threshold}`` for ensemble arms at the MC levels.

    The threshold is the ``alpha`` quantile of the null ensemble p-value, so
    rejecting when ``p_en <= threshold`` has size ``alpha`` up to MC error.
    """
    spec = ctx.spec
    out = {}
    levels = [a for a in spec.alphas if a in spec.mc_levels]
    if not levels:
        return out
    if spec.mc_reps * min(levels) < 100:
        raise ConfigError("mc_reps too small for the requested MC critical levels")
    for d in range(len(ctx.designs)):
        for arm in ctx.arms:
            if not arm.ensemble:
                continue
            null = np.sort(_null_pvalues(ctx, arm, d, spec.mc_reps))
            for a in levels:
                k = int(math.floor(a * null.size))
                out[(d, arm, a)] = float(null[max(k - 1, 0)])
    return out


class _PowerEval:
    """Rejection counts for one arm at a given effect size, using common random numbers."""

    def __init__(self, ctx: _Context, reps: int, label: str):
        self.ctx = ctx
        self.items = ctx.chunks(reps, label)
        self.label = label
        self.reps = reps
        self._cache = {}

    def _draws(self, k, d, size):
        if k not in self._cache:
            self._cache[k] = (
                self.ctx.noise(f"{self.label}/noise", k, d, size),
                self.ctx.effects(f"{self.label}/effects", k, d, size),
            )
        return self._cache[k]

    def _scores(self, k, d, size, value):
        noise, beta = self._draws(k, d, size)
        des = self.ctx.designs[d]
        if self.ctx.spec.grid.param == "n":
            return des.scores(noise, beta, 1.0, n=value)
        return des.scores(noise, beta, value)

    def pvalues(self, arms, value) -> Dict:
        def one(item):
            k, d, size = item
            S = self._scores(k, d, size, value)
            return {a: self.ctx.banks[d][a].ensemble(S) for a in arms}

        parts = self.ctx.map(one, self.items)
        return {a: [(item[1], part[a]) for item, part in zip(self.items, parts)] for a in arms}

    def power(self, arms, value, alpha, crit) -> Dict:
        res = self.pvalues(arms, value)
        out = {}
        for a in arms:
            hits = 0
            for d, p in res[a]:
                hits += int(np.sum(p <= crit.get((d, a, alpha), alpha)))
            out[a] = hits / self.reps
        return out


def _tune(f, target: float, start: float, log_space=True, tol=2e-3, max_iter=60) -> float:
    """Smallest-ish value with ``f(value) ~ target`` for a nondecreasing ``f``."""
    lo, hi = None, None
    x = start
    for _ in range(max_iter):
        if f(x) < target:
            lo = x
            if hi is not None:
                break
            x *= 2.0
        else:
            hi = x
            if lo is not None:
                break
            x /= 2.0
        if x < 1e-12 or x > 1e12:
            raise ConfigError("could not bracket the target power")
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi) if log_space else 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < tol:
            break
    return math.sqrt(lo * hi)


def _grid_for(spec: ExperimentSpec, ctx: _Context, crit: Dict, alpha: float) -> List[float]:
    g = spec.grid
    if g.values is not None:
        return list(g.values)
    ref_name = g.reference or next((t for t in spec.tests if t in ENSEMBLE_TESTS), spec.tests[0])
    ref = next(a for a in ctx.arms if a.test == ref_name)
    pilot = _PowerEval(ctx, min(g.pilot_reps, spec.reps), "pilot")

    def f(v):
        return pilot.power([ref], v, alpha, crit)[ref]

    start = float(spec.design.n) if g.param == "n" else 1.0
    lo = _tune(f, g.target[0], start)
    if g.points == 1:
        return [lo]
    hi = _tune(f, g.target[1], lo)
    return list(np.linspace(lo, hi, g.points))


def run_power(spec: ExperimentSpec) -> ExperimentTable:
    """Power per test along an effect-size grid, per alpha.

    At levels listed in ``mc_levels`` ensemble tests reject below a Monte
    Carlo critical value; elsewhere the nominal level is used.
    """
    if spec.kind != "power":
        raise ConfigError("run_power needs kind='power'")
    started = time.time()
    arms = arms_for(spec)
    ctx = _Context(spec, arms)
    crit = mc_critical_values(ctx)
    evaluator = _PowerEval(ctx, spec.reps, "alt")
    rows = []
    grids = {}
    for alpha in spec.alphas:
        grid = _grid_for(spec, ctx, crit, alpha)
        grids[alpha] = grid
        for v in grid:
            pw = evaluator.power(arms, v, alpha, crit)
            for a in arms:
                thr = crit.get((0, a, alpha), alpha)
                pv = pw[a]
                se = math.sqrt(pv * (1 - pv) / spec.reps)
                rows.append((float(alpha), spec.grid.param, float(v), a.test, a.weights, float(pv), float(se), float(thr)))
    cols = ["alpha", "grid_param", "grid_value", "test", "weights", "power", "mc_se", "threshold"]
    meta = _meta(spec, started, grids={str(k): v for k, v in grids.items()},
                 critical_values={f"{d}/{a.label}/{al}": v for (d, a, al), v in crit.items()})
    return ExperimentTable("power", cols, rows, meta)


# --------------------------------------------------------------------------
# p-value paths
# --------------------------------------------------------------------------


def run_path(spec: ExperimentSpec) -> ExperimentTable:
    """Adaptive ensemble runs on independent replicates, recording the p-value path.

    Uses the same controller as the library; with ``target_alpha`` set the
    futility and super-significance stops are active.
    """
    if spec.kind != "path":
        raise ConfigError("run_path needs kind='path'")
    started = time.time()
    arms = [a for a in arms_for(spec) if a.ensemble]
    if not arms:
        raise ConfigError("path experiments need at least one ensemble test")
    designs = [build_design(spec, d) for d in range(spec.design.n_designs)]
    scale = spec.grid.values[0] if spec.grid.values else 1.0

    def one(r):
        d = r % len(designs)
        des = designs[d]
        rng = stream_for(SeedSpec(spec.seed, "path-data"), r)
        noise = des.draw_noise(rng, 1)
        beta = effect_vector(spec.effect, spec.design.p, des.mafs, rng) if spec.signal else None
        S = des.scores(noise, beta, scale)[0]
        model = ScoreModel(S, des.Sigma, des.n)
        out = []
        for a in arms:
            cfg = EnsembleConfig(
                seed=SeedSpec(spec.seed, f"path/{r}/{a.weights}"), B_max=spec.B, block=spec.block,
                min_B=spec.min_B, target_alpha=spec.target_alpha,
                law=_law(a.weights, des.mafs), subset_size=spec.subset_size,
            )
            if a.test == "en-burden":
                res = en_burden(model, cfg)
            elif a.test == "en-skat":
                res = en_skat(model, cfg)
            elif a.test == "en-morst":
                res = en_morst(model, cfg, spec.theta)
            else:
                sd = np.sqrt(np.diag(des.Sigma))
                res = en_subset_chisq(S / sd, des.Sigma / np.outer(sd, sd), cfg)
            for B, p in res.path:
                out.append((r, a.test, a.weights, B, -math.log10(p), res.stop_reason, res.B_used))
        return out

    if spec.threads > 1:
        with ThreadPoolExecutor(spec.threads) as pool:
            parts = list(pool.map(one, range(spec.reps)))
    else:
        parts = [one(r) for r in range(spec.reps)]
    rows = [row for part in parts for row in part]
    cols = ["rep", "test", "weights", "B", "neg_log10_p", "stop_reason", "B_used"]
    return ExperimentTable("path", cols, rows, _meta(spec, started))


# --------------------------------------------------------------------------
# per-alternative power variability
# --------------------------------------------------------------------------


def _iqr(x) -> float:
    q1, q3 = np.percentile(x, [25, 75])
    return float(q3 - q1)


def run_variability(spec: ExperimentSpec) -> ExperimentTable:
    """Power of EN-Burden and of a single random base Burden test at many alternatives.

    Each alternative draws its own coefficient vector and its own base
    direction.  Base-test power is exact (noncentral normal) on Gaussian
    designs; EN-Burden power is estimated from ``reps_per_alternative``
    replicates with the fixed ensemble directions.  Unless ``grid.values``
    fixes n, n is tuned so the mean power of ``grid.reference`` (``en-burden``
    by default, or ``burden`` for the base test) equals ``target_mean_power``.
    """
    if spec.kind != "variability":
        raise ConfigError("run_variability needs kind='variability'")
    if spec.design.kind == "genotype":
        raise ConfigError("variability experiments need a Gaussian design")
    if len(spec.alphas) != 1:
        raise ConfigError("variability experiments take exactly one alpha")
    started = time.time()
    alpha = spec.alphas[0]
    arm = Arm("en-burden", spec.weights[0])
    ctx = _Context(spec.model_copy(update={"tests": ["en-burden"]}), [arm])
    des = ctx.designs[0]
    Sigma = des.Sigma
    p = Sigma.shape[0]
    crit = mc_critical_values(ctx)
    thr = crit.get((0, arm, alpha), alpha)
    bank = ctx.banks[0][arm]
    law = _law(arm.weights, des.mafs)
    z = float(-ndtri(alpha / 2.0))

    def alternative(k):
        rng = stream_for(SeedSpec(spec.seed, "alternative"), k)
        beta = effect_vector(spec.effect, p, des.mafs, rng)
        w = sample_positive_direction(p, law, SeedSpec(spec.seed, "base-direction"), k)
        noise = des.draw_noise(rng, spec.reps_per_alternative)
        return beta, w, noise

    alts = ctx.map(alternative, range(spec.alternatives))

    def powers(n, subset=None):
        sel = alts if subset is None else alts[:subset]
        en, base = [], []
        for beta, w, noise in sel:
            S = des.scores(noise, beta, 1.0, n=n)
            en.append(float(np.mean(bank.ensemble(S) <= thr)))
            mean = math.sqrt(n) * float(w @ Sigma @ beta) / math.sqrt(float(w @ Sigma @ w))
            base.append(float(normal_sf(z - mean) + normal_sf(z + mean)))
        return np.array(en), np.array(base)

    ref = spec.grid.reference or "en-burden"
    if ref not in ("en-burden", "burden"):
        raise ConfigError("variability reference must be en-burden or burden")
    col = 0 if ref == "en-burden" else 1
    n = float(spec.design.n)
    if spec.grid.values is None:
        n = _tune(lambda v: powers(v, subset=min(100, spec.alternatives))[col].mean(),
                  spec.target_mean_power, n)
    else:
        n = float(spec.grid.values[0])
    en, base = powers(n)
    rows = [(k, "en-burden", float(en[k])) for k in range(len(en))]
    rows += [(k, "base-burden", float(base[k])) for k in range(len(base))]
    summary = {
        "n": n, "reference": ref, "alpha": alpha, "threshold": thr,
        "en_mean": float(en.mean()), "base_mean": float(base.mean()),
        "en_iqr": _iqr(en), "base_iqr": _iqr(base),
    }
    return ExperimentTable("variability", ["alternative", "test", "power"], rows,
                           _meta(spec, started, summary=summary))


RUNNERS = {"type1": run_type1, "power": run_power, "path": run_path, "variability": run_variability}


def run_experiment(spec: ExperimentSpec) -> ExperimentTable:
    return RUNNERS[spec.kind](spec)
