"""Command-line interface: ``entest {test,scan,simulate,path}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from . import __version__
from .base_tests import burden, morst, skat
from .ensemble import EnsembleConfig, en_burden, en_morst, en_skat, en_subset_chisq
from .errors import ConfigError, DataError, EntestError
from .reference_tests import berk_jones, full_chisq, higher_criticism, original_burden, original_morst, original_skat
from .sampling import SeedSpec, WeightLaw
from .score_model import ScoreModel, from_regression
from .simharness.genotypes import beta_weights

TESTS = ("en-burden", "en-skat", "en-morst", "en-subset-chisq", "burden", "skat", "morst", "hc", "bj", "chisq")


# --------------------------------------------------------------------------
# input parsing
# --------------------------------------------------------------------------


def read_tsv(path, header: bool = False) -> np.ndarray:
    """Numeric TSV as a 2-D array; errors name the offending line and column."""
    rows: List[List[float]] = []
    width = None
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            row = []
            for col, text in enumerate(fields, start=1):
                try:
                    v = float(text)
                except ValueError:
                    raise DataError(f"{path}:{lineno}:{col}: cannot parse {text!r} as a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}:{col}: non-finite value {text!r}")
                row.append(v)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows)


def read_score_file(path) -> ScoreModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    for key in ("S", "Sigma", "n"):
        if key not in data:
            raise DataError(f"{path}: missing field {key!r}")
    try:
        S = np.asarray(data["S"], dtype=float)
        Sigma = np.asarray(data["Sigma"], dtype=float)
    except (TypeError, ValueError):
        raise DataError(f"{path}: S and Sigma must be numeric arrays") from None
    if not isinstance(data["n"], int) or data["n"] < 1:
        raise DataError(f"{path}: n must be a positive integer")
    if S.ndim != 1 or Sigma.ndim != 2:
        raise DataError(f"{path}: S must be a vector and Sigma a square array of arrays")
    try:
        return ScoreModel(S, Sigma, data["n"])
    except EntestError as exc:
        raise DataError(f"{path}: {exc}") from None


class Inputs:
    """A score model, or raw data from which score models are built per window."""

    def __init__(self, model=None, Y=None, G=None, Z=None):
        self.model, self.Y, self.G, self.Z = model, Y, G, Z

    @property
    def p(self) -> int:
        return self.model.p if self.model is not None else self.G.shape[1]

    def mafs(self, cols=None) -> Optional[np.ndarray]:
        if self.G is None:
            return None
        g = self.G if cols is None else self.G[:, cols]
        f = np.clip(g.mean(axis=0) / 2.0, 0.0, 1.0)
        return np.minimum(f, 1.0 - f)

    def window_model(self, cols) -> ScoreModel:
        if self.model is not None:
            return self.model
        return from_regression(self.Y, self.G[:, cols], self.Z)


def load_inputs(args) -> Inputs:
    if args.scores:
        if args.pheno or args.geno:
            raise ConfigError("give either --scores or --pheno/--geno, not both")
        return Inputs(model=read_score_file(args.scores))
    if not (args.pheno and args.geno):
        raise ConfigError("need --scores, or both --pheno and --geno")
    Y = read_tsv(args.pheno, args.header)
    if Y.shape[1] != 1:
        raise DataError(f"{args.pheno}: phenotype file must have one column")
    G = read_tsv(args.geno, args.header)
    Z = read_tsv(args.covar, args.header) if args.covar else None
    if G.shape[0] != Y.shape[0] or (Z is not None and Z.shape[0] != Y.shape[0]):
        raise DataError("phenotype, genotype and covariate files have different numbers of rows")
    return Inputs(Y=Y[:, 0], G=G, Z=Z)


def weight_vector(spec: str, inputs: Inputs, cols) -> Optional[np.ndarray]:
    """Auxiliary weights for the selected columns, or ``None`` for flat."""
    if spec == "flat":
        return None
    if spec.startswith("file:"):
        a = read_tsv(spec[5:]).ravel()
        if np.any(a <= 0):
            raise DataError(f"{spec[5:]}: weights must be positive")
        full = a
        if full.size != inputs.p:
            raise DataError(f"{spec[5:]}: expected {inputs.p} weights, found {full.size}")
        return full[cols]
    if spec.startswith("beta:"):
        try:
            c1, c2 = (float(v) for v in spec[5:].split(","))
        except ValueError:
            raise ConfigError(f"bad --weights {spec!r}; expected beta:c1,c2") from None
        mafs = inputs.mafs(cols)
        if mafs is None:
            raise ConfigError("beta weights need genotypes to compute MAFs; use file:PATH with --scores")
        if np.any(mafs <= 0):
            raise DataError("beta weights undefined for monomorphic variants")
        return beta_weights(mafs, c1, c2)
    raise ConfigError(f"unknown --weights {spec!r}")


# --------------------------------------------------------------------------
# running a test
# --------------------------------------------------------------------------


def config_of(args) -> dict:
    keys = ("test", "weights", "B_max", "block", "min_B", "seed", "alpha", "theta", "subset_size", "no_early_stop")
    return {k: getattr(args, k, None) for k in keys}


def config_hash(args, extra: Optional[dict] = None) -> str:
    cfg = config_of(args)
    if extra:
        cfg.update(extra)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ensemble_config(args, law: WeightLaw, early_stop: bool) -> EnsembleConfig:
    return EnsembleConfig(
        seed=SeedSpec(args.seed),
        B_max=args.B_max,
        block=args.block,
        min_B=args.min_B,
        target_alpha=args.alpha,
        law=law,
        subset_size=args.subset_size,
        early_stop=early_stop,
    )


def run_one(args, inputs: Inputs, cols, workers: int, early_stop: bool) -> dict:
    model = inputs.window_model(cols)
    a = weight_vector(args.weights, inputs, cols)
    test = args.test
    law = WeightLaw.uniform() if a is None else WeightLaw.auxiliary(a)
    flat = np.ones(model.p) if a is None else a
    if test.startswith("en-"):
        cfg = ensemble_config(args, law, early_stop)
        if test == "en-burden":
            res = en_burden(model, cfg, workers)
        elif test == "en-skat":
            res = en_skat(model, cfg, workers)
        elif test == "en-morst":
            res = en_morst(model, cfg, args.theta, workers)
        else:
            sd = np.sqrt(np.diag(model.Sigma))
            if np.any(sd <= 0):
                raise DataError("a variant has zero variance")
            res = en_subset_chisq(model.S / sd, model.Sigma / np.outer(sd, sd), cfg, workers)
        return {
            "test": test, "p_value": res.p_value, "statistic": res.statistic,
            "B_used": res.B_used, "stop_reason": res.stop_reason,
            "path": [[b, p] for b, p in res.path],
        }
    if test == "burden":
        r = original_burden(model, flat)
    elif test == "skat":
        r = original_skat(model, flat)
    elif test == "morst":
        r = original_morst(model, flat, args.theta)
    else:
        sd = np.sqrt(np.diag(model.Sigma))
        Z = model.S / sd
        if test == "chisq":
            r = full_chisq(Z, model.Sigma / np.outer(sd, sd))
        elif test == "hc":
            r = higher_criticism(Z)
        else:
            r = berk_jones(Z)
    return {"test": test, "p_value": r.p_value, "statistic": r.statistic,
            "B_used": 1, "stop_reason": None, "path": []}


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("ENTEST_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_test(args, out) -> int:
    inputs = load_inputs(args)
    cols = np.arange(inputs.p)
    rec = run_one(args, inputs, cols, args.threads, not args.no_early_stop)
    rec["seed"] = args.seed
    rec["config_hash"] = config_hash(args)
    out.write(json.dumps(rec) + "\n")
    return 0


def windows(p: int, width: int, skip: int, positions=None) -> list:
    """Index arrays of the windows; by variant count, or by base pairs with ``positions``."""
    if width < 1 or skip < 1:
        raise ConfigError("--window and --skip must be positive")
    if positions is None:
        if width > p:
            raise ConfigError(f"window of {width} variants exceeds the {p} available")
        return [np.arange(s, s + width) for s in range(0, p - width + 1, skip)]
    pos = np.asarray(positions, dtype=float)
    if pos.size != p:
        raise DataError(f"positions file has {pos.size} entries, expected {p}")
    if np.any(np.diff(pos) < 0):
        raise DataError("positions must be nondecreasing")
    if pos[-1] - pos[0] + 1 < width:
        raise ConfigError("window wider than the genotyped region")
    out = []
    start = pos[0]
    while start + width <= pos[-1] + 1:
        idx = np.flatnonzero((pos >= start) & (pos < start + width))
        if idx.size:
            out.append(idx)
        start += skip
    return out


def cmd_scan(args, out) -> int:
    inputs = load_inputs(args)
    if inputs.model is not None:
        raise ConfigError("scan needs --pheno/--geno data, not a score file")
    positions = read_tsv(args.positions, args.header).ravel() if args.positions else None
    wins = windows(inputs.p, args.window, args.skip, positions)

    def one(cols):
        return run_one(args, inputs, cols, 1, not args.no_early_stop)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            recs = list(pool.map(one, wins))
    else:
        recs = [one(c) for c in wins]
    out.write(f"# seed={args.seed}\tconfig_hash={config_hash(args, {'window': args.window, 'skip': args.skip})}\n")
    cols = ["start", "end", "p_value", "B_used", "stop_reason"]
    if positions is not None:
        cols = ["start", "end", "start_bp", "end_bp", "p_value", "B_used", "stop_reason"]
    out.write("\t".join(cols) + "\n")
    for idx, rec in zip(wins, recs):
        fields = [str(idx[0] + 1), str(idx[-1] + 1)]
        if positions is not None:
            fields += [repr(float(positions[idx[0]])), repr(float(positions[idx[-1]]))]
        fields += [repr(float(rec["p_value"])), str(rec["B_used"]), str(rec["stop_reason"])]
        out.write("\t".join(fields) + "\n")
    return 0


def cmd_path(args, out) -> int:
    if not args.test.startswith("en-"):
        raise ConfigError("path needs an ensemble test (en-*)")
    inputs = load_inputs(args)
    rec = run_one(args, inputs, np.arange(inputs.p), args.threads, early_stop=False)
    out.write(f"# seed={args.seed}\tconfig_hash={config_hash(args)}\n")
    out.write("B\tp_en\n")
    for b, p in rec["path"]:
        out.write(f"{b}\t{p!r}\n")
    return 0


def cmd_simulate(args, out) -> int:
    from .simharness.experiments import run_experiment
    from .simharness.spec import ExperimentSpec

    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise ConfigError(f"{args.spec}: {exc.strerror}") from None
    try:
        spec = ExperimentSpec.model_validate_json(text)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(x) for x in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid experiment spec:\n  " + "\n  ".join(lines)) from None
    if args.threads > 1:
        spec = spec.model_copy(update={"threads": args.threads})
    table = run_experiment(spec)
    tsv, meta = table.write(args.out, args.name or spec.name)
    out.write(json.dumps({"table": str(tsv), "metadata": str(meta), "rows": len(table.rows)}) + "\n")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--scores", help="JSON score file with fields S, Sigma, n")
    g.add_argument("--pheno", help="phenotype TSV (one column)")
    g.add_argument("--geno", help="genotype TSV, n rows by p variants")
    g.add_argument("--covar", help="covariate TSV, n rows")
    g.add_argument("--header", action="store_true", help="TSV files start with a header row")


def _add_test_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--test", choices=TESTS, default="en-burden")
    p.add_argument("--weights", default="flat", help="flat, beta:c1,c2 or file:PATH")
    p.add_argument("--B-max", dest="B_max", type=int, default=1000)
    p.add_argument("--block", type=int, default=100)
    p.add_argument("--min-B", dest="min_B", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=None, help="target level for early stopping")
    p.add_argument("--theta", type=float, default=None, help="MORST ridge parameter")
    p.add_argument("--subset-size", dest="subset_size", type=int, default=None)
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--threads", type=int, default=default_threads())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entest", description="Ensemble tests of a global null.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run one test and print a JSON record")
    _add_inputs(p)
    _add_test_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("scan", help="test sliding windows of variants")
    _add_inputs(p)
    _add_test_flags(p)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--skip", type=int, required=True)
    p.add_argument("--positions", help="one base-pair position per variant; windows then in bp")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("path", help="print the ensemble p-value path (no early stopping)")
    _add_inputs(p)
    _add_test_flags(p)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("simulate", help="run an experiment described by a JSON spec")
    p.add_argument("spec")
    p.add_argument("--out", default=".")
    p.add_argument("--name", default=None)
    p.add_argument("--threads", type=int, default=default_threads())
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("entest: error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args, out)
    except EntestError as exc:
        print(f"entest: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"entest: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
