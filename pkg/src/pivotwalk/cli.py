"""Command-line experiment runner.

    python -m pivotwalk run CONFIG [--output DIR]
    python -m pivotwalk validate CONFIG
    python -m pivotwalk calibrate CONFIG [--output DIR]

Exit status is 0 on success, 1 when an experiment fails and 2 for an
invalid configuration.  ``PIVOTWALK_OUTPUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import stats
from .calibration import calibrate_ledger
from .chain import DistanceChain
from .config import build_measure, config_hash, diagnose, load_config, resolved
from .contraction import ConstantLedger
from .errors import ConstantLedgerViolation, ConstructionError, UsageError
from .pivotal import (Trajectory, count_law, dominates, paired_dagger_size, paired_pivot_sets,
                      rational_ratio, run_pivotal)
from .schottky import check_repulsion, construct_schottky, verify_schottky
from .space import FreeGroupTree, make_backend
from .walk import decompose, path_rng, sample_path

OK, EXPERIMENT_ERROR, CONFIG_ERROR = 0, 1, 2
COLUMNS = ("experiment", "seed", "n", "statistic", "value", "stderr", "config-hash", "code-version")
OUTPUT_ENV = "PIVOTWALK_OUTPUT"


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


class Run:
    """Shared state of one configuration: backend, measure, Schottky set, ledger, outputs."""

    def __init__(self, config: dict):
        self.config = config
        self.seed = config["seed"]
        self.workers = config["workers"]
        self.backend = make_backend(config["backend"])
        self.mu = build_measure(self.backend, config["measure"])
        self.rows: list[tuple] = []
        self.summary: dict = {}
        self.paths: list[str] = []
        self.ledger_report = None
        self._S = None
        self._ledger = None
        self._certify()

    def _certify(self):
        """Flag the measure non-elementary when two support elements witness it."""
        from .calibration import default_probes

        if not isinstance(self.backend, FreeGroupTree):
            return
        gens = [g for g in self.mu.support if len(g) == 1]
        probes = default_probes(self.backend, radius=4)
        for i in range(len(gens)):
            for j in range(i + 1, len(gens)):
                if gens[j] != self.backend.inverse(gens[i]) and \
                        self.mu.certify_non_elementary([gens[i]], [gens[j]], probes, K=2.0):
                    return

    @property
    def S(self):
        if self._S is None:
            sch = self.config["schottky"]
            a, b = (self.backend.parse_isometry(g) for g in sch["generators"])
            size = sch["target_size"]
            block = None
            if "M0" in sch:
                depth = max(1, math.ceil(math.log2(size)))
                if sch["M0"] % depth:
                    raise UsageError(f"M0={sch['M0']} must be a multiple of the pattern depth {depth}")
                block = sch["M0"] // depth
            self._S = construct_schottky(self.backend, a, b, size, block_length=block)
        return self._S

    @property
    def ledger(self) -> ConstantLedger:
        if self._ledger is None:
            spec = self.config["ledger"]
            if spec == "calibrate":
                self.ledger_report = calibrate_ledger(self.S)
                self._ledger = self.ledger_report.ledger
            else:
                self._ledger = ConstantLedger.from_dict(spec)
            errors, warns = self._ledger.problems()
            if errors:
                raise ConstantLedgerViolation("; ".join(errors))
            self.summary.setdefault("ledger_warnings", warns)
        return self._ledger

    def chain(self) -> DistanceChain | None:
        """The exact distance chain when the measure is (lazy) simple random walk on a tree."""
        spec = self.config["measure"]
        if "simple" in spec and isinstance(self.backend, FreeGroupTree):
            from fractions import Fraction
            return DistanceChain(self.backend.rank, Fraction(spec["simple"].get("laziness", 0)))
        return None

    def emit(self, experiment, seed, n, statistic, value, stderr=None):
        self.rows.append((experiment, seed, n, statistic, value, stderr))


# ----------------------------------------------------------------------------
# experiments


def _seed(run: Run, exp: dict) -> int:
    return exp.get("seed", run.seed)


def exp_calibrate(run: Run, exp: dict):
    report = calibrate_ledger(run.S)
    run.ledger_report = report
    run._ledger = report.ledger
    for k, v in report.ledger.to_dict().items():
        run.emit("calibrate", run.seed, None, k, v)
    errors, warns = report.ledger.problems()
    run.summary["calibrate"] = {"ledger": report.ledger.to_dict(), "measurements": report.measurements,
                                "errors": errors, "warnings": warns}


def exp_schottky(run: Run, exp: dict):
    from .calibration import default_probes

    S = run.S
    verdict = verify_schottky(run.backend, S.elements, S.K0, default_probes(run.backend))
    try:
        repulsion = check_repulsion(S)
    except UsageError:
        repulsion = None
    name = "schottky"
    run.emit(name, run.seed, None, "size", len(S))
    run.emit(name, run.seed, None, "M0", S.M0)
    run.emit(name, run.seed, None, "K0", S.K0)
    run.emit(name, run.seed, None, "verified", verdict.passed)
    if repulsion is not None:
        run.emit(name, run.seed, None, "repulsion", repulsion)
    run.summary[name] = {"set": S.to_dict(), "verified": verdict.passed, "repulsion": repulsion}


def exp_pivotal_exact(run: Run, exp: dict):
    n = exp.get("n", 3)
    S, ledger = run.S, run.ledger
    instances = exp.get("instances") or [{}]
    out = []
    for idx, inst in enumerate(instances):
        e = run.backend.identity
        w = [run.backend.parse_isometry(x) for x in inst.get("w", [e] * (n + 1))]
        v = [run.backend.parse_isometry(x) for x in inst.get("v", [e] * n)]
        laws: list = []
        law = count_law(S, ledger, n, w, v, step_laws=laws)
        q = rational_ratio(laws)
        ok = dominates(law, q, n) if q < 1 else None
        for c, p in law.items():
            run.emit("pivotal-exact", run.seed, n, f"instance{idx}:P[#P={c}]", float(p))
        run.emit("pivotal-exact", run.seed, n, f"instance{idx}:q_effective", float(q))
        if ok is not None:
            run.emit("pivotal-exact", run.seed, n, f"instance{idx}:dominates", ok)
        out.append({"law": {str(c): str(p) for c, p in law.items()}, "q": str(q), "dominates": ok,
                    "outcomes": len(S) ** (4 * n)})
    run.summary["pivotal-exact"] = out


def exp_escape_rate(run: Run, exp: dict):
    n, seed = exp.get("n", 1000), _seed(run, exp)
    est = stats.escape_rate(run.mu, n, exp["samples"], seed, workers=run.workers)
    run.emit("escape-rate", seed, n, "lambda", est.value, est.stderr)
    run.emit("escape-rate", seed, n, "ci_low", est.ci[0])
    run.emit("escape-rate", seed, n, "ci_high", est.ci[1])
    run.emit("escape-rate", seed, n, "positive", est.positive)
    info = {"lambda": est.value, "stderr": est.stderr, "ci": est.ci, "positive": est.positive,
            "non_elementary": est.non_elementary}
    chain = run.chain()
    if chain is not None:
        run.emit("escape-rate", seed, n, "lambda_exact", chain.drift)
        info["lambda_exact"] = chain.drift
    run.summary["escape-rate"] = info


def exp_lower_tail(run: Run, exp: dict):
    seed = _seed(run, exp)
    n_list = exp.get("n_list", list(range(20, 201, 20)))
    L = exp["L"]
    table = stats.lower_tail(run.mu, L, n_list, exp["samples"], seed, workers=run.workers)
    for n, p, se in table.rows:
        run.emit("lower-tail", seed, n, "tail", p, se)
    info = {"L": L, "fit": table.fit.__dict__ if table.fit else None}
    chain = run.chain()
    if chain is not None:
        exact = chain.lower_tails(n_list, L)
        for n in n_list:
            run.emit("lower-tail", seed, n, "tail_exact", exact[n])
        fit = stats.log_linear_fit(n_list, [exact[n] for n in n_list])
        info["fit_exact"] = fit.__dict__
        run.emit("lower-tail", seed, None, "slope_exact", fit.slope)
        run.emit("lower-tail", seed, None, "r2_exact", fit.r2)
    if table.fit:
        run.emit("lower-tail", seed, None, "slope", table.fit.slope)
        run.emit("lower-tail", seed, None, "r2", table.fit.r2)
    run.summary["lower-tail"] = info


def exp_deviation(run: Run, exp: dict):
    seed = _seed(run, exp)
    xs = exp.get("basepoints", ["", "a", "ab"])
    H, p = exp.get("horizon", 1000), exp.get("p", 1.0)
    table = stats.deviation_sup(run.mu, xs, p, H, exp["samples"], seed, workers=run.workers)
    for r in table.rows:
        run.emit("deviation", seed, H, f"sup_moment[{r.x}]", r.estimate, r.stderr)
        run.emit("deviation", seed, 2 * H, f"sup_moment[{r.x}]", r.doubled)
    info = {"spread": table.spread, "maximum": table.maximum, "horizon_change": table.horizon_change,
            "p": p, "horizon": H}
    if exp.get("two_sided"):
        model = decompose(run.mu, run.S)
        at_h, at_2h, se = stats.two_sided_deviation(model, p, H, exp["samples"], seed)
        run.emit("deviation", seed, H, "two_sided", at_h, se)
        run.emit("deviation", seed, 2 * H, "two_sided", at_2h)
        info["two_sided"] = {"H": at_h, "2H": at_2h}
    run.summary["deviation"] = info


def _oracle_parameters(run: Run):
    chain = run.chain()
    return (chain.drift, chain.sigma) if chain is not None else (None, None)


def _clt_records(run: Run, exp: dict):
    seed = _seed(run, exp)
    drift, sigma = _oracle_parameters(run)
    n_list = exp.get("n_list", [100, 1000])
    return seed, stats.clt_statistics(run.mu, n_list, exp["samples"], seed, drift, sigma, workers=run.workers)


def exp_clt(run: Run, exp: dict):
    seed, records = _clt_records(run, exp)
    for r in records:
        run.emit("clt", seed, r.n, "kolmogorov", r.kolmogorov)
        run.emit("clt", seed, r.n, "mean_normalized", r.mean_normalized)
        run.emit("clt", seed, r.n, "var_normalized", r.var_normalized)
        run.emit("clt", seed, r.n, "sigma_n", r.sigma_n)
    run.summary["clt"] = [r.__dict__ for r in records]


def exp_lil(run: Run, exp: dict):
    seed, records = _clt_records(run, exp)
    for r in records:
        run.emit("lil", seed, r.n, "lil_max", r.lil_max)
        run.emit("lil", seed, r.n, "lil_min", r.lil_min)
    run.summary["lil"] = [{"n": r.n, "max": r.lil_max, "min": r.lil_min} for r in records]


def exp_berry(run: Run, exp: dict):
    seed = _seed(run, exp)
    n_list = exp.get("n_list", [100, 200, 400, 800, 1600])
    drift, sigma = _oracle_parameters(run)
    info = {}
    if drift is not None:
        curve = stats.berry_esseen_curve(run.mu, n_list, exp["samples"], seed, drift, sigma, workers=run.workers)
        for n, d in curve.rows:
            run.emit("berry", seed, n, "sup_distance", d)
        info["monte_carlo"] = {"beta": curve.beta, "K": curve.K, "under_envelope": curve.under_envelope}
        if exp.get("exact", True):
            exact = stats.berry_curve(run.chain().kolmogorov_curve(n_list).items())
            for n, d in exact.rows:
                run.emit("berry", seed, n, "sup_distance_exact", d)
            run.emit("berry", seed, None, "under_envelope_exact", exact.under_envelope)
            info["exact"] = {"beta": exact.beta, "K": exact.K, "under_envelope": exact.under_envelope}
    else:
        records = stats.clt_statistics(run.mu, n_list, exp["samples"], seed, workers=run.workers)
        curve = stats.berry_curve([(r.n, r.kolmogorov) for r in records])
        for n, d in curve.rows:
            run.emit("berry", seed, n, "sup_distance", d)
        info["monte_carlo"] = {"beta": curve.beta, "K": curve.K, "under_envelope": curve.under_envelope}
    run.summary["berry"] = info


def exp_tracking(run: Run, exp: dict):
    seed = _seed(run, exp)
    n = exp.get("n", 1000)
    H = exp.get("horizon", 2 * n)
    model, ledger = decompose(run.mu, run.S), run.ledger
    logs, roots, labels = [], [], []
    for i in range(exp["samples"]):
        path = sample_path(model, H, seed, i)
        if run.config["dump_paths"]:
            run.paths.append(path.to_json())
        rec = stats.tracking_distance(path, ledger, H, n)
        logs.append(rec.max_over_log())
        roots.append(rec.max_over_root(exp.get("p", 1.0)))
        labels.append(rec.label)
    logs = np.array(logs)
    certified = float(np.mean([lab == "certified" for lab in labels]))
    run.emit("tracking", seed, n, "p99_max_over_log", float(np.percentile(logs, 99)))
    run.emit("tracking", seed, n, "median_max_over_log", float(np.median(logs)))
    run.emit("tracking", seed, n, "max_over_root", float(np.max(roots)))
    run.emit("tracking", seed, n, "certified_fraction", certified)
    run.summary["tracking"] = {"p99": float(np.percentile(logs, 99)), "certified_fraction": certified,
                               "horizon": H, "n": n}


def exp_paired_pivot(run: Run, exp: dict):
    seed = _seed(run, exp)
    n = exp.get("n", 3)
    S, ledger = run.S, run.ledger
    N = len(S)
    rng = path_rng(seed, 0, 2)
    worst_star, worst_check, worst_dagger, pairs = 0, 0, math.inf, 0
    for _ in range(exp.get("samples", 10)):
        fwd = Trajectory.uniform(S, rng.integers(N, size=(n, 4)).tolist())
        bwd = Trajectory.uniform(S, rng.integers(N, size=(n, 4)).tolist())
        k_max = min(len(run_pivotal(fwd, ledger).pivots), len(run_pivotal(bwd, ledger).pivots))
        for k in range(1, k_max + 1):
            star, check = paired_pivot_sets(fwd, bwd, k, ledger)
            worst_star = max(worst_star, N - len(star))
            worst_check = max(worst_check, N - len(check))
            worst_dagger = min(worst_dagger, paired_dagger_size(fwd, bwd, k, ledger))
            pairs += 1
    run.emit("paired-pivot", seed, n, "max_missing_forward", worst_star)
    run.emit("paired-pivot", seed, n, "max_missing_backward", worst_check)
    run.emit("paired-pivot", seed, n, "pairs", pairs)
    if pairs:
        run.emit("paired-pivot", seed, n, "min_dagger_size", worst_dagger)
        run.emit("paired-pivot", seed, n, "dagger_bound", N ** 6 - 8 * N ** 5)
    run.summary["paired-pivot"] = {"pairs": pairs, "max_missing": [worst_star, worst_check],
                                   "min_dagger": worst_dagger if pairs else None}


EXPERIMENTS = {
    "calibrate": exp_calibrate,
    "schottky": exp_schottky,
    "pivotal-exact": exp_pivotal_exact,
    "escape-rate": exp_escape_rate,
    "lower-tail": exp_lower_tail,
    "deviation": exp_deviation,
    "clt": exp_clt,
    "berry": exp_berry,
    "lil": exp_lil,
    "tracking": exp_tracking,
    "paired-pivot": exp_paired_pivot,
}


# ----------------------------------------------------------------------------
# artifacts


def write_outputs(run: Run, out: Path, digest: str):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for experiment, seed, n, stat, value, se in run.rows:
            writer.writerow([experiment, seed, "" if n is None else n, stat, fmt(value), fmt(se), digest, __version__])
    summary = {"config-hash": digest, "code-version": __version__, "seed": run.seed, "results": run.summary}
    (out / "summary.json").write_text(json.dumps(jsonable(summary), indent=2, sort_keys=True) + "\n")
    if run.ledger_report is not None:
        body = {"ledger": run.ledger_report.ledger.to_dict(), "probe_radius": run.ledger_report.probe_radius,
                "measurements": run.ledger_report.measurements, "config-hash": digest}
        (out / "ledger.json").write_text(json.dumps(jsonable(body), indent=2, sort_keys=True) + "\n")
    if run.paths:
        (out / "paths.jsonl").write_text("".join(p + "\n" for p in run.paths))


def _prepare(path: str, output: str | None):
    config = load_config(path)
    problems = [d for d in diagnose(config) if d.level == "error"]
    if problems:
        raise _ConfigError(problems)
    output = output or os.environ.get(OUTPUT_ENV)
    return config, resolved(config, output)


class _ConfigError(Exception):
    def __init__(self, problems):
        self.problems = problems


def run_config(config: dict, names: list[str] | None = None) -> Run:
    """Execute the experiments of a resolved configuration (restricted to ``names`` if given)."""
    run = Run(config)
    for exp in config["experiments"]:
        if names is None or exp["name"] in names:
            EXPERIMENTS[exp["name"]](run, exp)
    return run


def _execute(args, only_calibrate: bool) -> int:
    try:
        raw, config = _prepare(args.config, args.output)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except _ConfigError as exc:
        for d in exc.problems:
            print(d, file=sys.stderr)
        return CONFIG_ERROR
    try:
        if only_calibrate:
            run = Run(config)
            exp_calibrate(run, {"name": "calibrate"})
        else:
            run = run_config(config)
    except (UsageError, ConstructionError, ConstantLedgerViolation) as exc:
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXPERIMENT_ERROR
    write_outputs(run, Path(config["output"]), config_hash(raw))
    return OK


def cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    diags = diagnose(config)
    for d in diags:
        print(d)
    return CONFIG_ERROR if any(d.level == "error" for d in diags) else OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pivotwalk", description="Random-walk experiments on spaces with contracting isometries.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run every experiment in a config"),
                           ("calibrate", "measure the constant ledger and write ledger.json"),
                           ("validate", "check a config without running it")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config")
        if name != "validate":
            p.add_argument("--output", "-o", default=None, help="output directory (overrides the config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    return _execute(args, only_calibrate=args.command == "calibrate")


if __name__ == "__main__":
    sys.exit(main())
