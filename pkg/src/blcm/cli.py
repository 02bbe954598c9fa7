"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 negative identifiability check,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ._indexing import configurations
from .estimate import EmConfig, fit, select_k
from .exceptions import BlcmError, DegenerateInput, ParamError, ParseError, SchemaError
from .experiment import ExperimentConfig, run_experiment
from .graph import BipartiteGraph, align_columns, check_theorem2_conditions, find_double_triangular, shd_gamma
from .model import (
    conditional_table,
    degenerate_example,
    marginal_pmf,
    response_matrix,
    subset_counterexample,
    subset_violation_example,
)
from .oracle import (
    identifiability_budget,
    kruskal_condition,
    lemma1_rank_check,
    recover_gamma_population,
    resolve_signs_subset,
    scramble,
)
from .simulate import ScenarioSpec, build_scenario, load_dataset, sample_dataset, scenario_manifest

EXIT_OK, EXIT_INPUT, EXIT_NEGATIVE, EXIT_RUNTIME = 0, 1, 2, 3

INPUT_ERRORS = (ParseError, SchemaError, ParamError, FileNotFoundError, IsADirectoryError,
                PermissionError, json.JSONDecodeError, ValueError)

# Example graph whose parameters outnumber the observed equations.
DEFICIT_GAMMA = ((1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1))
# Item split (0-based) whose three tables meet Kruskal's bound for the
# eight-item benchmark graph.
DEFAULT_KRUSKAL_SPLIT = ((0, 1, 2), (5, 6, 4), (3, 7))


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _out_dir(args):
    d = Path(args.out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _scenario(args):
    return ScenarioSpec.parse(args.scenario, args.n, args.seed)


def _em_config(args):
    cfg = EmConfig.from_json(args.config) if args.config else EmConfig()
    if args.seed is not None:
        cfg = EmConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args):
    spec = _scenario(args)
    m = build_scenario(spec)
    d = _out_dir(args)
    stem = f"{spec.lambda_kind}_{spec.gamma_kind}_n{spec.n}_seed{spec.seed}"
    data_path, manifest_path = d / f"{stem}.csv", d / f"{stem}.json"
    sample_dataset(m, spec.n, spec.seed).to_csv(data_path)
    manifest = scenario_manifest(spec)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    _emit({"data": str(data_path), "manifest": str(manifest_path)})
    return EXIT_OK


def cmd_check(args):
    g = BipartiteGraph.from_csv(args.gamma_csv)
    report = check_theorem2_conditions(g)
    out = report.to_dict()
    if report.subset_violation is not None:
        # 1-based latent labels for readers
        out["subset_violation_1based"] = [v + 1 for v in report.subset_violation]
    _emit(out)
    return EXIT_OK if report.sufficient else EXIT_NEGATIVE


def _write_fit(result, d, stem="fit"):
    result.to_json(d / f"{stem}.json")
    result.gamma_hat.to_csv(d / f"{stem}_gamma.csv")
    np.savetxt(d / f"{stem}_theta.csv", result.theta_hat.theta, delimiter=",", fmt="%.10g")
    lines = ["from,to,type"]
    for a, b in sorted(result.lambda_hat.directed_edges):
        lines.append(f"{a + 1},{b + 1},directed")
    for e in sorted(sorted(e) for e in result.lambda_hat.undirected_edges):
        lines.append(f"{e[0] + 1},{e[1] + 1},undirected")
    (d / f"{stem}_lambda_edges.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_fit(args):
    data = load_dataset(args.data_csv)
    cfg = _em_config(args)
    d = _out_dir(args)
    if args.k is not None:
        result = fit(data, args.k, cfg)
        _write_fit(result, d)
        _emit({"k": args.k, "bic": result.bic, "gamma_hat": result.gamma_hat.entries.tolist(),
               "out": str(d / "fit.json")})
        return EXIT_OK
    k_best, table, fits = select_k(data, (2, 3, 4), cfg)
    _write_fit(fits[k_best], d)
    lines = ["k,bic,loglik"] + [f"{r['k']},{r['bic']:.10g},{r['loglik']:.10g}" for r in table]
    (d / "bic_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({"k": k_best, "bic_table": table, "out": str(d / "fit.json")})
    return EXIT_OK


def cmd_experiment(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    else:
        base = {}
    if args.scenario:
        base["scenarios"] = args.scenario
    if args.n:
        base["n_values"] = args.n
    if args.reps is not None:
        base["n_reps"] = args.reps
    if args.seed is not None:
        base["seed"] = args.seed
    if args.init is not None:
        base["init_mode"] = args.init
    base["output_dir"] = args.out or base.get("output_dir") or "experiment_out"
    base["parallelism"] = args.parallelism or base.get("parallelism") or os.cpu_count() or 1
    cfg = ExperimentConfig.from_dict(base)
    out = run_experiment(cfg)
    n_failed = sum(r["status"] != "ok" for r in out["rows"])
    _emit({"aggregate": out["aggregate"], "n_failed": n_failed, "out": cfg.output_dir})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Oracle subcommands

def _random_triangular(k, rng):
    g = np.tril(rng.integers(0, 2, (k, k)), -1) + np.eye(k, dtype=int)
    h = configurations(k)
    theta = np.empty((k, 1 << k))
    for i in range(k):
        pa = np.flatnonzero(g[i])
        while True:
            tab = rng.uniform(0.05, 0.95, 1 << len(pa))
            if np.min(np.abs(np.subtract.outer(tab, tab)) + np.eye(tab.size)) > 1e-3:
                break
        theta[i] = tab[(h[:, pa].astype(int) << np.arange(len(pa))).sum(axis=1)]
    return g, theta


def _oracle_lemma1(args):
    rng = np.random.default_rng(args.seed)
    g, theta = _random_triangular(args.k, rng)
    r = lemma1_rank_check(g, theta)
    _emit({"gamma_block": g.tolist(), **r.to_dict()})
    return EXIT_OK


def _oracle_kruskal(args):
    m = build_scenario(args.scenario)
    th = conditional_table(m).theta
    if args.split:
        split = [tuple(int(v) - 1 for v in part.split(",")) for part in args.split.split(";")]
        if len(split) != 3:
            raise ParamError("--split needs three groups separated by ';'")
    else:
        split = DEFAULT_KRUSKAL_SPLIT
    s1, s2, s3 = (list(s) for s in split)
    t1 = response_matrix(th[s1]) * m.proportions.values
    res = kruskal_condition(t1, response_matrix(th[s2]), response_matrix(th[s3]))
    _emit({"split_1based": [[v + 1 for v in s] for s in split], **res.to_dict()})
    return EXIT_OK


def _oracle_recover(args):
    m = build_scenario(args.scenario)
    w = find_double_triangular(m.gamma)
    st = scramble(m, args.seed)
    rec = recover_gamma_population(st, w)
    perm = align_columns(rec.gamma, m.gamma)
    out = {
        "gamma_recovered": rec.gamma.entries.tolist(),
        "tau": list(rec.tau),
        "matches_up_to_column_permutation": shd_gamma(rec.gamma.entries[:, list(perm)], m.gamma) == 0,
    }
    try:
        signs = resolve_signs_subset(st, m.gamma)
        hidden = st.hidden_permutation()
        h = configurations(m.n_latent)
        flips = h[signs.labels] ^ h[hidden]
        out["sign_resolution"] = {"labels": signs.labels.tolist(),
                                  "consistent_up_to_sign_flips": bool((flips == flips[0]).all())}
    except BlcmError as exc:
        out["sign_resolution"] = {"error": str(exc)}
    _emit(out)
    return EXIT_OK


def _oracle_budget(args):
    g = BipartiteGraph.from_csv(args.gamma_csv) if args.gamma_csv else BipartiteGraph(np.array(DEFICIT_GAMMA))
    _emit(identifiability_budget(g).to_dict())
    return EXIT_OK


def _oracle_counterexample(args):
    if args.kind == "subset":
        m = subset_violation_example()
        alt = subset_counterexample(m)
        h = configurations(2)
        rows = [{"h": h[i].tolist(), "pi": float(m.proportions.values[i]),
                 "pi_tilde": float(alt.proportions.values[i])} for i in (0, 2, 1, 3)]
        diff = float(np.max(np.abs(marginal_pmf(m) - marginal_pmf(alt))))
        _emit({"table": rows, "max_pmf_difference": diff})
    else:
        ex = degenerate_example(args.k)
        h = configurations(args.k)
        diff = float(np.max(np.abs(marginal_pmf(ex.model) - marginal_pmf(ex.alternative))))
        _emit({"relabel": [{"h": h[i].tolist(), "h_tilde": h[ex.relabel[i]].tolist()} for i in range(len(h))],
               "gamma": ex.model.gamma.entries.tolist(),
               "gamma_tilde": ex.alternative.gamma.entries.tolist(),
               "max_pmf_difference": diff})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def build_parser():
    p = argparse.ArgumentParser(prog="blcm", description="Binary latent causal models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a benchmark dataset")
    s.add_argument("--scenario", default="chain/DT")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check", help="check graphical identifiability conditions")
    s.add_argument("gamma_csv")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("fit", help="fit a model to a dataset")
    s.add_argument("data_csv")
    s.add_argument("--k", type=int)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("experiment", help="replicated simulation study")
    s.add_argument("--config")
    s.add_argument("--scenario", action="append")
    s.add_argument("--n", type=int, action="append")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--init", choices=("oracle", "random"))
    s.add_argument("--parallelism", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("oracle", help="population-level oracle computations")
    osub = s.add_subparsers(dest="oracle_command", required=True)
    o = osub.add_parser("lemma1")
    o.add_argument("--k", type=int, default=3)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=_oracle_lemma1)
    o = osub.add_parser("kruskal")
    o.add_argument("--scenario", default="chain/DT")
    o.add_argument("--split", help="1-based item groups, e.g. '1,2,3;6,7,5;4,8'")
    o.set_defaults(func=_oracle_kruskal)
    o = osub.add_parser("recover-gamma")
    o.add_argument("--scenario", default="chain/DT")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=_oracle_recover)
    o = osub.add_parser("budget")
    o.add_argument("gamma_csv", nargs="?")
    o.set_defaults(func=_oracle_budget)
    o = osub.add_parser("counterexample")
    o.add_argument("kind", choices=("subset", "degenerate"))
    o.add_argument("--k", type=int, default=3)
    o.set_defaults(func=_oracle_counterexample)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DegenerateInput as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - contract: anything else is a runtime failure
        sys.stderr.write(f"runtime failure: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
