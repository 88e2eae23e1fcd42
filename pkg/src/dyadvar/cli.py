"""Command-line entry point: ``dyadvar {simulate,fit,predict,evaluate,oracle-check}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ALL_MODELS, RunConfig, load_config
from .design import regression_data
from .harness import emit_report, evaluate, fit_models, write_json
from .ingest import ingest, write_panel_csv
from .dyad import DyadicPanel, vecd_pairs
from .vcnvard import SCHEMES

log = logging.getLogger("dyadvar")

DEFAULT_SIM = {
    "model": "vcnvard",
    "n": 8,
    "T": 8,
    "covariates": [{"name": "distance", "loc": 0.0, "scale": 1.0, "time_invariant": True}],
    "beta1": [0.3, 0.1, 0.1, 0.05, 0.05, 0.05],
    "beta2_init": [1.0, -0.5],
    "sigma2_u": 0.04,
    "sigma2_eps": 0.25,
    "varying": ["intercept", "distance"],
    "y0_loc": 2.0,
    "y0_scale": 0.5,
    "seed": 0,
}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON file with RunConfig fields; flags override it")
    p.add_argument("--flows")
    p.add_argument("--node-covariates")
    p.add_argument("--dyad-covariates")
    p.add_argument("--weights")
    p.add_argument("--nodes", help="comma-separated node filter")
    p.add_argument("--initial", dest="initial_period", help="label of the initial period (Y_0)")
    p.add_argument("--train-end")
    p.add_argument("--test", dest="test_period")
    p.add_argument("--no-log", dest="log_transform", action="store_const", const=False, default=None)
    p.add_argument("--models", help=f"comma-separated subset of {','.join(ALL_MODELS)}")
    p.add_argument("--varying", help="comma-separated varying column labels")
    p.add_argument("--chain-length", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", dest="n_chains", type=int)
    p.add_argument("--scheme", choices=SCHEMES, help="joint coefficient draw or single-site scan")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="outdir")


def _run_config(args) -> RunConfig:
    d = load_config(args.config) if args.config else {}
    for key in (
        "flows", "node_covariates", "dyad_covariates", "weights", "initial_period", "train_end", "test_period",
        "log_transform", "chain_length", "burn_in", "thin", "n_chains", "scheme", "seed", "outdir",
    ):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    for key in ("nodes", "models", "varying"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = [s.strip() for s in v.split(",") if s.strip()]
    return RunConfig.from_dict(d)


def cmd_simulate(args) -> int:
    from .sim import SimSpec, simulate_nvard, simulate_vcnvard

    d = dict(DEFAULT_SIM)
    if args.config:
        d.update(load_config(args.config))
    for key in ("n", "T", "seed"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    model = d.pop("model", "vcnvard")
    # one extra step so the last period can serve as the test period
    spec = SimSpec.from_dict({**d, "T": d["T"] + 1})
    out = Path(args.outdir or "sim")
    if model == "nvard":
        panel, X = simulate_nvard(spec)
        truth = {"beta": spec.beta}
    elif model == "vcnvard":
        panel, X, path = simulate_vcnvard(spec)
        truth = {"beta1": spec.beta1, "beta2_path": path.tolist(), "varying": spec.varying}
    else:
        raise ValueError(f"unknown model {model!r}")
    panel = DyadicPanel(panel.flows, panel.time_labels, tuple(f"n{i:02d}" for i in range(panel.n)))
    write_panel_csv(panel, X, out)
    write_json({"model": model, "spec": spec.to_dict(), "truth": truth, "sigma2_eps": spec.sigma2_eps}, out / "truth.json")
    print(json.dumps({"written": str(out), "n": panel.n, "periods": len(panel.time_labels)}))
    return 0


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    panel, X, weights = ingest(cfg)
    last = panel.time_labels.index(cfg.train_end)
    results = fit_models(panel, X, weights, last, cfg.models, cfg.varying, cfg.gibbs)
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_json({"config": cfg.to_dict(), "models": {k: r.meta for k, r in results.items()}}, out / "fit.json")
    for name, res in results.items():
        if res.chains:
            np.savez(out / f"chains_{name}.npz", **res.chains)
    print(json.dumps({"written": str(out / "fit.json")}))
    return 0


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    panel, X, weights = ingest(cfg)
    last = panel.time_labels.index(cfg.train_end)
    results = fit_models(panel, X, weights, last, cfg.models, cfg.varying, cfg.gibbs)
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    pairs = vecd_pairs(panel.n)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "origin", "dest", "predicted"])
        for name, res in results.items():
            if res.predicted is None:
                raise ValueError(f"no covariates for the period after {cfg.train_end}; cannot forecast")
            for (i, j), p in zip(pairs, res.predicted):
                w.writerow([name, panel.node_labels[i], panel.node_labels[j], repr(float(p))])
    print(json.dumps({"written": str(path)}))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    panel, X, weights = ingest(cfg)
    last = panel.time_labels.index(cfg.train_end)
    report = evaluate(panel, X, weights, last, cfg.models, cfg.varying, cfg.gibbs)
    written = emit_report(report, cfg.outdir)
    for r in report.rows:
        print(f"{r['model']:<12} RMSE-IN {r['rmse_in']:.4f}  RMSE-OUT {r['rmse_out']:.4f}")
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def cmd_oracle_check(args) -> int:
    from .dyad import equal_weights
    from .nvard import fit_from_data, marginal_beta_pdf, marginal_sigma2_pdf
    from .sim import SimSpec, brute_force_nvard_posterior, conditional_ratio_check, simulate_nvard
    from .vcnvard import VcnvardData

    spec = SimSpec(n=3, T=3, beta=[0.5, 0.3, 0.1, 0.1, -0.1, 0.05, 0.1], sigma2_eps=0.5, seed=args.seed or 0)
    panel, X = simulate_nvard(spec)
    data = regression_data(panel, equal_weights(3), X)
    post = fit_from_data(data)
    bf = brute_force_nvard_posterior(data.Z, data.Y, coords=(args.coord,))
    x = bf.beta_grids[args.coord]
    beta_err = float(np.max(np.abs(bf.beta_densities[args.coord] - marginal_beta_pdf(post, args.coord, x))))
    s2_err = float(np.max(np.abs(bf.sigma2_density - marginal_sigma2_pdf(post, bf.sigma2_grid))))
    ratio = {}
    spec4 = SimSpec(n=3, T=4, beta=spec.beta, sigma2_eps=0.5, seed=args.seed or 0)
    p4, X4 = simulate_nvard(spec4)
    d4 = regression_data(p4, equal_weights(3), X4)
    for varying in (["intercept"], ["intercept", "lag_self"]):
        ratio[",".join(varying)] = conditional_ratio_check(VcnvardData.from_regression(d4, varying), n_probes=args.probes)
    ok = beta_err < 1e-3 and s2_err < 1e-3
    print(json.dumps({"beta_density_error": beta_err, "sigma2_density_error": s2_err, "conditional_ratio": ratio, "ok": ok}, indent=2))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadvar", description="Bayesian network VAR for dyadic panels")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic panel in the ingestion CSV layout")
    p.add_argument("--config")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="outdir")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (
        ("fit", cmd_fit, "fit models on the training range and write fit.json"),
        ("predict", cmd_predict, "forecast the period after the training range"),
        ("evaluate", cmd_evaluate, "fit, forecast the test period and write the RMSE report"),
    ):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("oracle-check", help="verify posterior laws and full conditionals on tiny instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coord", type=int, default=1)
    p.add_argument("--probes", type=int, default=100)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # machine-readable error record for callers
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
