"""Fit/forecast harness: baselines, RMSE evaluation and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ALL_MODELS, RunConfig
from .design import build_design, make_split, regression_data
from .dyad import CovariateTensor, DyadicPanel, WeightScheme, vecd_pairs
from .ingest import ingest
from .nvard import RankDeficiencyError, fit_from_data, point_estimates, posterior_sd, predict_nvard
from .vcnvard import GibbsConfig, VcnvardData, predict_vcnvard, run_gibbs

log = logging.getLogger(__name__)

PANEL_COLUMNS = ("intercept", "lag_self", "lag_inverse")


def rmse(predicted: np.ndarray, actual: np.ndarray) -> float:
    err = np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float)
    return float(np.sqrt(np.mean(err * err)))


@dataclass
class ModelResult:
    """In-sample fitted values ``(T, n^2 - n)`` and the next-period forecast."""

    name: str
    fitted: np.ndarray
    predicted: np.ndarray | None
    meta: dict = field(default_factory=dict)
    chains: dict[str, np.ndarray] = field(default_factory=dict)


def ar1_fit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise least squares of ``y = a + b x``; constant ``x`` falls back to ``b = 0``.

    ``x`` and ``y`` have shape ``(T, S)`` for ``S`` independent series.
    """
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    sxx = np.sum((x - xm) ** 2, axis=0)
    sxy = np.sum((x - xm) * (y - ym), axis=0)
    degenerate = sxx <= 1e-12 * np.maximum(1.0, np.sum(x * x, axis=0))
    b = np.where(degenerate, 0.0, sxy / np.where(degenerate, 1.0, sxx))
    a = np.where(degenerate, ym, ym - b * xm)
    return a, b


def baseline_univariate(panel: DyadicPanel, last_train: int | None = None) -> ModelResult:
    """Per-dyad AR(1) with intercept fitted on ``t = 1..last_train``."""
    last = panel.T if last_train is None else last_train
    if last < 2:
        raise ValueError("the univariate baseline needs at least two transitions")
    series = np.stack([panel.response(t) for t in range(0, last + 1)])
    a, b = ar1_fit(series[:-1], series[1:])
    fitted = a + b * series[:-1]
    return ModelResult("univariate", fitted, a + b * series[-1])


def baseline_panel_regression(
    panel: DyadicPanel, X: CovariateTensor, weights: WeightScheme, last_train: int | None = None
) -> ModelResult:
    """Pooled least squares on the intercept, both own lags and the covariates (no network terms)."""
    last = panel.T if last_train is None else last_train
    train = panel.truncate(last)
    data = regression_data(train, weights, X, last)
    cols = list(range(3)) + list(range(7, data.K))
    Z = data.Z[:, :, cols].reshape(-1, len(cols))
    y = data.Y.reshape(-1)
    if np.linalg.matrix_rank(Z) < len(cols):
        raise RankDeficiencyError("panel-regression design is rank deficient")
    coef = np.linalg.lstsq(Z, y, rcond=None)[0]
    fitted = data.Z[:, :, cols] @ coef
    predicted = None
    if X.periods >= last + 1:
        predicted = build_design(train, weights, X, last + 1).rows[:, cols] @ coef
    labels = [data.column_labels[c] for c in cols]
    return ModelResult("panel", fitted, predicted, {"coefficients": dict(zip(labels, coef.tolist()))})


def fit_nvard_model(panel: DyadicPanel, X: CovariateTensor, weights: WeightScheme, last_train: int) -> ModelResult:
    train = panel.truncate(last_train)
    data = regression_data(train, weights, X, last_train)
    post = fit_from_data(data)
    beta_hat, sigma2_hat = point_estimates(post)
    predicted = None
    if X.periods >= last_train + 1:
        predicted = predict_nvard(post, build_design(train, weights, X, last_train + 1))
    meta = {
        "K": post.K,
        "N": post.N,
        "v": post.v,
        "a": post.a,
        "b": post.b,
        "sigma2_eps": sigma2_hat,
        "coefficients": {
            lab: {"mean": float(m), "sd": float(s)} for lab, m, s in zip(data.column_labels, beta_hat, posterior_sd(post))
        },
    }
    return ModelResult("nvard", data.Z @ post.mu, predicted, meta)


def fit_vcnvard_model(
    panel: DyadicPanel,
    X: CovariateTensor,
    weights: WeightScheme,
    last_train: int,
    varying: Sequence[str | int],
    gibbs: GibbsConfig,
) -> ModelResult:
    train = panel.truncate(last_train)
    data = regression_data(train, weights, X, last_train)
    split = make_split(data.column_labels, varying)
    fit = run_gibbs(data, split, gibbs)
    vdata = VcnvardData.from_regression(data, split)
    predicted = None
    if X.periods >= last_train + 1:
        Z1, Z2 = split.split(build_design(train, weights, X, last_train + 1).rows)
        predicted = predict_vcnvard(fit, Z1, Z2)
    meta = {
        "K": split.K,
        "N": data.n_obs,
        "m": split.m,
        "varying": list(split.varying_labels),
        "retained_draws": gibbs.n_retained,
        "n_chains": gibbs.n_chains,
        "scheme": gibbs.scheme,
        "posterior": fit.summary(),
    }
    chains = {
        "sigma2_eps": fit.sigma2_eps_draws,
        "sigma2_u": fit.sigma2_u_draws,
        "beta1": fit.beta1_draws,
        "beta2": fit.beta2_draws,
    }
    return ModelResult("vcnvard", fit.fitted(vdata), predicted, meta, chains)


def fit_models(
    panel: DyadicPanel,
    X: CovariateTensor,
    weights: WeightScheme,
    last_train: int,
    models: Sequence[str] = ALL_MODELS,
    varying: Sequence[str | int] = ("intercept",),
    gibbs: GibbsConfig | None = None,
) -> dict[str, ModelResult]:
    """Fit each requested model on ``t = 1..last_train`` only."""
    out = {}
    for name in models:
        if name == "univariate":
            out[name] = baseline_univariate(panel.truncate(last_train), last_train)
        elif name == "panel":
            out[name] = baseline_panel_regression(panel, X, weights, last_train)
        elif name == "nvard":
            out[name] = fit_nvard_model(panel, X, weights, last_train)
        elif name == "vcnvard":
            out[name] = fit_vcnvard_model(panel, X, weights, last_train, varying, gibbs or GibbsConfig())
        else:
            raise ValueError(f"unknown model {name!r}")
        log.info("fitted %s", name)
    return out


@dataclass
class EvalReport:
    rows: list[dict]  # model, rmse_in, rmse_out
    scatter: list[dict]  # model, origin, dest, true, predicted
    metadata: dict
    chains: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def evaluate(
    panel: DyadicPanel,
    X: CovariateTensor,
    weights: WeightScheme,
    last_train: int,
    models: Sequence[str] = ALL_MODELS,
    varying: Sequence[str | int] = ("intercept",),
    gibbs: GibbsConfig | None = None,
) -> EvalReport:
    """Fit on ``t <= last_train``; score one-step forecasts of ``t = last_train + 1`` when observed."""
    results = fit_models(panel, X, weights, last_train, models, varying, gibbs)
    actual_in = np.stack([panel.response(t) for t in range(1, last_train + 1)])
    has_test = panel.T >= last_train + 1
    actual_out = panel.response(last_train + 1) if has_test else None
    pairs = vecd_pairs(panel.n)
    rows, scatter, meta, chains = [], [], {}, {}
    for name, res in results.items():
        out = rmse(res.predicted, actual_out) if has_test and res.predicted is not None else math.nan
        rows.append({"model": name, "rmse_in": rmse(res.fitted, actual_in), "rmse_out": out})
        if has_test and res.predicted is not None:
            for (i, j), y, p in zip(pairs, actual_out, res.predicted):
                scatter.append(
                    {"model": name, "origin": panel.node_labels[i], "dest": panel.node_labels[j], "true": float(y), "predicted": float(p)}
                )
        meta[name] = res.meta
        if res.chains:
            chains[name] = res.chains
    metadata = {
        "n": panel.n,
        "train_periods": [str(x) for x in panel.time_labels[: last_train + 1]],
        "test_period": str(panel.time_labels[last_train + 1]) if has_test else None,
        "transformed": panel.transformed,
        "models": meta,
    }
    return EvalReport(rows, scatter, metadata, chains)


def run_fit_predict(config: RunConfig) -> EvalReport:
    panel, X, weights = ingest(config)
    last_train = panel.time_labels.index(config.train_end)
    return evaluate(panel, X, weights, last_train, config.models, config.varying, config.gibbs)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not math.isfinite(f) else f
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_report(report: EvalReport, outdir: str | Path) -> list[Path]:
    """Write ``rmse_table.csv``, ``scatter.csv``, ``fit.json`` and, for Gibbs runs, ``chains_<model>.npz``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    path = outdir / "rmse_table.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rmse_in", "rmse_out"])
        for r in report.rows:
            w.writerow([r["model"], _fmt(r["rmse_in"]), _fmt(r["rmse_out"])])
    written.append(path)
    path = outdir / "scatter.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "origin", "dest", "true", "predicted"])
        for r in report.scatter:
            w.writerow([r["model"], r["origin"], r["dest"], _fmt(r["true"]), _fmt(r["predicted"])])
    written.append(path)
    path = outdir / "fit.json"
    write_json(report.metadata, path)
    written.append(path)
    for name, chains in sorted(report.chains.items()):
        path = outdir / f"chains_{name}.npz"
        np.savez(path, **chains)
        written.append(path)
    return written
