"""CSV ingestion into panels, covariate tensors and weight schemes.

File layouts (UTF-8, header row, ``.`` decimal separator):

* flows: ``origin,dest,year,value``
* node covariates: ``node,year,name,value``
* dyad covariates: ``origin,dest,name,value`` with an optional ``year`` column
  (without it the covariate is time-invariant)
* weights: ``family,origin,dest,k,weight``
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .config import RunConfig
from .dyad import CovariateTensor, DyadicPanel, WeightScheme, equal_weights, validate_weights, weights_from_records


class IngestError(ValueError):
    pass


def _read(path: str | Path, required: list[str]) -> pd.DataFrame:
    df = pd.read_csv(
        path, dtype={c: str for c in ("origin", "dest", "node", "year", "name", "family", "k")}, float_precision="round_trip"
    )
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")
    return df


def _sort_labels(labels) -> list[str]:
    labels = list(dict.fromkeys(labels))
    if all(s.lstrip("-").isdigit() for s in labels):
        return sorted(labels, key=int)
    return sorted(labels)


def _period_labels(years: list[str], config: RunConfig) -> list[str]:
    """Labels ``t = 0..T`` (plus the test period when it is in the data)."""
    if config.initial_period is None:
        config.initial_period = years[0]
    if config.train_end is None:
        config.train_end = years[-1]
    for name in ("initial_period", "train_end"):
        if getattr(config, name) not in years:
            raise IngestError(f"{name}={getattr(config, name)!r} not found among years {years}")
    lo, hi = years.index(config.initial_period), years.index(config.train_end)
    if hi - lo < 1:
        raise IngestError("the training range needs at least one transition after the initial period")
    nxt = years[hi + 1] if hi + 1 < len(years) else None
    if config.test_period is not None and config.test_period != nxt:
        raise IngestError(f"test_period must be the period right after train_end ({nxt!r}), got {config.test_period!r}")
    config.test_period = nxt
    return years[lo : hi + 1] + ([nxt] if nxt is not None else [])


def _check_positive(values: np.ndarray, what: str):
    bad = np.argwhere(values <= 0)
    if bad.size:
        raise IngestError(f"{what}: {len(bad)} nonpositive values cannot be log-transformed")


def ingest(config: RunConfig) -> tuple[DyadicPanel, CovariateTensor, WeightScheme]:
    """Assemble the panel, covariates and weights described by ``config``.

    The panel covers the initial period through ``train_end`` plus the
    following period (the test period) when the flows file contains it. Covariates are assembled for
    every later period for which they exist in the files (at least through the
    last panel period).
    """
    if config.flows is None:
        raise IngestError("a flows file is required")
    flows = _read(config.flows, ["origin", "dest", "year", "value"])
    nodes = config.nodes or _sort_labels(list(flows["origin"]) + list(flows["dest"]))
    flows = flows[flows["origin"].isin(nodes) & flows["dest"].isin(nodes)]
    years_all = _sort_labels(flows["year"])
    periods = _period_labels(years_all, config)
    n = len(nodes)
    if n < 3:
        raise IngestError(f"need at least 3 nodes, got {n}")
    node_idx = {v: i for i, v in enumerate(nodes)}
    year_idx = {v: t for t, v in enumerate(periods)}

    sub = flows[flows["year"].isin(periods) & (flows["origin"] != flows["dest"])]
    dup = sub.duplicated(["origin", "dest", "year"])
    if dup.any():
        r = sub[dup].iloc[0]
        raise IngestError(f"duplicate flow record for ({r.origin}, {r.dest}, {r.year})")
    Y = np.full((len(periods), n, n), np.nan)
    Y[sub["year"].map(year_idx).to_numpy(), sub["origin"].map(node_idx).to_numpy(), sub["dest"].map(node_idx).to_numpy()] = sub[
        "value"
    ].astype(float)
    missing = [
        (nodes[i], nodes[j], periods[t])
        for t in range(len(periods))
        for i in range(n)
        for j in range(n)
        if i != j and not np.isfinite(Y[t, i, j])
    ]
    if missing:
        raise IngestError(f"{len(missing)} missing flow cells (origin, dest, year): {missing}")
    if config.log_transform:
        _check_positive(Y[:, ~np.eye(n, dtype=bool)], "flows")
        with np.errstate(invalid="ignore", divide="ignore"):
            Y = np.log(Y)
    panel = DyadicPanel(Y, tuple(periods), tuple(nodes), config.log_transform)

    # covariates for t = 1.. (the label of t is periods[t]); extend one step past the panel when possible
    later = years_all[years_all.index(periods[-1]) + 1 :][:1]
    if not later and periods[-1].lstrip("-").isdigit():
        later = [str(int(periods[-1]) + 1)]  # forecast covariates may exist past the last flow year
    cov_periods = periods[1:] + later
    X = _covariates(config, nodes, cov_periods, required=len(periods) - 1)
    weights = _weights(config, nodes)
    return panel, X, weights


def _wants_log(config: RunConfig, name: str) -> bool:
    if not config.log_transform:
        return False
    return config.log_covariates is None or name in config.log_covariates


def _covariates(config: RunConfig, nodes: list[str], cov_periods: list[str], required: int) -> CovariateTensor:
    """Covariate tensor over the longest prefix of ``cov_periods`` with complete data."""
    n = len(nodes)
    node_idx = {v: i for i, v in enumerate(nodes)}
    blocks: list[tuple[str, np.ndarray]] = []  # name -> (P, n, n)

    if config.node_covariates:
        df = _read(config.node_covariates, ["node", "year", "name", "value"])
        df = df[df["node"].isin(nodes) & df["year"].isin(cov_periods)]
        for name in sorted(df["name"].unique()):
            g = df[df["name"] == name]
            vals = np.full((len(cov_periods), n), np.nan)
            vals[g["year"].map({y: p for p, y in enumerate(cov_periods)}).to_numpy(), g["node"].map(node_idx).to_numpy()] = g[
                "value"
            ].astype(float)
            if _wants_log(config, name):
                ok = np.isfinite(vals)
                _check_positive(vals[ok], f"node covariate {name!r}")
                vals = np.log(vals)
            if config.node_covariate_mode == "product":
                combined = vals[:, :, None] + vals[:, None, :] if _wants_log(config, name) else vals[:, :, None] * vals[:, None, :]
                blocks.append((name, combined))
            else:
                blocks.append((f"{name}_origin", np.repeat(vals[:, :, None], n, axis=2)))
                blocks.append((f"{name}_dest", np.repeat(vals[:, None, :], n, axis=1)))

    if config.dyad_covariates:
        df = _read(config.dyad_covariates, ["origin", "dest", "name", "value"])
        df = df[df["origin"].isin(nodes) & df["dest"].isin(nodes) & (df["origin"] != df["dest"])]
        for name in sorted(df["name"].unique()):
            g = df[df["name"] == name]
            vals = np.full((len(cov_periods), n, n), np.nan)
            oi, di = g["origin"].map(node_idx).to_numpy(), g["dest"].map(node_idx).to_numpy()
            v = g["value"].astype(float).to_numpy()
            if "year" in g.columns and g["year"].notna().any():
                keep = g["year"].isin(cov_periods).to_numpy()
                p = g["year"][keep].map({y: p for p, y in enumerate(cov_periods)}).to_numpy()
                vals[p, oi[keep], di[keep]] = v[keep]
            else:
                vals[:, oi, di] = v
            if _wants_log(config, name):
                ok = np.isfinite(vals)
                _check_positive(vals[ok], f"dyad covariate {name!r}")
                vals = np.log(vals)
            blocks.append((name, vals))

    off = ~np.eye(n, dtype=bool)
    P = len(cov_periods)
    for name, vals in blocks:
        complete = [bool(np.all(np.isfinite(vals[p][off]))) for p in range(len(cov_periods))]
        first_gap = complete.index(False) if False in complete else len(complete)
        P = min(P, first_gap)
    if P < required:
        gaps = []
        for name, vals in blocks:
            for p in range(required):
                for i, j in zip(*np.nonzero(off & ~np.isfinite(vals[p]))):
                    gaps.append((name, nodes[i], nodes[j], cov_periods[p]))
        raise IngestError(f"{len(gaps)} missing covariate cells (name, origin, dest, year): {gaps}")
    if not blocks:
        return CovariateTensor(np.zeros((P, n, n, 0)))
    values = np.stack([vals[:P] for _, vals in blocks], axis=-1)
    return CovariateTensor(values, tuple(name for name, _ in blocks))


def _weights(config: RunConfig, nodes: list[str]) -> WeightScheme:
    n = len(nodes)
    if not config.weights:
        return equal_weights(n)
    df = _read(config.weights, ["family", "origin", "dest", "k", "weight"])
    node_idx = {v: i for i, v in enumerate(nodes)}
    df = df[df["origin"].isin(nodes) & df["dest"].isin(nodes) & df["k"].isin(nodes)]
    records = [
        (r.family, node_idx[r.origin], node_idx[r.dest], node_idx[r.k], float(r.weight)) for r in df.itertuples(index=False)
    ]
    scheme = weights_from_records(records, n)
    problems = validate_weights(scheme)
    if problems:
        raise IngestError(f"{len(problems)} weight violations, first: {problems[0]}")
    return scheme


def write_panel_csv(panel: DyadicPanel, X: CovariateTensor, outdir: str | Path) -> tuple[Path, Path]:
    """Write ``flows.csv`` and ``dyad_covariates.csv`` in the ingestion layout.

    Covariates for ``t`` are stamped with the label of period ``t``; labels
    past the panel continue the integer sequence.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    nodes = [str(v) for v in panel.node_labels]
    labels = [str(v) for v in panel.time_labels]
    rows = []
    for t, lab in enumerate(labels):
        for i in range(panel.n):
            for j in range(panel.n):
                if i != j:
                    rows.append((nodes[i], nodes[j], lab, repr(float(panel.flows[t, i, j]))))
    flows_path = outdir / "flows.csv"
    pd.DataFrame(rows, columns=["origin", "dest", "year", "value"]).to_csv(flows_path, index=False)
    rows = []
    for p in range(X.periods):
        t = p + 1
        lab = labels[t] if t < len(labels) else str(int(labels[-1]) + t - len(labels) + 1)
        for m, name in enumerate(X.names):
            for i in range(panel.n):
                for j in range(panel.n):
                    if i != j:
                        rows.append((nodes[i], nodes[j], name, repr(float(X.values[p, i, j, m])), lab))
    cov_path = outdir / "dyad_covariates.csv"
    pd.DataFrame(rows, columns=["origin", "dest", "name", "value", "year"]).to_csv(cov_path, index=False)
    return flows_path, cov_path
