"""Regressor rows and stacked design matrices for the dyadic network VAR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dyad import CovariateTensor, DyadicPanel, WeightScheme, vecd

BASE_LABELS = ("intercept", "lag_self", "lag_inverse", "agg_oo", "agg_od", "agg_do", "agg_dd")
N_BASE = len(BASE_LABELS)
LAG_COLUMNS = tuple(range(1, N_BASE))


def column_labels(X: CovariateTensor) -> tuple[str, ...]:
    return BASE_LABELS + tuple(X.names)


def _check_inputs(panel: DyadicPanel, weights: WeightScheme, X: CovariateTensor, t: int):
    if weights.n != panel.n or X.n != panel.n:
        raise ValueError("panel, weights and covariates disagree on n")
    if not 1 <= t <= panel.T + 1:
        raise IndexError(f"t={t} outside 1..{panel.T + 1}")
    X.at(t)  # raises if covariates for t are missing


def build_row(panel: DyadicPanel, weights: WeightScheme, X: CovariateTensor, i: int, j: int, t: int) -> np.ndarray:
    """Regressor row for dyad ``(i, j)`` (0-based nodes) at time ``t``.

    Only flows at ``t - 1`` and covariates at ``t`` are read.
    """
    if i == j:
        raise ValueError(f"dyad ({i}, {j}) is undefined")
    _check_inputs(panel, weights, X, t)
    prev = panel.lagged(t)
    others = [k for k in range(panel.n) if k != i and k != j]
    agg = [
        weights.family("oo")[i, j, others] @ prev[i, others],
        weights.family("od")[i, j, others] @ prev[others, i],
        weights.family("do")[i, j, others] @ prev[j, others],
        weights.family("dd")[i, j, others] @ prev[others, j],
    ]
    head = np.array([1.0, prev[i, j], prev[j, i], *agg])
    return np.concatenate([head, X.at(t)[i, j]])


@dataclass(frozen=True)
class DesignMatrix:
    t: int
    rows: np.ndarray
    column_labels: tuple[str, ...]

    @property
    def K(self) -> int:
        return self.rows.shape[1]


def build_design(panel: DyadicPanel, weights: WeightScheme, X: CovariateTensor, t: int) -> DesignMatrix:
    """Stack the rows of all ``n^2 - n`` dyads at time ``t`` in vecd order."""
    _check_inputs(panel, weights, X, t)
    prev = panel.lagged(t)
    w = weights.weights
    # weights vanish on k in {i, j}, and prev has a zero diagonal
    agg_oo = np.einsum("ijk,ik->ij", w[0], prev)
    agg_od = np.einsum("ijk,ki->ij", w[1], prev)
    agg_do = np.einsum("ijk,jk->ij", w[2], prev)
    agg_dd = np.einsum("ijk,kj->ij", w[3], prev)
    cols = [np.ones(panel.n_dyads), vecd(prev), vecd(prev.T)]
    cols += [vecd(a) for a in (agg_oo, agg_od, agg_do, agg_dd)]
    xt = X.at(t)
    cols += [vecd(xt[:, :, m]) for m in range(X.M)]
    rows = np.column_stack(cols)
    rows.setflags(write=False)
    return DesignMatrix(t, rows, column_labels(X))


@dataclass(frozen=True)
class RegressionData:
    """Designs ``Z[t-1]`` and responses ``Y[t-1]`` for ``t = first..last``."""

    Z: np.ndarray  # (T, n^2 - n, K)
    Y: np.ndarray  # (T, n^2 - n)
    column_labels: tuple[str, ...]
    first: int = 1

    @property
    def T(self) -> int:
        return self.Z.shape[0]

    @property
    def K(self) -> int:
        return self.Z.shape[2]

    @property
    def n_obs(self) -> int:
        return self.Y.size


def regression_data(
    panel: DyadicPanel, weights: WeightScheme, X: CovariateTensor, last: int | None = None, first: int = 1
) -> RegressionData:
    """Designs and responses for ``t = first..last`` (default ``last = panel.T``)."""
    last = panel.T if last is None else last
    if not 1 <= first <= last <= panel.T:
        raise ValueError(f"invalid training range {first}..{last} for T={panel.T}")
    designs = [build_design(panel, weights, X, t) for t in range(first, last + 1)]
    Z = np.stack([d.rows for d in designs])
    Y = np.stack([panel.response(t) for t in range(first, last + 1)])
    return RegressionData(Z, Y, designs[0].column_labels, first)


@dataclass(frozen=True)
class DesignSplit:
    """Column partition into constant (``Z1``) and time-varying (``Z2``) coefficients."""

    constant_columns: tuple[int, ...]
    varying_columns: tuple[int, ...]
    column_labels: tuple[str, ...]

    @property
    def m(self) -> int:
        return len(self.varying_columns)

    @property
    def K(self) -> int:
        return len(self.column_labels)

    @property
    def constant_labels(self) -> tuple[str, ...]:
        return tuple(self.column_labels[c] for c in self.constant_columns)

    @property
    def varying_labels(self) -> tuple[str, ...]:
        return tuple(self.column_labels[c] for c in self.varying_columns)

    def split(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split the last axis of ``Z`` into ``(Z1, Z2)``."""
        Z = np.asarray(Z)
        if Z.shape[-1] != self.K:
            raise ValueError(f"expected {self.K} columns, got {Z.shape[-1]}")
        return Z[..., list(self.constant_columns)], Z[..., list(self.varying_columns)]

    def reassemble(self, Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
        out = np.empty(Z1.shape[:-1] + (self.K,))
        out[..., list(self.constant_columns)] = Z1
        out[..., list(self.varying_columns)] = Z2
        return out


def resolve_columns(columns: Sequence[int | str], labels: Sequence[str]) -> tuple[int, ...]:
    idx = []
    for c in columns:
        if isinstance(c, str):
            if c not in labels:
                raise ValueError(f"unknown column {c!r}; available: {list(labels)}")
            idx.append(list(labels).index(c))
        else:
            c = int(c)
            if not 0 <= c < len(labels):
                raise ValueError(f"column index {c} out of range 0..{len(labels) - 1}")
            idx.append(c)
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate varying columns")
    return tuple(sorted(idx))


def make_split(labels: Sequence[str], varying_columns: Sequence[int | str]) -> DesignSplit:
    if len(varying_columns) == 0:
        raise ValueError("at least one varying column is required")
    varying = resolve_columns(varying_columns, labels)
    constant = tuple(c for c in range(len(labels)) if c not in varying)
    return DesignSplit(constant, varying, tuple(labels))


def split_design(Z: DesignMatrix, varying_columns: Sequence[int | str]) -> tuple[DesignSplit, np.ndarray, np.ndarray]:
    """Partition a design into ``(split, Z1, Z2)`` with stable column order."""
    split = make_split(Z.column_labels, varying_columns)
    Z1, Z2 = split.split(Z.rows)
    return split, Z1, Z2
