"""Dyadic panel containers, off-diagonal vectorization and aggregation weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FAMILIES = ("oo", "od", "do", "dd")
WEIGHT_TOL = 1e-12


def _offdiag_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def vecd(matrix: np.ndarray) -> np.ndarray:
    """Stack the off-diagonal entries of a square matrix column by column.

    For ``n = 3`` the result is ``(a21, a31, a12, a32, a13, a23)``. Entry
    ``(i, j)`` (1-based, ``i != j``) lands at 1-based position
    ``(j - 1)(n - 1) + i - [i > j]``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"vecd needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValueError("vecd needs n >= 2")
    # row-major traversal of the transpose is column-major traversal of a
    return a.T[_offdiag_mask(n)]


def unvecd(vector: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`vecd`; the diagonal is filled with NaN."""
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.shape[0] != n * n - n:
        raise ValueError(f"expected a vector of length {n * n - n} for n={n}, got shape {v.shape}")
    out = np.full((n, n), np.nan)
    out.T[_offdiag_mask(n)] = v
    return out


def vecd_position(i: int, j: int, n: int) -> int:
    """0-based position of dyad ``(i, j)`` (0-based nodes) inside ``vecd``."""
    if i == j:
        raise ValueError("diagonal entries have no vecd position")
    return j * (n - 1) + i - (1 if i > j else 0)


def vecd_pairs(n: int) -> list[tuple[int, int]]:
    """0-based ``(origin, dest)`` pairs in vecd order."""
    return [(i, j) for j in range(n) for i in range(n) if i != j]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DyadicPanel:
    """Directed flows ``y[t, i, j]`` for ``t = 0..T``; ``t = 0`` holds the initial observation.

    Diagonal cells are stored as NaN and checked on construction, so a stray
    read of ``(i, i)`` propagates NaN instead of a plausible number.
    """

    flows: np.ndarray
    time_labels: tuple = ()
    node_labels: tuple = ()
    transformed: bool = False

    def __post_init__(self):
        f = np.array(self.flows, dtype=float, copy=True)
        if f.ndim != 3 or f.shape[1] != f.shape[2]:
            raise ValueError(f"flows must have shape (T+1, n, n), got {f.shape}")
        n = f.shape[1]
        if n < 3:
            raise ValueError(f"a dyadic panel needs at least 3 nodes, got {n}")
        if f.shape[0] < 1:
            raise ValueError("a dyadic panel needs at least one time point")
        off = f[:, _offdiag_mask(n)]
        if not np.all(np.isfinite(off)):
            bad = np.argwhere(~np.isfinite(f) & _offdiag_mask(n)[None])
            t, i, j = bad[0]
            raise ValueError(f"non-finite flow at t={t}, ({i}, {j}); {len(bad)} bad cells in total")
        diag = np.arange(n)
        f[:, diag, diag] = np.nan
        object.__setattr__(self, "flows", _readonly(f))
        labels = tuple(self.time_labels) if len(self.time_labels) else tuple(range(f.shape[0]))
        if len(labels) != f.shape[0]:
            raise ValueError("time_labels length must equal the number of time points")
        object.__setattr__(self, "time_labels", labels)
        nodes = tuple(self.node_labels) if len(self.node_labels) else tuple(range(n))
        if len(nodes) != n:
            raise ValueError("node_labels length must equal n")
        object.__setattr__(self, "node_labels", nodes)

    @property
    def n(self) -> int:
        return self.flows.shape[1]

    @property
    def T(self) -> int:
        """Number of transitions (time points after the initial one)."""
        return self.flows.shape[0] - 1

    @property
    def n_dyads(self) -> int:
        return self.n * self.n - self.n

    def value(self, i: int, j: int, t: int) -> float:
        if i == j:
            raise IndexError(f"dyad ({i}, {i}) is undefined")
        return float(self.flows[t, i, j])

    def response(self, t: int) -> np.ndarray:
        """``Y_t = vecd(y[t])``."""
        return vecd(self.flows[t])

    def lagged(self, t: int) -> np.ndarray:
        """Flow matrix at ``t - 1`` with the diagonal zeroed, for aggregation."""
        if not 1 <= t <= self.T + 1:
            raise IndexError(f"t={t} outside 1..{self.T + 1}")
        prev = np.array(self.flows[t - 1])
        np.fill_diagonal(prev, 0.0)
        return prev

    def truncate(self, last_t: int) -> "DyadicPanel":
        """Panel restricted to ``t = 0..last_t``."""
        return DyadicPanel(self.flows[: last_t + 1], self.time_labels[: last_t + 1], self.node_labels, self.transformed)


@dataclass(frozen=True)
class CovariateTensor:
    """Dyad covariates ``X[t, i, j, :]`` for ``t = 1..P`` (usually ``P = T + 1``).

    ``values[t - 1]`` holds the covariates used for the response at time ``t``.
    """

    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 4 or v.shape[1] != v.shape[2]:
            raise ValueError(f"covariates must have shape (P, n, n, M), got {v.shape}")
        n = v.shape[1]
        off = v[:, _offdiag_mask(n), :]
        if not np.all(np.isfinite(off)):
            raise ValueError("covariates contain non-finite off-diagonal cells")
        diag = np.arange(n)
        v[:, diag, diag, :] = np.nan
        object.__setattr__(self, "values", _readonly(v))
        names = tuple(self.names) if len(self.names) else tuple(f"x{k + 1}" for k in range(v.shape[3]))
        if len(names) != v.shape[3]:
            raise ValueError("names length must equal the covariate count")
        object.__setattr__(self, "names", names)

    @classmethod
    def empty(cls, n: int, periods: int) -> "CovariateTensor":
        return cls(np.zeros((periods, n, n, 0)))

    @property
    def M(self) -> int:
        return self.values.shape[3]

    @property
    def periods(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def at(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.periods:
            raise IndexError(f"no covariates for t={t} (available 1..{self.periods})")
        return self.values[t - 1]


@dataclass(frozen=True)
class WeightScheme:
    """The four normalized neighbour-weight families.

    ``weights[f, i, j, k]`` is the weight of node ``k`` in family
    ``FAMILIES[f]`` for dyad ``(i, j)``. Cells with ``k in {i, j}`` and the
    ``i == j`` slabs must be zero.
    """

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 4 or w.shape[0] != 4 or not (w.shape[1] == w.shape[2] == w.shape[3]):
            raise ValueError(f"weights must have shape (4, n, n, n), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w[:, ~_eligible_mask(w.shape[1])] != 0.0):
            raise ValueError("weights on k in {i, j} (or on i == j) must be zero")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def n(self) -> int:
        return self.weights.shape[1]

    def family(self, name: str) -> np.ndarray:
        return self.weights[FAMILIES.index(name)]


def _eligible_mask(n: int) -> np.ndarray:
    """``mask[i, j, k]`` is True iff ``i != j`` and ``k not in {i, j}``."""
    idx = np.arange(n)
    i, j, k = np.meshgrid(idx, idx, idx, indexing="ij")
    return (i != j) & (k != i) & (k != j)


def equal_weights(n: int) -> WeightScheme:
    """Every eligible neighbour gets weight ``1 / (n - 2)`` in all four families."""
    if n < 3:
        raise ValueError(f"equal weights need n >= 3, got {n}")
    w = np.where(_eligible_mask(n), 1.0 / (n - 2), 0.0)
    return WeightScheme(np.broadcast_to(w, (4, n, n, n)))


@dataclass(frozen=True)
class WeightViolation:
    family: str
    origin: int
    dest: int
    kind: str
    value: float

    def __str__(self):
        return f"{self.family} ({self.origin}, {self.dest}): {self.kind} ({self.value!r})"


def validate_weights(scheme: WeightScheme, tol: float = WEIGHT_TOL) -> list[WeightViolation]:
    """Return every row-sum or sign violation; an empty list means the scheme is valid."""
    n = scheme.n
    out = []
    sums = scheme.weights.sum(axis=3)
    for f, name in enumerate(FAMILIES):
        for i, j in vecd_pairs(n):
            s = sums[f, i, j]
            if abs(s - 1.0) > tol:
                out.append(WeightViolation(name, i, j, "row sum != 1", float(s)))
            neg = scheme.weights[f, i, j] < 0
            if neg.any():
                out.append(WeightViolation(name, i, j, "negative weight", float(scheme.weights[f, i, j][neg].min())))
    return out


def weights_from_records(records: Sequence[tuple[str, int, int, int, float]], n: int) -> WeightScheme:
    """Build a scheme from ``(family, origin, dest, k, weight)`` records; missing cells are zero."""
    w = np.zeros((4, n, n, n))
    for fam, i, j, k, val in records:
        if fam not in FAMILIES:
            raise ValueError(f"unknown weight family {fam!r}")
        w[FAMILIES.index(fam), i, j, k] = val
    return WeightScheme(w)
