import numpy as np
import pytest
from hypothesis import given, settings

from conftest import panels, random_panel, random_weights
from dyadvar.design import (
    BASE_LABELS,
    build_design,
    build_row,
    column_labels,
    make_split,
    regression_data,
    split_design,
)
from dyadvar.dyad import CovariateTensor, DyadicPanel, equal_weights, vecd_pairs


def oracle_row(flows, w, x, i, j, t):
    """Direct transcription of the regressor definition with explicit neighbour loops."""
    n = flows.shape[1]
    prev = flows[t - 1]
    agg = np.zeros(4)
    for k in range(n):
        if k in (i, j):
            continue
        agg[0] += w[0, i, j, k] * prev[i, k]
        agg[1] += w[1, i, j, k] * prev[k, i]
        agg[2] += w[2, i, j, k] * prev[j, k]
        agg[3] += w[3, i, j, k] * prev[k, j]
    return np.concatenate([[1.0, prev[i, j], prev[j, i]], agg, x[t - 1, i, j]])


def test_n3_equal_weights_by_hand():
    y0 = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 4.0], [5.0, 6.0, 0.0]])
    panel = DyadicPanel(np.stack([y0, y0]))
    X = CovariateTensor.empty(3, 2)
    d = build_design(panel, equal_weights(3), X, 1)
    # dyad (1, 0): only neighbour is node 2
    row = d.rows[0]
    np.testing.assert_array_equal(row, [1.0, 3.0, 1.0, y0[1, 2], y0[2, 1], y0[0, 2], y0[2, 0]])
    assert d.K == 7 and d.column_labels == BASE_LABELS


@settings(max_examples=1000)
@given(panels())
def test_design_matches_bruteforce_rows(case):
    panel, X, weights = case
    t = panel.T
    d = build_design(panel, weights, X, t)
    assert d.rows.shape == (panel.n_dyads, 7 + X.M)
    assert d.K == 7 + X.M
    flows = np.nan_to_num(panel.flows)
    for k, (i, j) in enumerate(vecd_pairs(panel.n)):
        expected = oracle_row(flows, weights.weights, X.values, i, j, t)
        np.testing.assert_allclose(d.rows[k], expected, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(build_row(panel, weights, X, i, j, t), expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=1000)
@given(panels(T_max=3, M_max=4))
def test_dimension_k_equals_7_plus_m(case):
    panel, X, weights = case
    data = regression_data(panel, weights, X)
    assert data.Z.shape == (panel.T, panel.n * panel.n - panel.n, 7 + X.M)
    assert data.Y.shape == (panel.T, panel.n * panel.n - panel.n)
    assert len(column_labels(X)) == 7 + X.M


def test_design_reads_only_previous_period(rng):
    panel, X = random_panel(rng, 5, 3, 1)
    w = random_weights(rng, 5)
    d = build_design(panel, w, X, 2)
    flows = np.array(panel.flows)
    flows[2:] = 1e6  # later periods must not matter
    flows[0] = -1e6
    d2 = build_design(DyadicPanel(flows), w, X, 2)
    np.testing.assert_array_equal(d.rows, d2.rows)


def test_forecast_design_at_t_plus_one(rng):
    panel, X = random_panel(rng, 4, 2, 2)
    d = build_design(panel, equal_weights(4), X, panel.T + 1)
    assert d.t == 3
    with pytest.raises(IndexError):
        build_design(panel, equal_weights(4), X, panel.T + 2)
    short = CovariateTensor(X.values[:2])
    with pytest.raises(IndexError):
        build_design(panel, equal_weights(4), short, 3)


def test_size_mismatch_rejected(rng):
    panel, X = random_panel(rng, 4, 2)
    with pytest.raises(ValueError):
        build_design(panel, equal_weights(5), X, 1)


def test_diagonal_dyad_rejected(rng):
    panel, X = random_panel(rng, 4, 2)
    with pytest.raises(ValueError):
        build_row(panel, equal_weights(4), X, 2, 2, 1)


def test_regression_data_range(rng):
    panel, X = random_panel(rng, 4, 5, 1)
    data = regression_data(panel, equal_weights(4), X, last=4, first=2)
    assert data.T == 3 and data.first == 2
    np.testing.assert_array_equal(data.Y[0], panel.response(2))
    with pytest.raises(ValueError):
        regression_data(panel, equal_weights(4), X, last=6)


@settings(max_examples=200)
@given(panels(M_max=2))
def test_split_reassembles_exactly(case):
    panel, X, weights = case
    d = build_design(panel, weights, X, 1)
    labels = d.column_labels
    varying = [labels[0]] + ([labels[-1]] if X.M else [])
    split, Z1, Z2 = split_design(d, varying)
    assert Z1.shape[1] + Z2.shape[1] == d.K
    np.testing.assert_array_equal(split.reassemble(Z1, Z2), d.rows)
    assert split.varying_labels == tuple(sorted(varying, key=labels.index))


def test_split_resolves_names_and_indices():
    labels = BASE_LABELS + ("distance",)
    a = make_split(labels, ["distance", "intercept"])
    b = make_split(labels, [7, 0])
    assert a == b
    assert a.varying_columns == (0, 7)
    assert a.constant_labels == BASE_LABELS[1:]
    for bad in (["nope"], [9], ["intercept", 0], []):
        with pytest.raises(ValueError):
            make_split(labels, bad)
