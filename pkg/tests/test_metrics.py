import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_tree
from hieragg.data import SplitSpec
from hieragg.errors import EmptyWindow, NoAvailableExpert, ZeroDenominatorWeek
from hieragg.hierarchy import project_l2, summation_matrix
from hieragg.metrics import (
    META_KINDS,
    cumulative_error_curve,
    error_histogram,
    evaluate_task,
    joint_mae,
    joint_rmse,
    level_rows,
    mae,
    mape,
    node_loss_sums,
    rmse,
    select_meta,
    write_report,
)


def test_per_node_examples():
    y = np.array([3.0, 4.0])
    assert mae(y, y) == rmse(y, y) == 0.0
    assert mae(y, y + 1.5) == rmse(y, y + 1.5) == 1.5
    assert mae(y, y + [0.0, 2.0]) == 1.0
    assert rmse(y, y + [0.0, 2.0]) == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_window_skips_undefined_and_rejects_empty():
    assert mae([1.0, np.nan, 3.0], [2.0, 5.0, np.nan]) == 1.0
    with pytest.raises(EmptyWindow):
        mae([np.nan], [1.0])
    with pytest.raises(EmptyWindow):
        rmse([1.0], [np.nan])


def test_joint_examples(rng):
    y = rng.uniform(0, 10, size=(1, 20))
    f = y + rng.normal(size=(1, 20))
    assert joint_mae(y, f) == pytest.approx(mae(y[0], f[0]), rel=1e-14)
    assert joint_rmse(y, f) == pytest.approx(rmse(y[0], f[0]), rel=1e-14)
    Y = rng.uniform(0, 10, size=(2, 20))
    G = Y + rng.normal(size=(2, 20))
    a, b = mae(Y[0], G[0]), mae(Y[1], G[1])
    assert joint_mae(Y, G) == pytest.approx((a + b) / 2, rel=1e-14)
    assert joint_rmse(Y, G) ** 2 == pytest.approx(np.mean((Y - G) ** 2), rel=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_projection_never_increases_joint_rmse(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_nodes=50)
    S = summation_matrix(tree)
    weeks = 8
    truth = S.entries @ rng.uniform(0, 10, size=(len(tree.leaves), weeks))
    forecasts = truth + rng.normal(scale=3.0, size=truth.shape)
    projected = project_l2(S, forecasts)
    assert joint_rmse(truth, projected) <= joint_rmse(truth, forecasts) + 1e-12


def test_mape_examples():
    assert mape([[10.0], [0.0]], [[8.0], [1.0]]) == pytest.approx(0.30, abs=1e-15)
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mape(y, y) == 0.0
    with pytest.raises(ZeroDenominatorWeek) as info:
        mape([[1.0, 0.0], [2.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]], weeks=[140, 141])
    assert info.value.week == 141


def test_mape_subset_rows():
    y = np.array([[10.0], [0.0], [5.0]])
    f = np.array([[8.0], [1.0], [0.0]])
    assert mape(y, f, rows=[0, 1]) == pytest.approx(0.3, abs=1e-15)


def test_mape_on_constant_truth_is_scaled_mae(rng):
    c = 4.0
    y = np.full((6, 10), c)
    f = y + rng.normal(size=y.shape)
    assert mape(y, f) == pytest.approx(joint_mae(y, f) / c, rel=1e-12)


def _experts(rng, nodes=6, weeks=40, J=5):
    truth = rng.uniform(0, 10, size=(nodes, weeks))
    F = truth[:, :, None] + rng.normal(scale=rng.uniform(0.5, 3.0, J), size=(nodes, weeks, J))
    return truth, F, np.arange(101, 101 + weeks)


def test_single_expert_selected_everywhere(rng):
    truth, F, weeks = _experts(rng, J=1)
    for kind in META_KINDS:
        choice = select_meta(F, truth, kind, "mae", SplitSpec(120), weeks)
        assert (choice.selected == 0).all()


def test_selection_windows(rng):
    truth, F, weeks = _experts(rng, J=3)
    split = SplitSpec(120)  # weeks 101..120 train, 121..140 test
    F[:, 25:, 0] -= 100.0  # expert 0 terrible on test only
    F[:, :20, 2] += 100.0  # expert 2 terrible on train only
    assert set(select_meta(F, truth, "loc_train", "mae", split, weeks).selected) <= {0, 1}
    assert 0 not in select_meta(F, truth, "oracle", "mae", split, weeks).selected
    glob = select_meta(F, truth, "glob_test", "mae", split, weeks).selected
    assert len(set(glob)) == 1 and glob[0] != 0


def test_ties_go_to_lowest_index(rng):
    truth, F, weeks = _experts(rng, J=2)
    F[:, :, 1] = F[:, :, 0]
    for kind in META_KINDS:
        assert (select_meta(F, truth, kind, "rmse", SplitSpec(120), weeks).selected == 0).all()


def test_incomplete_experts_are_not_eligible(rng):
    truth, F, weeks = _experts(rng, J=3)
    F[2, 30, 1] = np.nan
    choice = select_meta(F, truth, "oracle", "mae", SplitSpec(120), weeks)
    assert 1 not in choice.selected
    F[:, 30, :] = np.nan
    with pytest.raises(NoAvailableExpert):
        select_meta(F, truth, "oracle", "mae", SplitSpec(120), weeks)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["mae", "rmse"]))
def test_meta_ordering_is_exact(seed, metric):
    rng = np.random.default_rng(seed)
    truth, F, weeks = _experts(rng, nodes=int(rng.integers(1, 30)), J=int(rng.integers(1, 12)))
    split = SplitSpec(120)
    test = weeks > 120
    y = truth[:, test]
    loss = {}
    for kind in ("glob_test", "oracle"):
        choice = select_meta(F, truth, kind, metric, split, weeks)
        loss[kind] = _joint(metric, y, choice.forecasts(F)[:, test])
    assert loss["oracle"] <= loss["glob_test"]
    for j in range(F.shape[2]):
        assert loss["glob_test"] <= _joint(metric, y, F[:, test, j])


def _joint(metric, y, f):
    return joint_mae(y, f) if metric == "mae" else joint_rmse(y, f)


def test_mape_selection_uses_level_denominator(rng):
    truth, F, weeks = _experts(rng, nodes=4, J=3)
    rows = np.array([1, 3])
    choice = select_meta(F, truth, "oracle", "mape", SplitSpec(120), weeks, rows=rows)
    test = weeks > 120
    denom = truth[rows][:, test].sum(axis=0)
    for r in rows:
        per_expert = [np.sum(np.abs(truth[r, test] - F[r, test, j]) / denom) for j in range(3)]
        assert choice.selected[r] == int(np.argmin(per_expert))


def test_node_loss_sums_require_complete_panels():
    with pytest.raises(ValueError):
        node_loss_sums(np.ones((2, 3)), np.array([[1.0, np.nan, 1.0], [1.0, 1.0, 1.0]]))


def test_evaluate_task_report(tmp_path, world, rng):
    tree, panel = world
    weeks = np.arange(1, panel.n_weeks + 1)
    truth = panel.sales
    J = 4
    F = truth[:, :, None] + rng.normal(scale=np.arange(1, J + 1) * 5.0, size=truth.shape + (J,))
    F = np.maximum(F, 0.0)
    aggreg = F.mean(axis=2)
    report = evaluate_task(tree, truth, aggreg, F, weeks, SplitSpec(130), 7, 1)
    np.testing.assert_array_equal(report.weeks, np.arange(131, 183))
    rows = list(report.rows())
    levels = {r[4] for r in rows}
    assert levels == {"entire hierarchy", "total node", "families", "subfamilies", "subsubfamilies"}
    metrics = {r[0] for r in rows}
    assert {"MAE", "RMSE"} <= metrics
    rel = {(r[0], r[3], r[4]): r[5] for r in rows}
    base = report.joint[("mae", "loc_train", "entire")]
    agg = report.joint[("mae", "aggreg", "entire")]
    assert rel[("MAE", "aggreg_vs_loc_train", "entire hierarchy")] == pytest.approx((agg - base) / base)
    assert report.joint[("mae", "oracle", "entire")] <= report.joint[("mae", "glob_test", "entire")]
    write_report([report], tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "metric,h,n,forecaster,level,value"


def test_level_rows(world):
    tree, _ = world
    assert level_rows(tree, "root").tolist() == [0]
    assert len(level_rows(tree, "entire")) == len(tree)
    assert len(level_rows(tree, "subsubfamily")) == 100


def test_error_curves():
    e, cum = cumulative_error_curve([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(e, [1, 2, 3])
    np.testing.assert_array_equal(cum, [1, 3, 6])
    np.testing.assert_array_equal(error_histogram([0.5, 1.5, 1.7], [0, 1, 2]), [1, 2])
