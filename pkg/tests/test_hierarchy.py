import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import random_tree
from hieragg.errors import CycleDetected, InconsistentLevel, MultipleRoots, OrphanNode, ParseError
from hieragg.hierarchy import (
    MaxItersReached,
    build_hierarchy,
    check_summation,
    l1_objective,
    project_l1,
    project_l2,
    read_hierarchy,
    summation_matrix,
    write_hierarchy,
)
from oracles import dense_summation_matrix, lstsq_projection


def test_two_leaf_tree_structure(two_leaf):
    assert two_leaf.root == "root"
    assert two_leaf.leaves == ("a", "b")
    assert two_leaf.children["root"] == ("a", "b")
    assert two_leaf.level["a"] == "family"


def test_node_order_is_depth_then_id():
    h = build_hierarchy([("z", "r"), ("a", "r"), ("m", "a"), ("b", "z")])
    assert h.nodes == ("r", "a", "z", "b", "m")


def test_cycle_detected():
    with pytest.raises(CycleDetected):
        build_hierarchy([("a", "root"), ("root", "a")])


def test_detached_cycle_detected():
    with pytest.raises(CycleDetected):
        build_hierarchy([("a", "root"), ("x", "y"), ("y", "x")])


def test_multiple_roots():
    with pytest.raises(MultipleRoots):
        build_hierarchy([("a", "r1"), ("b", "r2")])


def test_orphan_when_parent_undeclared():
    with pytest.raises(OrphanNode):
        build_hierarchy([("a", "root"), ("b", "ghost")], nodes=["root", "a", "b"])


def test_inconsistent_levels():
    edges = [("a", "root"), ("b", "root"), ("c", "a")]
    with pytest.raises(InconsistentLevel):
        build_hierarchy(edges, levels={"root": "root", "a": "family", "b": "subfamily", "c": "subfamily"})
    with pytest.raises(InconsistentLevel):
        build_hierarchy(edges, levels={"root": "root", "a": "family", "b": "family", "c": "family"})


def test_single_node_tree():
    h = build_hierarchy([], nodes=["root"])
    assert h.leaves == ("root",)
    np.testing.assert_array_equal(summation_matrix(h).entries, [[1.0]])


def test_large_tree_is_constructible():
    # 53 families, 570 subfamilies, 3004 subsubfamilies
    edges = [(f"F{f}", "total") for f in range(53)]
    edges += [(f"S{s}", f"F{s % 53}") for s in range(570)]
    edges += [(f"L{k}", f"S{k % 570}") for k in range(3004)]
    h = build_hierarchy(edges)
    assert len(h) == 3628
    assert len(h.leaves) == 3004
    assert h.levels == ("root", "family", "subfamily", "subsubfamily")


def test_check_summation_examples(two_leaf):
    assert check_summation(two_leaf, np.array([2.0, 1.0, 1.0]), tol=1e-9) == []
    assert check_summation(two_leaf, np.array([3.0, 1.0, 1.0]), tol=1e-9) == ["root"]


def test_summation_matrix_small_trees(two_leaf):
    np.testing.assert_array_equal(summation_matrix(two_leaf).entries, [[1, 1], [1, 0], [0, 1]])
    single = build_hierarchy([("a", "root")])
    np.testing.assert_array_equal(summation_matrix(single).entries, [[1], [1]])
    chain = build_hierarchy([("f", "root"), ("leaf", "f")])
    np.testing.assert_array_equal(summation_matrix(chain).entries[:, 0], [1, 1, 1])


@given(st.integers(0, 2**32 - 1))
def test_summation_matrix_matches_parent_walk(seed):
    tree = random_tree(np.random.default_rng(seed), max_nodes=60)
    S = summation_matrix(tree)
    np.testing.assert_array_equal(S.entries, dense_summation_matrix(tree))
    # every column is a consistent node vector, one 1 per level on its path
    assert check_summation(tree, S.entries, tol=0.0) == []
    for j, leaf in enumerate(tree.leaves):
        assert S.entries[:, j].sum() == len(tree.ancestors(leaf)) + 1


def test_project_l2_examples(two_leaf):
    S = summation_matrix(two_leaf)
    np.testing.assert_allclose(project_l2(S, np.array([2.0, 1.0, 1.0])), [2, 1, 1], rtol=0, atol=1e-12)
    # normal equations by hand: S^T S = [[2,1],[1,2]], S^T v = (4,4) -> u = (4/3, 4/3)
    gram_inv = np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0
    u = gram_inv @ np.array([4.0, 4.0])
    expected = S.entries @ u
    np.testing.assert_allclose(expected, [8 / 3, 4 / 3, 4 / 3], atol=1e-15)
    np.testing.assert_allclose(project_l2(S, np.array([3.0, 1.0, 1.0])), expected, rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_project_l2_properties(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    S = summation_matrix(tree)
    v = rng.normal(scale=10.0, size=len(tree))
    p = project_l2(S, v)
    np.testing.assert_allclose(p, lstsq_projection(S.entries, v), rtol=1e-9, atol=1e-9)
    assert check_summation(tree, p) == []
    assert np.max(np.abs(project_l2(S, p) - p)) <= 1e-9 * (1 + np.max(np.abs(v)))
    y = S.entries @ rng.normal(size=len(tree.leaves))
    assert np.linalg.norm(y - p) <= np.linalg.norm(y - v) + 1e-12
    np.testing.assert_allclose(project_l2(S, 3.5 * v), 3.5 * p, rtol=1e-12, atol=1e-12)


def test_project_l2_batch_matches_columns(rng):
    tree = random_tree(rng, max_nodes=40)
    S = summation_matrix(tree)
    V = rng.normal(size=(len(tree), 5))
    batch = project_l2(S, V)
    for k in range(5):
        np.testing.assert_allclose(batch[:, k], project_l2(S, V[:, k]), atol=1e-12)


def test_project_l1_in_subspace_is_identity(rng):
    tree = random_tree(rng, max_nodes=30)
    S = summation_matrix(tree)
    v = S.entries @ rng.uniform(1, 5, size=len(tree.leaves))
    np.testing.assert_allclose(project_l1(S, v), v, atol=1e-6)


def test_project_l1_two_leaf_beats_l2(two_leaf):
    S = summation_matrix(two_leaf)
    v = np.array([3.0, 1.0, 1.0])
    # grid oracle over u in [0, 3]^2, step 1e-3
    grid = np.arange(0.0, 3.0 + 1e-9, 1e-3)
    u1, u2 = np.meshgrid(grid, grid, indexing="ij")
    grid_best = np.min(np.abs(u1 + u2 - 3) + np.abs(u1 - 1) + np.abs(u2 - 1))
    assert grid_best == pytest.approx(1.0)
    z = project_l1(S, v)
    obj = np.abs(z - v).sum()
    assert obj <= 1.0 + 1e-6
    assert obj >= grid_best - 1e-6
    assert check_summation(two_leaf, z) == []


def test_project_l1_single_leaf_flat_optimum():
    tree = build_hierarchy([("a", "root")])
    S = summation_matrix(tree)
    z = project_l1(S, np.array([5.0, 1.0]))
    assert np.abs(z - [5.0, 1.0]).sum() == pytest.approx(4.0, abs=1e-6)
    assert 1.0 - 1e-6 <= z[1] <= 5.0 + 1e-6


@given(st.integers(0, 2**32 - 1))
def test_project_l1_matches_linear_program(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_nodes=25)
    S = summation_matrix(tree)
    A = S.entries
    v = rng.normal(scale=5.0, size=len(tree))
    m, k = A.shape
    # min sum(s) s.t. -s <= A u - v <= s, variables (u, s)
    c = np.concatenate([np.zeros(k), np.ones(m)])
    A_ub = np.block([[A, -np.eye(m)], [-A, -np.eye(m)]])
    b_ub = np.concatenate([v, -v])
    lp = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * k + [(0, None)] * m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxItersReached)
        z = project_l1(S, v)
    obj = np.abs(z - v).sum()
    assert obj <= lp.fun + 1e-4 * (1 + lp.fun)
    assert obj <= l1_objective(S, S.leaf_coefficients(v), v) + 1e-9
    assert check_summation(tree, z) == []


def test_project_l1_warns_when_iterations_run_out(two_leaf):
    S = summation_matrix(two_leaf)
    with pytest.warns(MaxItersReached):
        # a negative tolerance never counts as settled
        project_l1(S, np.array([3.0, 1.0, 1.0]), max_iters=3, tol=-1.0)


def test_hierarchy_csv_round_trip(tmp_path, world):
    tree, _ = world
    path = tmp_path / "h.csv"
    write_hierarchy(tree, path)
    back = read_hierarchy(path)
    assert back.nodes == tree.nodes
    assert back.parent == tree.parent
    assert back.level == tree.level


def test_hierarchy_csv_rejects_bad_ids(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("node_id,parent_id,level\nroot,,root\nbad id,root,family\n")
    with pytest.raises(ParseError, match="row 3"):
        read_hierarchy(path)
