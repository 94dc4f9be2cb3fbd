import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskcap.errors import DomainError
from riskcap.scenario_tree import ScenarioTree, full_tree


def ex1_tree():
    return ScenarioTree(parent=[-1, 0, 0], stage=[1, 2, 2], prob=[1.0, 0.5, 0.5],
                        demand=[[0.0], [50.0], [150.0]])


def test_paths():
    tree = ex1_tree()
    assert tree.path_to_root(0) == [0]
    assert tree.path_to_root(2) == [0, 2]
    t3 = full_tree(2, 3)
    leaf = t3.children[t3.children[0][1]][1]   # right, right
    path = t3.path_to_root(leaf)
    assert len(path) == 3 and path[-1] == leaf
    assert list(t3.stage[path]) == [1, 2, 3]


def test_nodes_at_stage():
    assert ex1_tree().nodes_at_stage(1) == [0]
    assert ex1_tree().nodes_at_stage(2) == [1, 2]
    assert len(full_tree(3, 3).nodes_at_stage(3)) == 9
    with pytest.raises(DomainError):
        ex1_tree().nodes_at_stage(3)
    with pytest.raises(DomainError):
        ex1_tree().path_to_root(5)


def test_validate_ok_and_violations():
    assert ex1_tree().validate() == []
    bad = ScenarioTree(parent=[-1, 0, 0], stage=[1, 2, 2], prob=[1.0, 0.5, 0.4], demand=[[0], [1], [1]])
    nodes = {v.node for v in bad.validate()}
    assert 0 in nodes          # children of the root sum to 0.9
    skip = ScenarioTree(parent=[-1, 0, 1], stage=[1, 2, 4], prob=[1.0, 1.0, 1.0], demand=[[0], [1], [1]])
    assert any(v.node == 2 and "stage" in v.message for v in skip.validate())


def test_leaves_are_last_stage():
    tree = full_tree(2, 4)
    assert sorted(tree.leaves) == tree.nodes_at_stage(4)


def test_immutable():
    tree = ex1_tree()
    with pytest.raises(ValueError):
        tree.prob[0] = 0.3


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(1, 4))
def test_full_tree_probabilities(C, T):
    tree = full_tree(C, T)
    assert tree.is_valid()
    for t in range(1, T + 1):
        nodes = tree.nodes_at_stage(t)
        assert len(nodes) == C ** (t - 1)
        assert abs(tree.prob[nodes].sum() - 1.0) <= 1e-12
    # unconditional probability equals the product of conditional ones along the path
    for n in range(tree.n_nodes):
        prod = np.prod([tree.prob[m] / tree.prob[tree.parent[m]] for m in tree.path_to_root(n)[1:]])
        assert abs(prod - tree.prob[n]) <= 1e-12
        stages = tree.stage[tree.path_to_root(n)]
        assert np.all(np.diff(stages) == 1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=7, max_size=7))
def test_running_max_and_subtree_sum(vals):
    tree = full_tree(2, 3)
    v = np.array(vals)
    rm = tree.running_max(v)
    ss = tree.subtree_sum(v)
    for n in range(tree.n_nodes):
        path = tree.path_to_root(n)
        assert rm[n] == v[path].max()
    assert abs(ss[0] - v.sum()) <= 1e-9


def test_node_round_trip():
    tree = full_tree(2, 3, demand_fn=lambda n, t, p, b: [float(n), 2.0 * t], N=2)
    again = ScenarioTree.from_nodes(tree.to_nodes())
    assert again == tree
