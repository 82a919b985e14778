from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_best, brute_force_splits, random_dataset, rule_matches, to_table

from jobclass.cart import (
    CATEGORICAL,
    NUMERIC,
    DecisionTree,
    FeatureTable,
    GrowParams,
    RoutingStats,
    apply_tree,
    best_split_categorical,
    best_split_numeric,
    find_surrogates,
    fit_pruned_tree,
    gini,
    grow_tree,
    importance,
    predict,
    predict_table,
    pruning_sequence,
    subtree,
)
from jobclass.errors import EmptyDataset, EmptyNode, IncompatibleArtifact
from jobclass.labeling import LONG, SHORT


@pytest.mark.parametrize("counts, expected", [((5, 0), 0.0), ((3, 3), 0.5), ((3, 1), 0.375)])
def test_gini_examples(counts, expected):
    assert gini(*counts) == pytest.approx(expected)


def test_gini_empty_node():
    with pytest.raises(EmptyNode):
        gini(0, 0)


def test_numeric_split_example():
    rule = best_split_numeric([1, 2, 9, 10], ["S", "S", "L", "L"])
    assert rule.cut == 5.5 and rule.goodness == pytest.approx(0.5)


def test_numeric_split_none_cases():
    assert best_split_numeric([1, 2, 3], ["S", "S", "S"]) is None
    assert best_split_numeric([4, 4, 4, 4], ["S", "L", "S", "L"]) is None


def test_numeric_split_tie_smaller_cut():
    # cuts 1.5 and 3.5 give the same decrease
    rule = best_split_numeric([1, 2, 3, 4], ["L", "S", "S", "L"])
    assert rule is not None and rule.cut == 1.5


def test_categorical_split_example():
    rule = best_split_categorical(["a", "a", "b", "b"], ["S", "S", "L", "L"])
    assert rule.left_categories == {"a"} and rule.right_categories == {"b"}
    assert rule.goodness == pytest.approx(0.5)


def test_categorical_three_levels_matches_brute_force():
    cats = ["p"] * 10 + ["q"] * 10 + ["r"] * 10
    labels = [1] + [0] * 9 + [1] * 5 + [0] * 5 + [1] * 9 + [0]
    rule = best_split_categorical(cats, labels)
    splits = list(brute_force_splits(cats, labels, CATEGORICAL))
    assert len(splits) == 3
    best = max(splits, key=lambda s: s[0])
    assert rule.goodness == pytest.approx(best[0])
    assert rule.left_categories == best[2][1]
    assert rule.left_categories in ({"p"}, {"p", "q"})


def test_categorical_split_none_cases():
    assert best_split_categorical(["a", "b", "a", "b"], ["S", "L", "L", "S"]) is None
    assert best_split_categorical(["a", "a", "a"], ["S", "L", "S"]) is None


def test_missing_values_scale_goodness():
    rule = best_split_numeric([1, 2, 9, 10, None, None, None, None], ["S", "S", "L", "L"] * 2)
    assert rule.goodness == pytest.approx(0.25)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_root_split_equals_brute_force(seed):
    columns, labels = random_dataset(np.random.default_rng(seed))
    tree = grow_tree(to_table(columns), labels, GrowParams(min_node_size=2, max_depth=1))
    best = brute_force_best(columns, labels)
    root = tree.root
    if best is None or best[0] < 1e-6:
        assert root.is_leaf
        return
    assert root.split is not None
    assert root.split.goodness == pytest.approx(best[0], abs=1e-9)
    assert root.split.variable == best[3]
    assert rule_matches(root.split, best[4])


def _table(**cols):
    kinds = {k: NUMERIC for k, v in cols.items() if v and isinstance(next(x for x in v if x is not None), float)}
    return FeatureTable.from_columns(cols, kinds)


def test_surrogate_duplicate_first_and_independent_excluded():
    x = [float(i) for i in range(20)]
    y = np.array([0] * 10 + [1] * 10)
    # 'indep' agrees with the x<9.5 routing on exactly half of each side
    indep = ["u", "v"] * 10
    table = _table(x=x, copy=list(x), indep=indep)
    rule = best_split_numeric(x, y.tolist(), variable="x")
    sur = find_surrogates(rule, table, np.arange(20), y)
    assert [s.rule.variable for s in sur] == ["copy"]
    assert sur[0].agreement == 1.0 and sur[0].rule.cut == rule.cut and not sur[0].reverse


def test_surrogate_reverse_direction():
    x = [float(i) for i in range(20)]
    y = np.array([0] * 10 + [1] * 10)
    table = _table(x=x, neg=[-v for v in x])
    rule = best_split_numeric(x, y.tolist(), variable="x")
    (sur,) = find_surrogates(rule, table, np.arange(20), y)
    assert sur.reverse and sur.agreement == 1.0
    assert sur.goes_left(-3.0) is True and sur.goes_left(-15.0) is False


def test_surrogate_at_baseline_excluded():
    # primary: rows 0-5 left, 6-9 right (majority baseline 0.6). In the
    # candidate's order the directions alternate so that no cut, forward
    # or reversed, agrees on more than 6 of 10 rows.
    x = [float(i) for i in range(10)]
    y = np.array([0] * 6 + [1] * 4)
    order = [0, 6, 1, 2, 7, 3, 8, 4, 9, 5]
    z = [0.0] * 10
    for pos, row in enumerate(order):
        z[row] = float(pos)
    table = _table(x=x, z=z)
    rule = best_split_numeric(x, y.tolist(), variable="x")
    assert rule.cut == 5.5
    assert find_surrogates(rule, table, np.arange(10), y) == []


def test_no_other_variables_no_surrogates():
    table = _table(x=[1.0, 2.0, 3.0, 4.0])
    rule = best_split_numeric([1, 2, 3, 4], [0, 0, 1, 1], variable="x")
    assert find_surrogates(rule, table, np.arange(4), np.array([0, 0, 1, 1])) == []


def test_separable_gives_depth_one_tree():
    x = [float(i) for i in range(100)]
    y = [0] * 50 + [1] * 50
    tree = grow_tree(_table(x=x), y, GrowParams(min_node_size=2))
    assert len(tree.nodes) == 3
    pred, _ = predict_table(tree, _table(x=x))
    assert pred.tolist() == y


def test_no_signal_single_leaf():
    cat = ["a", "b"] * 50
    y = [0, 0, 1, 1] * 25
    tree = grow_tree(_table(c=cat), y, GrowParams(min_node_size=2))
    assert tree.root.is_leaf and tree.root.predicted == LONG  # 50/50 tie goes LONG


def test_empty_rows_raise():
    with pytest.raises(EmptyDataset):
        grow_tree(_table(x=[1.0]), [0], rows=np.array([], dtype=int))


def _random_tree(seed, n=400, min_node=5):
    rng = np.random.default_rng(seed)
    columns, labels = random_dataset(rng, max_rows=n, max_vars=3)
    table = to_table(columns)
    return table, np.array(labels), grow_tree(table, labels, GrowParams(min_node_size=min_node))


@pytest.mark.parametrize("seed", range(8))
def test_tree_structure_invariants(seed):
    table, y, tree = _random_tree(seed)
    ids = [n.node_id for n in tree.nodes]
    assert len(set(ids)) == len(ids)
    for k, node in enumerate(tree.nodes):
        if node.is_leaf:
            continue
        left, right = tree.nodes[node.left], tree.nodes[node.right]
        assert (left.node_id, right.node_id) == (2 * node.node_id, 2 * node.node_id + 1)
        assert left.parent == right.parent == k
        assert left.depth == right.depth == node.depth + 1
        assert (node.n_short, node.n_long) == (left.n_short + right.n_short, left.n_long + right.n_long)
        agreements = [s.agreement for s in node.surrogates]
        assert agreements == sorted(agreements, reverse=True)
        assert node.split.goodness >= 0
        if node.split.kind == CATEGORICAL:
            assert node.split.left_categories and node.split.right_categories
            assert not node.split.left_categories & node.split.right_categories


@pytest.mark.parametrize("seed", range(5))
def test_default_direction_is_direct_majority(seed):
    table, y, tree = _random_tree(seed, min_node=20)
    leaf_rows = {}
    for node in tree.nodes:
        if node.is_leaf:
            continue
        # re-route the node's training rows with the primary split only
        rows = _rows_at(tree, table, node)
        r = node.split.route(table.column(node.split.variable)[rows], table.vocab.get(node.split.variable))
        n_left, n_right = int((r == 1).sum()), int((r == 0).sum())
        assert node.default_left == (n_left >= n_right)
        leaf_rows[node.node_id] = rows.size
    assert all(v > 0 for v in leaf_rows.values())


def _rows_at(tree, table, target):
    leaf_of = {}
    stack = [(0, np.arange(table.n_rows))]
    from jobclass.cart import _route_node

    while stack:
        k, rows = stack.pop()
        node = tree.nodes[k]
        leaf_of[k] = rows
        if node.is_leaf:
            continue
        go = _route_node(node, table, rows, None)
        stack += [(node.left, rows[go]), (node.right, rows[~go])]
    return leaf_of[tree.nodes.index(target)]


@pytest.mark.parametrize("seed", range(6))
def test_pruning_properties(seed):
    table, y, tree = _random_tree(seed)
    seq = pruning_sequence(tree)
    alphas = [a for a, _ in seq]
    assert alphas == sorted(alphas) and alphas[0] == 0.0
    collapsed = [c for _, c in seq]
    assert all(a <= b for a, b in zip(collapsed, collapsed[1:]))
    pruned = fit_pruned_tree(table, y, GrowParams(min_node_size=5), folds=5, seed=seed)
    assert pruned.node_ids() <= tree.node_ids()
    assert pruned.selected_alpha in [p["alpha"] for p in pruned.complexity_path]
    err_max = np.mean(predict_table(tree, table)[0] != y)
    err_pruned = np.mean(predict_table(pruned, table)[0] != y)
    assert err_max <= err_pruned + 1e-12
    for _, c in seq:
        sub = subtree(tree, c)
        assert np.mean(predict_table(sub, table)[0] != y) >= err_max - 1e-12


def test_pruning_keeps_useful_structure():
    rng = np.random.default_rng(0)
    x1 = rng.integers(0, 2, 2000)
    x2 = rng.integers(0, 2, 2000)
    y = (x1 ^ x2) ^ (rng.random(2000) < 0.05)
    table = FeatureTable.from_columns({"a": x1.tolist(), "b": x2.tolist()})
    tree = fit_pruned_tree(table, y, GrowParams(min_node_size=5), folds=10, seed=1)
    assert tree.n_leaves == 4


def test_noise_mostly_prunes_to_root():
    hits = 0
    for trial in range(20):
        rng = np.random.default_rng(trial)
        n = 600
        table = FeatureTable.from_columns(
            {"a": rng.integers(0, 6, n).tolist(), "b": rng.normal(size=n).tolist()}, {"b": NUMERIC}
        )
        # 43% LONG; an exactly balanced vector makes every training fold's
        # majority the held-out minority, which biases CV against the root
        y = rng.permutation(np.r_[np.zeros(342), np.ones(258)]).astype(int)
        tree = fit_pruned_tree(table, y, GrowParams(min_node_size=10), folds=10, seed=trial)
        hits += tree.n_leaves == 1
    assert hits >= 17


def test_predict_pure_leaf():
    x = [float(i) for i in range(100)]
    y = [0] * 50 + [1] * 50
    tree = grow_tree(_table(x=x), y, GrowParams(min_node_size=2))
    assert predict(tree, {"x": 3.0}) == (SHORT, 0.0)
    assert predict(tree, {"x": 99.0}) == (LONG, 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_resubstitution_consistency(seed):
    rng = np.random.default_rng(seed)
    columns, labels = random_dataset(rng, max_rows=150)
    table = to_table(columns)
    tree = grow_tree(table, labels, GrowParams(min_node_size=1))
    leaf = apply_tree(tree, table)
    for i in range(table.n_rows):
        record = {name: vals[i] for name, (_, vals) in columns.items()}
        cls, prob = predict(tree, record)
        assert cls == tree.nodes[leaf[i]].predicted
        assert prob == tree.nodes[leaf[i]].prob_long


def test_missing_root_variable_uses_perfect_copy():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 20, 300).astype(float)
    noise = rng.integers(0, 3, 300)
    y = ((x > 9) ^ (rng.random(300) < 0.1)).astype(int)
    table = FeatureTable.from_columns(
        {"x": x.tolist(), "copy": x.tolist(), "n": noise.tolist()}, {"x": NUMERIC, "copy": NUMERIC}
    )
    tree = grow_tree(table, y, GrowParams(min_node_size=5))
    assert tree.root.split.variable == "x"
    for i in range(50):
        full = {"x": x[i], "copy": x[i], "n": str(noise[i])}
        twin = dict(full, x=None)
        stats = RoutingStats()
        assert predict(tree, twin, stats) == predict(tree, full)
        assert stats.by_surrogate >= 1 and stats.by_default == 0


def test_unseen_category_routed_and_counted():
    cats = ["a"] * 30 + ["b"] * 30
    other = ["p"] * 30 + ["q"] * 30
    y = [0] * 30 + [1] * 30
    table = FeatureTable.from_columns({"c": cats, "d": other})
    tree = grow_tree(table, y, GrowParams(min_node_size=2))
    stats = RoutingStats()
    assert predict(tree, {"c": "zzz", "d": "q"}, stats)[0] == LONG
    assert stats.unseen_category == 1 and stats.by_surrogate == 1
    stats = RoutingStats()
    predict(tree, {"c": "zzz", "d": "zzz"}, stats)
    assert stats.by_default == 1
    # the table path agrees with single-record prediction
    fresh = FeatureTable.from_columns({"c": ["zzz", "a"], "d": ["q", None]})
    s2 = RoutingStats()
    pred, _ = predict_table(tree, fresh, s2)
    assert pred.tolist() == [LONG, SHORT] and s2.unseen_category == 1


def test_importance_examples():
    x = [float(i) for i in range(100)]
    y = [0] * 50 + [1] * 50
    rng = np.random.default_rng(0)
    unrelated = rng.integers(0, 3, 100).astype(str).tolist()
    table = FeatureTable.from_columns({"x": x, "u": unrelated, "dup": list(x)}, {"x": NUMERIC, "dup": NUMERIC})
    tree = grow_tree(table, y, GrowParams(min_node_size=2, max_surrogates=0))
    assert importance(tree) == {"x": 100.0, "u": 0.0, "dup": 0.0}
    tree = grow_tree(table, y, GrowParams(min_node_size=2))
    imp = importance(tree)
    assert imp["x"] == 100.0 and imp["dup"] > 0


def test_importance_single_leaf_all_zero():
    tree = grow_tree(FeatureTable.from_columns({"c": ["a", "b"]}), [0, 0])
    assert importance(tree) == {"c": 0.0}


@pytest.mark.parametrize("seed", range(3))
def test_json_round_trip_and_determinism(seed):
    table, y, tree = _random_tree(seed)
    again = grow_tree(table, y, GrowParams(min_node_size=5))
    assert tree.to_json() == again.to_json()
    back = DecisionTree.from_json(tree.to_json())
    assert back.to_json() == tree.to_json()
    assert np.array_equal(predict_table(back, table)[0], predict_table(tree, table)[0])


def test_json_version_mismatch():
    tree = grow_tree(FeatureTable.from_columns({"c": ["a", "b"]}), [0, 1], GrowParams(min_node_size=1))
    doc = json.loads(tree.to_json())
    doc["version"] = 2
    with pytest.raises(IncompatibleArtifact):
        DecisionTree.from_dict(doc)
