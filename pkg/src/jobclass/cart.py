"""Binary CART classifier: Gini splits, surrogate routing of missing values,
weakest-link cost-complexity pruning and variable importance.

Class labels are ``SHORT`` (0) and ``LONG`` (1). Predictors are held in a
``FeatureTable``: numeric columns are float arrays with NaN for missing,
categorical columns are integer codes into a sorted vocabulary, with
``MISSING_CODE`` for an empty field and ``UNSEEN_CODE`` for a token the
vocabulary does not know.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, EmptyNode, IncompatibleArtifact
from .labeling import LONG, SHORT

NUMERIC = "numeric"
CATEGORICAL = "categorical"
MISSING_CODE = -1
UNSEEN_CODE = -2

TREE_FORMAT_VERSION = 1
TIE_TOL = 1e-12

# route codes
LEFT, RIGHT, NO_ROUTE, UNSEEN_ROUTE = 1, 0, -1, -2


# ---------------------------------------------------------------- data table


@dataclass(frozen=True)
class FeatureTable:
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    columns: tuple[np.ndarray, ...]
    vocab: Mapping[str, tuple[str, ...]]

    @property
    def n_rows(self) -> int:
        return int(self.columns[0].size) if self.columns else 0

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.index(n) for n in names]
        return FeatureTable(
            tuple(self.names[i] for i in idx),
            tuple(self.kinds[i] for i in idx),
            tuple(self.columns[i] for i in idx),
            {n: self.vocab[n] for n in names if n in self.vocab},
        )

    def take(self, rows: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.names, self.kinds, tuple(c[rows] for c in self.columns), self.vocab)

    @classmethod
    def from_columns(
        cls,
        data: Mapping[str, Sequence[object]],
        kinds: Mapping[str, str] | None = None,
        vocab: Mapping[str, Sequence[str]] | None = None,
    ) -> "FeatureTable":
        """Build a table from raw values. ``None`` is missing.

        Columns default to categorical; pass ``kinds`` to mark numeric ones.
        When ``vocab`` is given, tokens absent from it get ``UNSEEN_CODE``.
        """
        kinds = kinds or {}
        names, kind_list, cols, vocabs = [], [], [], {}
        for name, values in data.items():
            kind = kinds.get(name, CATEGORICAL)
            names.append(name)
            kind_list.append(kind)
            if kind == NUMERIC:
                cols.append(np.array([np.nan if v is None else float(v) for v in values], dtype=float))
                continue
            tokens = [None if v is None else str(v) for v in values]
            if vocab is not None and name in vocab:
                voc = tuple(vocab[name])
            else:
                voc = tuple(sorted({t for t in tokens if t is not None}))
            lookup = {t: i for i, t in enumerate(voc)}
            codes = np.array(
                [MISSING_CODE if t is None else lookup.get(t, UNSEEN_CODE) for t in tokens], dtype=np.int32
            )
            cols.append(codes)
            vocabs[name] = voc
        return cls(tuple(names), tuple(kind_list), tuple(cols), vocabs)


# ---------------------------------------------------------------- splits


def gini(n_short: int, n_long: int) -> float:
    n = n_short + n_long
    if n <= 0:
        raise EmptyNode("gini of an empty node")
    p0, p1 = n_short / n, n_long / n
    return 1.0 - p0 * p0 - p1 * p1


@dataclass(frozen=True)
class SplitRule:
    """Primary or surrogate split. Numeric: ``value < cut`` goes left.

    Categorical: ``left_categories`` go left, ``right_categories`` go right;
    any other token is unseen and routed like a missing value.
    """

    variable: str
    kind: str
    goodness: float
    cut: float | None = None
    left_categories: frozenset[str] | None = None
    right_categories: frozenset[str] | None = None

    def to_dict(self) -> dict:
        d: dict = {"variable": self.variable, "kind": self.kind, "goodness": self.goodness}
        if self.kind == NUMERIC:
            d["cut"] = self.cut
        else:
            d["left_categories"] = sorted(self.left_categories or ())
            d["right_categories"] = sorted(self.right_categories or ())
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitRule":
        if d["kind"] == NUMERIC:
            return cls(d["variable"], NUMERIC, float(d["goodness"]), cut=float(d["cut"]))
        return cls(
            d["variable"],
            CATEGORICAL,
            float(d["goodness"]),
            left_categories=frozenset(d["left_categories"]),
            right_categories=frozenset(d["right_categories"]),
        )

    def route(self, column: np.ndarray, vocab: tuple[str, ...] | None = None) -> np.ndarray:
        """Route codes: LEFT, RIGHT, NO_ROUTE (missing) or UNSEEN_ROUTE."""
        if self.kind == NUMERIC:
            out = np.where(column < self.cut, LEFT, RIGHT).astype(np.int8)
            out[np.isnan(column)] = NO_ROUTE
            return out
        lookup = _category_lookup(self.left_categories, self.right_categories, vocab or ())
        out = np.full(column.shape, NO_ROUTE, dtype=np.int8)
        present = column >= 0
        out[present] = lookup[column[present]]
        out[column == UNSEEN_CODE] = UNSEEN_ROUTE
        return out

    def goes_left(self, value: object) -> bool | None:
        """Single-value routing; ``None`` when the value is missing or unseen."""
        if value is None:
            return None
        if self.kind == NUMERIC:
            x = float(value)  # type: ignore[arg-type]
            return None if math.isnan(x) else x < self.cut  # type: ignore[operator]
        token = str(value)
        if token in (self.left_categories or ()):
            return True
        if token in (self.right_categories or ()):
            return False
        return None


@functools.lru_cache(maxsize=4096)
def _category_lookup(left: frozenset | None, right: frozenset | None, vocab: tuple[str, ...]) -> np.ndarray:
    left = left or frozenset()
    right = right or frozenset()
    return np.array(
        [LEFT if t in left else RIGHT if t in right else UNSEEN_ROUTE for t in vocab] or [UNSEEN_ROUTE],
        dtype=np.int8,
    )


def _decrease(n_left: np.ndarray, long_left: np.ndarray, n: int, n_long: int) -> np.ndarray:
    """Gini decrease of every (left count, left long count) candidate of an ``n``-row parent."""
    n_right = n - n_left
    long_right = n_long - long_left
    parent = 1.0 - ((n - n_long) / n) ** 2 - (n_long / n) ** 2
    child = (2.0 * long_left * (n_left - long_left) / n_left + 2.0 * long_right * (n_right - long_right) / n_right) / n
    return parent - child


def _numeric_best(x: np.ndarray, y: np.ndarray, n_node: int) -> tuple[float, float] | None:
    """(goodness, cut) of the best numeric split; ``x`` excludes missing values."""
    n = x.size
    if n < 2:
        return None
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    boundary = np.flatnonzero(xs[1:] != xs[:-1])
    if boundary.size == 0:
        return None
    cum = np.cumsum(ys)
    n_left = (boundary + 1).astype(float)
    dec = _decrease(n_left, cum[boundary].astype(float), n, int(cum[-1])) * (n / n_node)
    best = dec.max()
    if best <= 0:
        return None
    pick = int(np.flatnonzero(dec >= best - TIE_TOL)[0])
    b = boundary[pick]
    return float(dec[pick]), float((xs[b] + xs[b + 1]) / 2.0)


def _categorical_best(codes: np.ndarray, y: np.ndarray, n_node: int) -> tuple[float, np.ndarray] | None:
    """(goodness, left codes) of the best category partition; ``codes`` excludes missing.

    Categories are ordered by their long fraction and only the contiguous
    cuts of that ordering are scanned, which is optimal for two-class Gini.
    """
    if codes.size < 2:
        return None
    k = int(codes.max()) + 1
    total = np.bincount(codes, minlength=k)
    longs = np.bincount(codes, weights=y, minlength=k)
    observed = np.flatnonzero(total > 0)
    if observed.size < 2:
        return None
    frac = longs[observed] / total[observed]
    order = observed[np.lexsort((observed, frac))]
    n_left = np.cumsum(total[order])[:-1].astype(float)
    long_left = np.cumsum(longs[order])[:-1]
    n = codes.size
    dec = _decrease(n_left, long_left, n, int(round(longs.sum()))) * (n / n_node)
    best = dec.max()
    if best <= 0:
        return None
    tied = np.flatnonzero(dec >= best - TIE_TOL)
    # lexicographically smallest left set among tied cuts
    pick = min(tied, key=lambda i: tuple(sorted(order[: i + 1].tolist())))
    return float(dec[pick]), np.sort(order[: pick + 1])


def _labels_array(labels: Sequence[object]) -> np.ndarray:
    out = []
    for v in labels:
        if isinstance(v, str):
            out.append(LONG if v.upper() in ("L", "LONG") else SHORT)
        else:
            out.append(int(v))
    return np.asarray(out, dtype=np.int64)


def best_split_numeric(
    values: Sequence[float], labels: Sequence[object], min_impurity_decrease: float = 0.0, variable: str = "x"
) -> SplitRule | None:
    x = np.asarray(values, dtype=float)
    y = _labels_array(labels)
    if x.size != y.size or x.size < 2:
        raise ValueError("values and labels must have equal length >= 2")
    keep = ~np.isnan(x)
    found = _numeric_best(x[keep], y[keep], x.size)
    if found is None or found[0] < max(min_impurity_decrease, TIE_TOL):
        return None
    return SplitRule(variable, NUMERIC, found[0], cut=found[1])


def best_split_categorical(
    categories: Sequence[object], labels: Sequence[object], min_impurity_decrease: float = 0.0, variable: str = "x"
) -> SplitRule | None:
    table = FeatureTable.from_columns({variable: list(categories)})
    y = _labels_array(labels)
    if y.size != table.n_rows:
        raise ValueError("categories and labels must have equal length")
    codes = table.columns[0]
    keep = codes >= 0
    found = _categorical_best(codes[keep], y[keep], codes.size)
    if found is None or found[0] < max(min_impurity_decrease, TIE_TOL):
        return None
    vocab = table.vocab[variable]
    observed = set(np.unique(codes[keep]).tolist())
    left = frozenset(vocab[c] for c in found[1].tolist())
    right = frozenset(vocab[c] for c in observed) - left
    return SplitRule(variable, CATEGORICAL, found[0], left_categories=left, right_categories=right)


def _best_rule_for(table: FeatureTable, j: int, rows: np.ndarray, y: np.ndarray) -> SplitRule | None:
    col = table.columns[j][rows]
    name, kind = table.names[j], table.kinds[j]
    if kind == NUMERIC:
        keep = ~np.isnan(col)
        found = _numeric_best(col[keep], y[keep], rows.size)
        if found is None:
            return None
        return SplitRule(name, NUMERIC, found[0], cut=found[1])
    keep = col >= 0
    found = _categorical_best(col[keep], y[keep], rows.size)
    if found is None:
        return None
    vocab = table.vocab[name]
    left_codes = set(found[1].tolist())
    observed = np.unique(col[keep]).tolist()
    return SplitRule(
        name,
        CATEGORICAL,
        found[0],
        left_categories=frozenset(vocab[c] for c in left_codes),
        right_categories=frozenset(vocab[c] for c in observed if c not in left_codes),
    )


def find_best_split(table: FeatureTable, rows: np.ndarray, y: np.ndarray) -> SplitRule | None:
    """Best split over all variables; goodness ties go to the earlier variable."""
    best: SplitRule | None = None
    for j in range(len(table.names)):
        rule = _best_rule_for(table, j, rows, y)
        if rule is not None and (best is None or rule.goodness > best.goodness + TIE_TOL):
            best = rule
    return best


def split_goodness(rule: SplitRule, column: np.ndarray, vocab: tuple[str, ...] | None, y: np.ndarray) -> float:
    """Gini goodness of an arbitrary rule on node rows (missing rows scale it down)."""
    r = rule.route(column, vocab)
    keep = r >= 0
    n = int(keep.sum())
    if n == 0:
        return 0.0
    left = r[keep] == LEFT
    n_left = int(left.sum())
    if n_left in (0, n):
        return 0.0
    yk = y[keep]
    dec = _decrease(np.array([float(n_left)]), np.array([float(yk[left].sum())]), n, int(yk.sum()))[0]
    return float(dec * n / column.size)


# ---------------------------------------------------------------- surrogates


@dataclass(frozen=True)
class Surrogate:
    rule: SplitRule
    agreement: float
    reverse: bool = False

    def route(self, column: np.ndarray, vocab: tuple[str, ...] | None = None) -> np.ndarray:
        r = self.rule.route(column, vocab)
        if self.reverse:
            r = np.where(r == LEFT, RIGHT, np.where(r == RIGHT, LEFT, r)).astype(np.int8)
        return r

    def goes_left(self, value: object) -> bool | None:
        d = self.rule.goes_left(value)
        if d is None:
            return None
        return (not d) if self.reverse else d

    def to_dict(self) -> dict:
        return {**self.rule.to_dict(), "agreement": self.agreement, "reverse": self.reverse}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Surrogate":
        return cls(SplitRule.from_dict(d), float(d["agreement"]), bool(d.get("reverse", False)))


def _numeric_surrogate(x: np.ndarray, d: np.ndarray) -> tuple[float, float, bool] | None:
    """Best (agreement, cut, reverse) mimicking directions ``d`` (1 = left)."""
    n = x.size
    order = np.argsort(x, kind="stable")
    xs, ds = x[order], d[order]
    boundary = np.flatnonzero(xs[1:] != xs[:-1])
    if boundary.size == 0:
        return None
    cum_left = np.cumsum(ds)
    n_dir_left = int(cum_left[-1])
    size = boundary + 1
    a = cum_left[boundary]
    b = (n - n_dir_left) - (size - a)
    agree = (a + b) / n
    rev = 1.0 - agree
    best_fwd = agree.max()
    best_rev = rev.max()
    if best_fwd >= best_rev - TIE_TOL:
        i = int(np.flatnonzero(agree >= best_fwd - TIE_TOL)[0])
        reverse = False
        score = float(agree[i])
    else:
        i = int(np.flatnonzero(rev >= best_rev - TIE_TOL)[0])
        reverse = True
        score = float(rev[i])
    k = boundary[i]
    return score, float((xs[k] + xs[k + 1]) / 2.0), reverse


def _categorical_surrogate(codes: np.ndarray, d: np.ndarray, default_left: bool) -> tuple[float, set, set] | None:
    k = int(codes.max()) + 1
    total = np.bincount(codes, minlength=k)
    lefts = np.bincount(codes, weights=d, minlength=k)
    rights = total - lefts
    observed = np.flatnonzero(total > 0)
    go_left = (lefts > rights) | ((lefts == rights) & default_left)
    left_set = {int(c) for c in observed if go_left[c]}
    right_set = {int(c) for c in observed if not go_left[c]}
    if not left_set or not right_set:
        return None
    agree = float(np.maximum(lefts, rights)[observed].sum() / codes.size)
    return agree, left_set, right_set


def find_surrogates(
    primary: SplitRule,
    table: FeatureTable,
    rows: np.ndarray,
    y: np.ndarray,
    max_surrogates: int = 5,
    default_left: bool | None = None,
) -> list[Surrogate]:
    """Backup splits that best reproduce the primary split's routing.

    Agreement is measured on rows non-missing for both variables; a
    surrogate is kept only if it beats always sending those rows to the
    majority side.
    """
    j0 = table.index(primary.variable)
    r = primary.route(table.columns[j0][rows], table.vocab.get(primary.variable))
    if default_left is None:
        default_left = int((r == LEFT).sum()) >= int((r == RIGHT).sum())
    found: list[tuple[float, int, Surrogate]] = []
    for j, name in enumerate(table.names):
        if j == j0:
            continue
        col = table.columns[j][rows]
        kind = table.kinds[j]
        ok = (r >= 0) & (~np.isnan(col) if kind == NUMERIC else col >= 0)
        n = int(ok.sum())
        if n == 0:
            continue
        d = (r[ok] == LEFT).astype(np.int64)
        n_left = int(d.sum())
        baseline = max(n_left, n - n_left) / n
        if kind == NUMERIC:
            res = _numeric_surrogate(col[ok], d)
            if res is None:
                continue
            agree, cut, reverse = res
            rule = SplitRule(name, NUMERIC, 0.0, cut=cut)
        else:
            res2 = _categorical_surrogate(col[ok], d, default_left)
            if res2 is None:
                continue
            agree, lset, rset = res2
            vocab = table.vocab[name]
            reverse = False
            rule = SplitRule(
                name,
                CATEGORICAL,
                0.0,
                left_categories=frozenset(vocab[c] for c in lset),
                right_categories=frozenset(vocab[c] for c in rset),
            )
        if agree <= baseline + TIE_TOL:
            continue
        sur = Surrogate(rule, agree, reverse)
        g = split_goodness(sur.rule, col, table.vocab.get(name), y)
        sur = Surrogate(replace(rule, goodness=g), agree, reverse)
        found.append((-agree, j, sur))
    found.sort(key=lambda t: (t[0], t[1]))
    return [s for _, _, s in found[:max_surrogates]]


# ---------------------------------------------------------------- tree


@dataclass(frozen=True)
class GrowParams:
    max_depth: int = 30
    min_node_size: int = 50
    min_impurity_decrease: float = 1e-6
    max_surrogates: int = 5

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.min_node_size < 1 or self.max_surrogates < 0:
            raise ValueError("max_depth and min_node_size must be >= 1, max_surrogates >= 0")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be >= 0")


@dataclass
class Node:
    node_id: int  # heap numbering: root 1, children 2k and 2k+1
    depth: int
    n_short: int
    n_long: int
    parent: int | None = None
    split: SplitRule | None = None
    surrogates: tuple[Surrogate, ...] = ()
    default_left: bool = True
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    @property
    def n(self) -> int:
        return self.n_short + self.n_long

    @property
    def predicted(self) -> int:
        # ties go LONG
        return LONG if self.n_long >= self.n_short else SHORT

    @property
    def prob_long(self) -> float:
        return self.n_long / self.n if self.n else 0.0

    @property
    def misclassified(self) -> int:
        return self.n_short if self.predicted == LONG else self.n_long


@dataclass
class DecisionTree:
    nodes: list[Node]
    variables: tuple[str, ...]
    kinds: tuple[str, ...]
    complexity_path: list[dict] = field(default_factory=list)
    selected_alpha: float | None = None

    @property
    def root(self) -> Node:
        return self.nodes[0]

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    @property
    def variables_used(self) -> set[str]:
        return {n.split.variable for n in self.nodes if n.split is not None}

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf]

    def node_ids(self) -> set[int]:
        return {n.node_id for n in self.nodes}

    def to_dict(self) -> dict:
        return {
            "version": TREE_FORMAT_VERSION,
            "variables": [{"name": v, "kind": k} for v, k in zip(self.variables, self.kinds)],
            "nodes": [
                {
                    "node_id": n.node_id,
                    "depth": n.depth,
                    "n_short": n.n_short,
                    "n_long": n.n_long,
                    "parent": n.parent,
                    "left": n.left,
                    "right": n.right,
                    "default_direction": "LEFT" if n.default_left else "RIGHT",
                    "split": None if n.split is None else n.split.to_dict(),
                    "surrogates": [s.to_dict() for s in n.surrogates],
                }
                for n in self.nodes
            ],
            "complexity_path": self.complexity_path,
            "selected_alpha": self.selected_alpha,
        }

    def to_json(self, extra: dict | None = None) -> str:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DecisionTree":
        if doc.get("version") != TREE_FORMAT_VERSION:
            raise IncompatibleArtifact(f"tree format version {doc.get('version')!r}, expected {TREE_FORMAT_VERSION}")
        nodes = [
            Node(
                node_id=int(d["node_id"]),
                depth=int(d["depth"]),
                n_short=int(d["n_short"]),
                n_long=int(d["n_long"]),
                parent=d["parent"],
                split=None if d["split"] is None else SplitRule.from_dict(d["split"]),
                surrogates=tuple(Surrogate.from_dict(s) for s in d["surrogates"]),
                default_left=d["default_direction"] == "LEFT",
                left=d["left"],
                right=d["right"],
            )
            for d in doc["nodes"]
        ]
        return cls(
            nodes,
            tuple(v["name"] for v in doc["variables"]),
            tuple(v["kind"] for v in doc["variables"]),
            list(doc.get("complexity_path", [])),
            doc.get("selected_alpha"),
        )

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))


@dataclass
class RoutingStats:
    by_surrogate: int = 0
    by_default: int = 0
    unseen_category: int = 0

    def as_dict(self) -> dict:
        return {"by_surrogate": self.by_surrogate, "by_default": self.by_default, "unseen_category": self.unseen_category}


def _route_node(node: Node, table: FeatureTable, rows: np.ndarray, stats: RoutingStats | None) -> np.ndarray:
    """Boolean go-left mask for ``rows`` at an internal node."""
    split = node.split
    assert split is not None
    var = split.variable
    r = split.route(table.column(var)[rows], table.vocab.get(var))
    if stats is not None:
        stats.unseen_category += int((r == UNSEEN_ROUTE).sum())
    pending = r < 0
    for sur in node.surrogates:
        if not pending.any():
            break
        v = sur.rule.variable
        if v not in table.names:
            continue
        sr = sur.route(table.column(v)[rows[pending]], table.vocab.get(v))
        if stats is not None:
            stats.unseen_category += int((sr == UNSEEN_ROUTE).sum())
        hit = sr >= 0
        if hit.any():
            idx = np.flatnonzero(pending)[hit]
            r[idx] = sr[hit]
            pending[idx] = False
            if stats is not None:
                stats.by_surrogate += int(hit.sum())
    if pending.any():
        r[pending] = LEFT if node.default_left else RIGHT
        if stats is not None:
            stats.by_default += int(pending.sum())
    return r == LEFT


def grow_tree(
    table: FeatureTable,
    labels: Sequence[int] | np.ndarray,
    params: GrowParams | None = None,
    rows: np.ndarray | None = None,
) -> DecisionTree:
    """Grow the maximal tree by recursive best-split partitioning (depth-first, left before right)."""
    params = params or GrowParams()
    y_all = np.asarray(labels, dtype=np.int64)
    if y_all.size != table.n_rows:
        raise ValueError("labels length does not match table rows")
    rows = np.arange(table.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise EmptyDataset("cannot grow a tree on zero rows")

    nodes: list[Node] = []
    stack: list[tuple[int | None, bool, np.ndarray, int, int]] = [(None, True, rows, 1, 0)]
    while stack:
        parent, is_left, idx, node_id, depth = stack.pop()
        y = y_all[idx]
        n_long = int(y.sum())
        node = Node(node_id, depth, int(idx.size) - n_long, n_long, parent)
        me = len(nodes)
        nodes.append(node)
        if parent is not None:
            if is_left:
                nodes[parent].left = me
            else:
                nodes[parent].right = me
        if depth >= params.max_depth or idx.size < params.min_node_size or n_long in (0, idx.size):
            continue
        split = find_best_split(table, idx, y)
        if split is None or split.goodness < max(params.min_impurity_decrease, TIE_TOL):
            continue
        j = table.index(split.variable)
        direct = split.route(table.columns[j][idx], table.vocab.get(split.variable))
        node.default_left = int((direct == LEFT).sum()) >= int((direct == RIGHT).sum())
        node.split = split
        if params.max_surrogates > 0:
            node.surrogates = tuple(
                find_surrogates(split, table, idx, y, params.max_surrogates, node.default_left)
            )
        go_left = _route_node(node, table, idx, None)
        # push right first so the left subtree is numbered/visited first
        stack.append((me, False, idx[~go_left], 2 * node_id + 1, depth + 1))
        stack.append((me, True, idx[go_left], 2 * node_id, depth + 1))
    return DecisionTree(nodes, table.names, table.kinds)


def apply_tree(
    tree: DecisionTree, table: FeatureTable, stats: RoutingStats | None = None, collapsed: frozenset[int] = frozenset()
) -> np.ndarray:
    """Index (into ``tree.nodes``) of the terminal node reached by every row."""
    out = np.empty(table.n_rows, dtype=np.int64)
    stack = [(0, np.arange(table.n_rows))]
    while stack:
        k, rows = stack.pop()
        node = tree.nodes[k]
        if node.is_leaf or k in collapsed:
            out[rows] = k
            continue
        if rows.size == 0:
            continue
        go_left = _route_node(node, table, rows, stats)
        stack.append((node.left, rows[go_left]))  # type: ignore[arg-type]
        stack.append((node.right, rows[~go_left]))  # type: ignore[arg-type]
    return out


def predict_table(tree: DecisionTree, table: FeatureTable, stats: RoutingStats | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(class, prob_long) for every row."""
    leaf = apply_tree(tree, table, stats)
    cls = np.array([n.predicted for n in tree.nodes], dtype=np.int8)
    prob = np.array([n.prob_long for n in tree.nodes], dtype=float)
    return cls[leaf], prob[leaf]


def predict(tree: DecisionTree, record: Mapping[str, object], stats: RoutingStats | None = None) -> tuple[int, float]:
    """Route one record (variable -> value, ``None`` for missing) to a leaf."""
    node = tree.root
    while not node.is_leaf:
        assert node.split is not None
        d = node.split.goes_left(record.get(node.split.variable))
        if d is None and stats is not None and record.get(node.split.variable) is not None:
            stats.unseen_category += 1
        if d is None:
            for sur in node.surrogates:
                d = sur.goes_left(record.get(sur.rule.variable))
                if d is not None:
                    if stats is not None:
                        stats.by_surrogate += 1
                    break
        if d is None:
            d = node.default_left
            if stats is not None:
                stats.by_default += 1
        node = tree.nodes[node.left if d else node.right]  # type: ignore[index]
    return node.predicted, node.prob_long


def training_leaf_class(tree: DecisionTree) -> dict[int, int]:
    return {k: n.predicted for k, n in enumerate(tree.nodes) if n.is_leaf}


# ---------------------------------------------------------------- importance


def importance(tree: DecisionTree, table: FeatureTable | None = None) -> dict[str, float]:
    """Per-variable score: size-weighted Gini decrease as primary split plus
    agreement-weighted decrease as surrogate, scaled so the maximum is 100."""
    raw = {v: 0.0 for v in tree.variables}
    for node in tree.nodes:
        if node.split is None:
            continue
        raw[node.split.variable] = raw.get(node.split.variable, 0.0) + node.n * node.split.goodness
        for sur in node.surrogates:
            v = sur.rule.variable
            raw[v] = raw.get(v, 0.0) + node.n * sur.agreement * sur.rule.goodness
    top = max(raw.values(), default=0.0)
    if top <= 0:
        return {v: 0.0 for v in raw}
    return {v: 100.0 * s / top for v, s in raw.items()}


# ---------------------------------------------------------------- pruning


def _reachable(tree: DecisionTree, collapsed: frozenset[int]) -> list[int]:
    out, stack = [], [0]
    while stack:
        k = stack.pop()
        out.append(k)
        node = tree.nodes[k]
        if not node.is_leaf and k not in collapsed:
            stack.extend((node.right, node.left))  # type: ignore[arg-type]
    return out


def _weakest_links(tree: DecisionTree, collapsed: frozenset[int]) -> dict[int, float]:
    """g(t) = (R(t) - R(T_t)) / (|leaves(T_t)| - 1) for every internal node of the current subtree."""
    n_root = tree.root.n
    order = _reachable(tree, collapsed)
    sub_err: dict[int, int] = {}
    sub_leaves: dict[int, int] = {}
    g: dict[int, float] = {}
    for k in reversed(order):
        node = tree.nodes[k]
        if node.is_leaf or k in collapsed:
            sub_err[k] = node.misclassified
            sub_leaves[k] = 1
            continue
        sub_err[k] = sub_err[node.left] + sub_err[node.right]  # type: ignore[index]
        sub_leaves[k] = sub_leaves[node.left] + sub_leaves[node.right]  # type: ignore[index]
        g[k] = (node.misclassified - sub_err[k]) / n_root / (sub_leaves[k] - 1)
    return g


def pruning_sequence(tree: DecisionTree) -> list[tuple[float, frozenset[int]]]:
    """Nested subtrees (as sets of collapsed node indices) with their alphas, ascending.

    The first entry has alpha 0 (splits that do not reduce training error
    removed); the last is the root alone.
    """
    alpha = 0.0
    collapsed: frozenset[int] = frozenset()
    seq: list[tuple[float, frozenset[int]]] = []
    while True:
        g = _weakest_links(tree, collapsed)
        cut = [k for k, v in g.items() if v <= alpha + TIE_TOL]
        if cut:
            collapsed = collapsed | frozenset(cut)
            continue
        seq.append((alpha, collapsed))
        if not g:
            return seq
        alpha = min(g.values())


def _n_leaves(tree: DecisionTree, collapsed: frozenset[int]) -> int:
    return sum(1 for k in _reachable(tree, collapsed) if tree.nodes[k].is_leaf or k in collapsed)


def subtree(tree: DecisionTree, collapsed: frozenset[int]) -> DecisionTree:
    """Materialize the subtree with ``collapsed`` internal nodes turned into leaves (node ids kept)."""
    nodes: list[Node] = []
    stack: list[tuple[int, int | None, bool]] = [(0, None, True)]
    while stack:
        k, parent, is_left = stack.pop()
        src = tree.nodes[k]
        me = len(nodes)
        if src.is_leaf or k in collapsed:
            node = replace(src, parent=parent, split=None, surrogates=(), left=None, right=None, default_left=True)
        else:
            node = replace(src, parent=parent, left=None, right=None)
        nodes.append(node)
        if parent is not None:
            if is_left:
                nodes[parent].left = me
            else:
                nodes[parent].right = me
        if not node.is_leaf:
            stack.append((src.right, me, False))  # type: ignore[arg-type]
            stack.append((src.left, me, True))  # type: ignore[arg-type]
    return DecisionTree(nodes, tree.variables, tree.kinds, list(tree.complexity_path), tree.selected_alpha)


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ids = np.empty(n, dtype=np.int64)
    ids[rng.permutation(n)] = np.arange(n) % folds
    return ids


def prune_cost_complexity(
    tree: DecisionTree,
    table: FeatureTable,
    labels: Sequence[int] | np.ndarray,
    params: GrowParams | None = None,
    folds: int = 10,
    seed: int = 0,
    rows: np.ndarray | None = None,
) -> DecisionTree:
    """Select a subtree of ``tree`` by K-fold cross-validated cost-complexity pruning and the 1-SE rule.

    ``table``/``labels``/``rows`` must be the data ``tree`` was grown on; each
    fold regrows a tree on the other folds with the same ``params``.
    """
    params = params or GrowParams()
    y_all = np.asarray(labels, dtype=np.int64)
    rows = np.arange(table.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    seq = pruning_sequence(tree)
    alphas = [a for a, _ in seq]
    # geometric midpoints between consecutive alphas
    betas = [math.sqrt(alphas[k] * alphas[k + 1]) for k in range(len(alphas) - 1)] + [math.inf]
    n = rows.size
    errors = np.zeros(len(seq))
    folds = max(2, min(folds, n))
    fold_of = _fold_ids(n, folds, seed)
    for f in range(folds):
        train, test = rows[fold_of != f], rows[fold_of == f]
        if test.size == 0 or train.size == 0:
            continue
        ftree = grow_tree(table, y_all, params, rows=train)
        fseq = pruning_sequence(ftree)
        falphas = [a for a, _ in fseq]
        test_table = table.take(test)
        leaf = apply_tree(ftree, test_table)
        y_test = y_all[test]
        for k, beta in enumerate(betas):
            j = max(i for i, a in enumerate(falphas) if a <= beta)
            term = _terminal_map(ftree, fseq[j][1])
            pred = np.array([ftree.nodes[term[i]].predicted for i in range(len(ftree.nodes))], dtype=np.int64)
            errors[k] += int((pred[leaf] != y_test).sum())
    cv = errors / n
    se = np.sqrt(cv * (1.0 - cv) / n)
    best = int(np.flatnonzero(cv <= cv.min() + TIE_TOL)[-1])
    chosen = int(np.flatnonzero(cv <= cv[best] + se[best] + TIE_TOL)[-1])
    path = [
        {"alpha": alphas[k], "leaves": _n_leaves(tree, seq[k][1]), "cv_error": float(cv[k]), "cv_se": float(se[k])}
        for k in range(len(seq))
    ]
    pruned = subtree(tree, seq[chosen][1])
    pruned.complexity_path = path
    pruned.selected_alpha = alphas[chosen]
    return pruned


def _terminal_map(tree: DecisionTree, collapsed: frozenset[int]) -> list[int]:
    """For every node index, the node that acts as its terminal under ``collapsed``."""
    top: list[int | None] = [None] * len(tree.nodes)
    for k, node in enumerate(tree.nodes):
        # nodes are stored parents-before-children
        inherited = top[node.parent] if node.parent is not None else None
        top[k] = inherited if inherited is not None else (k if k in collapsed else None)
    return [t if t is not None else k for k, t in enumerate(top)]


def fit_pruned_tree(
    table: FeatureTable,
    labels: Sequence[int] | np.ndarray,
    params: GrowParams | None = None,
    folds: int = 10,
    seed: int = 0,
    rows: np.ndarray | None = None,
) -> DecisionTree:
    tree = grow_tree(table, labels, params, rows)
    if tree.root.is_leaf:
        tree.complexity_path = [{"alpha": 0.0, "leaves": 1, "cv_error": None, "cv_se": None}]
        tree.selected_alpha = 0.0
        return tree
    return prune_cost_complexity(tree, table, labels, params, folds, seed, rows)


def iter_internal(tree: DecisionTree) -> Iterable[Node]:
    return (n for n in tree.nodes if not n.is_leaf)
