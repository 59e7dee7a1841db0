"""E-graph equality saturation, offload-maximizing extraction, term enumeration.

The e-graph keeps every discovered equivalent form of the input program:
hashconsed nodes over equivalence-class ids, a union-find over classes, and
congruence repair after merges. Every class carries its access-pattern shape
as an analysis; all shipped rewrites preserve it, so merges assert equality.

Saturation is deterministic: classes are visited in id order, rules in list
order, and no iteration order ever depends on object hashes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .ir import (
    AccessPatternShape,
    Expr,
    IRError,
    decompose,
    make_node,
    node_shape,
)
from .patterns import Match, PVar, Pattern, instantiate
from .rules import RewriteRule

TRANSFORMER_HEADS = ("access", "transpose", "cartProd", "windows", "slice",
                     "squeeze", "flatten", "reshape", "pair", "concat")
NAMED_HEADS = ("dense", "bias_add", "add", "reshape_op", "flatten_op")
ACCEL_HEADS = ("systolicArray", "vta_dense", "hlscnn_conv2d")


class ENode(NamedTuple):
    head: str
    payload: tuple
    children: tuple


class EmptyClass(Exception):
    pass


class EGraph:
    def __init__(self):
        self.parent: list[int] = []
        self.nodes: dict[int, list[ENode]] = {}   # canonical id -> member nodes
        self.shape: dict[int, AccessPatternShape] = {}
        self.uses: dict[int, list[tuple[ENode, int]]] = {}
        self.hashcons: dict[ENode, int] = {}
        self.worklist: list[int] = []
        self.version = 0

    # -- union-find --------------------------------------------------------
    def find(self, cid: int) -> int:
        while self.parent[cid] != cid:
            self.parent[cid] = self.parent[self.parent[cid]]
            cid = self.parent[cid]
        return cid

    def _canon(self, node: ENode) -> ENode:
        return ENode(node.head, node.payload, tuple(self.find(c) for c in node.children))

    @property
    def n_nodes(self) -> int:
        return len(self.hashcons)

    def class_ids(self) -> list[int]:
        return sorted(self.nodes.keys())

    # -- construction ------------------------------------------------------
    def add(self, head: str, payload: tuple, children: Iterable[int]) -> int:
        """Hashcons a node; computes and checks the class shape analysis."""
        node = ENode(head, payload, tuple(self.find(c) for c in children))
        hit = self.hashcons.get(node)
        if hit is not None:
            return self.find(hit)
        shape = node_shape(head, payload, tuple(self.shape[c] for c in node.children))
        cid = len(self.parent)
        self.parent.append(cid)
        self.nodes[cid] = [node]
        self.shape[cid] = shape
        self.uses[cid] = []
        self.hashcons[node] = cid
        for child in node.children:
            self.uses[child].append((node, cid))
        self.version += 1
        return cid

    def add_expr(self, e: Expr) -> int:
        head, payload, kids = decompose(e)
        return self.add(head, payload, [self.add_expr(k) for k in kids])

    # -- merging -----------------------------------------------------------
    def merge(self, a: int, b: int) -> int:
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self.shape[a] != self.shape[b]:
            raise IRError(
                f"refusing to merge classes of different shape: {self.shape[a]} vs {self.shape[b]}")
        if b < a:  # keep the older id canonical: stable, insertion-ordered
            a, b = b, a
        self.parent[b] = a
        self.nodes[a].extend(self.nodes.pop(b))
        self.uses[a].extend(self.uses.pop(b))
        del self.shape[b]
        self.worklist.append(a)
        self.version += 1
        return a

    def rebuild(self):
        """Restore hashcons/congruence invariants after merges."""
        while self.worklist:
            todo = []
            seen = {}
            for cid in self.worklist:
                root = self.find(cid)
                if root not in seen:
                    seen[root] = None
                    todo.append(root)
            self.worklist = []
            for cid in todo:
                self._repair(cid)

    def _repair(self, cid: int):
        cid = self.find(cid)
        for node, owner in list(self.uses.get(cid, ())):
            canon = self._canon(node)
            self.hashcons.pop(node, None)
            prior = self.hashcons.get(canon)
            if prior is not None and self.find(prior) != self.find(owner):
                self.merge(prior, owner)
            self.hashcons[canon] = self.find(owner)
        # dedup the member list after child canonicalization
        root = self.find(cid)
        fresh: dict[ENode, None] = {}
        for node in self.nodes[root]:
            fresh.setdefault(self._canon(node), None)
        self.nodes[root] = list(fresh)

    # -- pattern matching ---------------------------------------------------
    def ematch(self, pattern: Pattern) -> list[tuple[int, dict]]:
        """All (class, environment) matches of a pattern, deterministic order."""
        from .patterns import _unify_payload  # shared payload unifier

        out = []
        for cid in self.class_ids():
            for env in self._match_here(pattern, cid, {}, _unify_payload):
                out.append((cid, env))
        return out

    def _match_here(self, pattern: Pattern, cid: int, env: dict, unify) -> list[dict]:
        cid = self.find(cid)
        if isinstance(pattern, PVar):
            bound = env.get(pattern.name)
            if bound is not None:
                return [env] if self.find(bound) == cid else []
            new = dict(env)
            new[pattern.name] = cid
            return [new]
        results = []
        for node in self.nodes[cid]:
            if node.head != pattern.head or len(node.children) != len(pattern.children):
                continue
            env2 = unify(pattern.payload, node.payload, env)
            if env2 is None:
                continue
            partial = [env2]
            for cpat, child in zip(pattern.children, node.children):
                nxt = []
                for e in partial:
                    nxt.extend(self._match_here(cpat, child, e, unify))
                partial = nxt
                if not partial:
                    break
            for e in partial:
                if pattern.bind is not None:
                    e = dict(e)
                    e[pattern.bind] = cid
                results.append(e)
        return results


class EGraphBuilder:
    """Instantiates rule RHS patterns directly into the e-graph."""

    def __init__(self, eg: EGraph):
        self.eg = eg

    def make(self, head, payload, children):
        return self.eg.add(head, payload, children)

    def shape_of(self, cid: int) -> AccessPatternShape:
        return self.eg.shape[self.eg.find(cid)]


# ---------------------------------------------------------------------------
# Saturation

@dataclass(frozen=True)
class SaturationConfig:
    iter_limit: int = 30
    node_limit: int = 100_000
    time_limit: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.iter_limit < 1 or self.node_limit < 1 or self.time_limit <= 0:
            raise ValueError("saturation limits must be positive")


@dataclass
class EquivalenceState:
    """The saturated (or limit-stopped) equivalence database for one program."""

    egraph: EGraph
    root: int
    iterations: int
    stop: str           # "fixpoint" or "limit"
    stop_detail: str    # fixpoint | iterations | nodes | time

    @property
    def n_nodes(self) -> int:
        return self.egraph.n_nodes

    def root_class(self) -> int:
        return self.egraph.find(self.root)

    def class_heads(self, cid: int | None = None) -> list[str]:
        cid = self.root_class() if cid is None else self.egraph.find(cid)
        return [n.head for n in self.egraph.nodes[cid]]

    def contains_head(self, head: str, cid: int | None = None) -> bool:
        """Is any term with this head reachable from the given (default root) class?"""
        eg = self.egraph
        start = self.root_class() if cid is None else eg.find(cid)
        seen = {start: None}
        stack = [start]
        while stack:
            current = stack.pop()
            for node in eg.nodes[current]:
                if node.head == head:
                    return True
                for child in node.children:
                    child = eg.find(child)
                    if child not in seen:
                        seen[child] = None
                        stack.append(child)
        return False


def saturate(e: Expr, rules: list[RewriteRule],
             cfg: SaturationConfig = SaturationConfig()) -> EquivalenceState:
    """Grow the equivalence database of `e` under `rules` up to the limits.

    Non-destructive: the input term stays representable. Stops at a fixed
    point or when an iteration/node/time limit is hit (reported, not fatal).
    """
    eg = EGraph()
    root = eg.add_expr(e)
    builder = EGraphBuilder(eg)
    deadline = time.monotonic() + cfg.time_limit
    iterations = 0
    stop, detail = "limit", "iterations"
    for _ in range(cfg.iter_limit):
        if time.monotonic() > deadline:
            stop, detail = "limit", "time"
            break
        before = eg.version
        applications = []
        for rule in rules:
            for cid, env in eg.ematch(rule.lhs):
                m = Match(env, builder.shape_of)
                for ext in rule.expand(m):
                    full = dict(env)
                    full.update(ext)
                    applications.append((rule, cid, full))
        for rule, cid, env in applications:
            try:
                new_cid = instantiate(rule.rhs, env, builder)
            except IRError:
                continue  # RHS not well-formed for this match: skip
            eg.merge(cid, new_cid)
        eg.rebuild()
        iterations += 1
        if eg.version == before:
            stop, detail = "fixpoint", "fixpoint"
            break
        if eg.n_nodes > cfg.node_limit:
            stop, detail = "limit", "nodes"
            break
        if time.monotonic() > deadline:
            stop, detail = "limit", "time"
            break
    return EquivalenceState(eg, root, iterations, stop, detail)


# ---------------------------------------------------------------------------
# Cost model and extraction

def _default_weights() -> dict[str, int]:
    weights = {"var": 0}
    for head in TRANSFORMER_HEADS:
        weights[head] = 1
    weights["concat"] = 5              # materialized copy, not a view
    weights["compute:dotProd"] = 1000
    weights["compute:reduceMax"] = 1000
    weights["compute:reduceSum"] = 1   # partial-sum accumulation
    for head in ("dense", "bias_add", "add"):
        weights[head] = 1000
    weights["reshape_op"] = 1
    weights["flatten_op"] = 1
    weights["systolicArray"] = 1
    weights["vta_dense"] = 1
    weights["hlscnn_conv2d"] = 100     # whole-kernel offload: dearer than a GEMM call
    return weights


@dataclass(frozen=True)
class CostModel:
    """Per-node-kind non-negative integer weights, offload-favoring by default."""

    weights: tuple = field(default_factory=lambda: tuple(sorted(_default_weights().items())))

    @classmethod
    def default(cls) -> "CostModel":
        return cls()

    @classmethod
    def with_overrides(cls, overrides: dict[str, int]) -> "CostModel":
        weights = _default_weights()
        for key, value in overrides.items():
            if value < 0:
                raise ValueError(f"negative weight for {key!r}")
            if key == "transformer":
                for head in TRANSFORMER_HEADS:
                    weights[head] = value
            elif key == "compute":
                for op in ("dotProd", "reduceSum", "reduceMax"):
                    weights[f"compute:{op}"] = value
            elif key in ("dotProd", "reduceSum", "reduceMax"):
                weights[f"compute:{key}"] = value
            elif key == "namedop":
                for head in NAMED_HEADS:
                    weights[head] = value
            elif key == "accel":
                for head in ACCEL_HEADS:
                    weights[head] = value
            elif key in weights:
                weights[key] = value
            else:
                raise ValueError(f"unknown cost key {key!r}")
        return cls(tuple(sorted(weights.items())))

    def table(self) -> dict[str, int]:
        return dict(self.weights)

    def weight_of(self, head: str, payload: tuple) -> int:
        key = f"compute:{payload[0]}" if head == "compute" else head
        return self.table()[key]

    def accel_below_compute(self) -> bool:
        table = self.table()
        min_compute = min(table[f"compute:{op}"] for op in ("dotProd", "reduceMax"))
        return all(table[h] < min_compute for h in ACCEL_HEADS)


def _weight(table: dict[str, int], node: ENode) -> int:
    key = f"compute:{node.payload[0]}" if node.head == "compute" else node.head
    return table[key]


def tree_cost(e: Expr, cost: CostModel) -> int:
    table = cost.table()

    def go(node: Expr) -> int:
        head, payload, kids = decompose(node)
        key = f"compute:{payload[0]}" if head == "compute" else head
        return table[key] + sum(go(k) for k in kids)

    return go(e)


def _node_key(node: ENode) -> tuple:
    return (node.head, repr(node.payload), node.children)


def extract(state: EquivalenceState, cost: CostModel = CostModel.default()) -> Expr:
    """Minimum-cost term of the root class.

    Ties break on fewer tree nodes, then a stable lexicographic node order,
    so extraction is deterministic. Cycles cannot win: tree size strictly
    increases around any cycle.
    """
    eg = state.egraph
    table = cost.table()
    best: dict[int, tuple[int, int, ENode]] = {}  # class -> (cost, size, node)
    changed = True
    while changed:
        changed = False
        for cid in eg.class_ids():
            for node in eg.nodes[cid]:
                total = _weight(table, node)
                size = 1
                ok = True
                for child in node.children:
                    entry = best.get(eg.find(child))
                    if entry is None:
                        ok = False
                        break
                    total += entry[0]
                    size += entry[1]
                if not ok:
                    continue
                current = best.get(cid)
                if current is None or (total, size, _node_key(node)) < (
                        current[0], current[1], _node_key(current[2])):
                    best[cid] = (total, size, node)
                    changed = True

    root = state.root_class()
    if root not in best:
        raise EmptyClass("no extractable term in the root class")

    def build(cid: int) -> Expr:
        _, _, node = best[eg.find(cid)]
        return make_node(node.head, node.payload, tuple(build(c) for c in node.children))

    return build(root)


def extracted_cost(state: EquivalenceState, cost: CostModel = CostModel.default()) -> int:
    return tree_cost(extract(state, cost), cost)


def class_cost_lower_bounds(state: EquivalenceState,
                            cost: CostModel = CostModel.default(),
                            sweeps: int | None = None) -> dict[int, int]:
    """Per-class lower bounds on term cost by value iteration from zero.

    Every sweep of LB'[c] = min over nodes (w + sum LB[child]) stays a valid
    lower bound; run to the fixpoint (sweeps=None) and it is exact. With
    integer weights each non-final sweep raises some bound by at least one,
    and bounds are capped by the finite minimum cost, so this terminates.
    """
    eg = state.egraph
    table = cost.table()
    ids = eg.class_ids()
    lb = {cid: 0 for cid in ids}
    sweep = 0
    while sweeps is None or sweep < sweeps:
        sweep += 1
        changed = False
        for cid in ids:
            options = [
                _weight(table, node) + sum(lb[eg.find(c)] for c in node.children)
                for node in eg.nodes[cid]
            ]
            new = min(options) if options else 0
            if new != lb[cid]:
                lb[cid] = new
                changed = True
        if not changed:
            break
    return lb


def enumerate_terms(state: EquivalenceState, budget: int,
                    cost: CostModel = CostModel.default(),
                    cid: int | None = None) -> list[tuple[int, Expr]]:
    """Every term of the class with tree cost <= budget (for optimality checks).

    Exhaustive within the budget: branches are pruned only when a sound
    per-class lower bound proves they must exceed it. Usable on small states.
    """
    eg = state.egraph
    table = cost.table()
    start = state.root_class() if cid is None else eg.find(cid)
    lb = class_cost_lower_bounds(state, cost)

    def terms(klass: int, limit: int) -> list[tuple[int, Expr]]:
        out = []
        for node in eg.nodes[eg.find(klass)]:
            w = _weight(table, node)
            child_lbs = [lb[eg.find(c)] for c in node.children]
            if w + sum(child_lbs) > limit:
                continue
            combos: list[tuple[int, list[Expr]]] = [(w, [])]
            for idx, child in enumerate(node.children):
                rest = sum(child_lbs[idx + 1:])
                nxt = []
                for spent, parts in combos:
                    for ccost, cexpr in terms(child, limit - spent - rest):
                        nxt.append((spent + ccost, parts + [cexpr]))
                combos = nxt
                if not combos:
                    break
            for spent, parts in combos:
                if spent <= limit:
                    out.append((spent, make_node(node.head, node.payload, tuple(parts))))
        return out

    return terms(start, budget)


def count_offloads(e: Expr) -> dict[str, int]:
    """Accelerator calls by kind in a concrete term (tree occurrences)."""
    counts: dict[str, int] = {}

    def walk(node):
        head, _, kids = decompose(node)
        if head in ACCEL_HEADS:
            counts[head] = counts.get(head, 0) + 1
        for k in kids:
            walk(k)

    walk(e)
    return counts
