"""Pattern language for rewrite rules.

Patterns mirror expression nodes: `PVar` matches any subterm (binding it),
`PNode` matches a node head, unifies its payload, and recurses. Payload
slots may hold literals, `IVar`/`SVar` binders, or `Ref`s resolved from the
match environment when a right-hand side is instantiated. A `PNode` may
carry a `bind` name so conditions can inspect the shape of an inner match.

The same pattern trees drive plain-tree matching (the exact-match baseline
and the soundness fuzzer) and e-graph matching (equality saturation); the
two differ only in the `builder` used for instantiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Expr, IRError, decompose, infer_shape, make_node


@dataclass(frozen=True)
class PVar:
    name: str


@dataclass(frozen=True)
class IVar:
    """Binds a single integer payload slot."""

    name: str


@dataclass(frozen=True)
class SVar:
    """Binds an arbitrary payload component (a dims tuple, a shape pair)."""

    name: str


@dataclass(frozen=True)
class Ref:
    """RHS payload slot filled from the environment (matched or computed)."""

    name: str


@dataclass(frozen=True)
class PNode:
    head: str
    payload: tuple = ()
    children: tuple = ()
    bind: str | None = None


Pattern = PVar | PNode


def _unify_payload(pat, actual, env: dict) -> dict | None:
    if isinstance(pat, (IVar, SVar)):
        if pat.name in env and env[pat.name] != actual:
            return None
        env = dict(env)
        env[pat.name] = actual
        return env
    if isinstance(pat, tuple):
        if not isinstance(actual, tuple) or len(pat) != len(actual):
            return None
        for p, a in zip(pat, actual):
            env2 = _unify_payload(p, a, env)
            if env2 is None:
                return None
            env = env2
        return env
    return env if pat == actual else None


def _resolve_payload(pat, env: dict):
    if isinstance(pat, Ref):
        return env[pat.name]
    if isinstance(pat, (IVar, SVar)):
        return env[pat.name]
    if isinstance(pat, tuple):
        return tuple(_resolve_payload(p, env) for p in pat)
    return pat


# ---------------------------------------------------------------------------
# Tree matching

def match_tree(pattern: Pattern, expr: Expr, env: dict | None = None) -> dict | None:
    """Match a pattern against a concrete subtree; None if it does not match."""
    env = {} if env is None else env
    if isinstance(pattern, PVar):
        if pattern.name in env:
            return env if env[pattern.name] == expr else None
        env = dict(env)
        env[pattern.name] = expr
        return env
    head, payload, kids = decompose(expr)
    if head != pattern.head or len(kids) != len(pattern.children):
        return None
    env2 = _unify_payload(pattern.payload, payload, env)
    if env2 is None:
        return None
    for cpat, kid in zip(pattern.children, kids):
        env2 = match_tree(cpat, kid, env2)
        if env2 is None:
            return None
    if pattern.bind is not None:
        env2 = dict(env2)
        env2[pattern.bind] = expr
    return env2


def all_tree_matches(pattern: Pattern, expr: Expr) -> list[dict]:
    """Every subtree match, preorder. This is the exact-matching baseline."""
    found = []

    def walk(node):
        env = match_tree(pattern, node)
        if env is not None:
            found.append(env)
        for kid in decompose(node)[2]:
            walk(kid)

    walk(expr)
    return found


def count_exact_matches(pattern: Pattern, expr: Expr) -> int:
    return len(all_tree_matches(pattern, expr))


# ---------------------------------------------------------------------------
# Builders: how to materialize a pattern instance

class TreeBuilder:
    """Instantiates patterns as plain Exprs; shape errors propagate as IRError."""

    def make(self, head, payload, children):
        expr = make_node(head, payload, tuple(children))
        infer_shape(expr)  # validates; Vars must carry shapes
        return expr

    def shape_of(self, thing):
        return infer_shape(thing)


def instantiate(pattern: Pattern, env: dict, builder) -> object:
    """Build the pattern with the environment's bindings via the builder.

    Raises IRError if the instance is not well-formed; callers treat that as
    a failed (skipped) application.
    """
    if isinstance(pattern, PVar):
        return env[pattern.name]
    payload = _resolve_payload(pattern.payload, env)
    children = [instantiate(c, env, builder) for c in pattern.children]
    return builder.make(pattern.head, payload, children)


def expr_to_pattern(expr: Expr) -> Pattern:
    """Literal pattern from a concrete expression (vars stay literal)."""
    head, payload, kids = decompose(expr)
    return PNode(head, payload, tuple(expr_to_pattern(k) for k in kids))


@dataclass
class Match:
    """A rule match: bound environment plus a shape accessor."""

    env: dict
    shape_of: object = field(repr=False, default=None)

    def shape(self, name: str):
        return self.shape_of(self.env[name])
