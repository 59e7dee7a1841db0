"""The compile pipeline: parse, check, saturate, extract, verify, report."""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from . import ir, textio
from .egraph import (
    CostModel,
    EquivalenceState,
    SaturationConfig,
    count_offloads,
    extract,
    saturate,
    tree_cost,
)
from .interp import eval_expr, random_tensor
from .ir import Dims, Expr
from .rules import RULE_GROUPS, RewriteRule, build_rule_library

STATS_SCHEMA = 1

TARGET_RULES = {
    "systolic": ("systolic-array-matmul",),
    "vta": ("vta-dense",),
    "hlscnn": ("hlscnn-conv2d",),
}


class CompileError(Exception):
    """Parse or well-formedness failure; `diagnostics` lists every message."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class VerifyError(Exception):
    pass


@dataclass
class CompileOptions:
    rule_groups: tuple[str, ...] = tuple(RULE_GROUPS)
    target: str | None = None
    iter_limit: int = 30
    node_limit: int = 100_000
    time_limit: float = 60.0
    cost_overrides: dict = field(default_factory=dict)
    check: int = 0
    seed: int = 0
    filename: str = "<input>"


@dataclass
class RunReport:
    input_cost: int
    extracted_cost: int
    offloads: dict[str, int]
    iterations: int
    nodes: int
    stop: str
    verify: dict
    wall_time: float

    def stats_json(self) -> dict:
        # wall time deliberately omitted: the stats document must be
        # byte-identical across runs with the same input, seed and flags.
        return {
            "schema": STATS_SCHEMA,
            "offloads": dict(sorted(self.offloads.items())),
            "cost": {"input": self.input_cost, "extracted": self.extracted_cost},
            "saturation": {"iterations": self.iterations, "nodes": self.nodes,
                           "stop": self.stop},
            "verify": self.verify,
        }


@dataclass
class CompileResult:
    expr: Expr
    env: dict[str, Dims]
    extracted: Expr
    state: EquivalenceState
    report: RunReport

    @property
    def extracted_text(self) -> str:
        return textio.program_text(self.extracted, self.env)


def select_rules(groups, target: str | None = None, **library_kwargs) -> list[RewriteRule]:
    """Rule list for the chosen groups; `target` filters the mapping rules."""
    groups = tuple(groups)
    if not groups:
        return []
    rules = build_rule_library(groups, **library_kwargs)
    if target is not None:
        if target not in TARGET_RULES:
            raise CompileError([f"unknown target {target!r}"])
        keep = TARGET_RULES[target]
        mapping_names = {name for names in TARGET_RULES.values() for name in names}
        rules = [r for r in rules if r.name not in mapping_names or r.name in keep]
    return rules


def compile_program(text: str, options: CompileOptions | None = None) -> CompileResult:
    """Run the full pipeline on program text.

    Raises CompileError for parse/shape failures and VerifyError when the
    `check` trials find an extraction that disagrees with the input.
    """
    options = options or CompileOptions()
    started = time.monotonic()

    try:
        expr, env = textio.parse(text)
    except textio.ParseError as err:
        raise CompileError([err.diagnostic(options.filename)]) from None

    diags = ir.check_well_formed(expr, env)
    if diags:
        raise CompileError([f"{options.filename}: error: {d}" for d in diags])
    expr = ir.bind_shapes(expr, env)

    rules = select_rules(options.rule_groups, options.target)
    cfg = SaturationConfig(iter_limit=options.iter_limit,
                           node_limit=options.node_limit,
                           time_limit=options.time_limit,
                           seed=options.seed)
    cost = CostModel.with_overrides(options.cost_overrides)

    state = saturate(expr, rules, cfg)
    extracted = extract(state, cost)

    verify: dict = {"mode": "skipped"}
    if options.check > 0:
        verify = verify_equivalence(expr, extracted, env, options.check, options.seed)

    report = RunReport(
        input_cost=tree_cost(expr, cost),
        extracted_cost=tree_cost(extracted, cost),
        offloads=count_offloads(extracted),
        iterations=state.iterations,
        nodes=state.n_nodes,
        stop=state.stop,
        verify=verify,
        wall_time=time.monotonic() - started,
    )
    result = CompileResult(expr, env, extracted, state, report)
    if verify.get("mode") == "exact-equal" and verify["mismatches"]:
        raise VerifyErrorWithResult(result)
    return result


class VerifyErrorWithResult(VerifyError):
    def __init__(self, result: CompileResult):
        bad = result.report.verify["mismatches"]
        super().__init__(f"extraction disagrees with input on {bad} binding(s)")
        self.result = result


def verify_equivalence(expr: Expr, extracted: Expr, env: dict[str, Dims],
                       trials: int, seed: int) -> dict:
    """Exact integer-mode comparison of input and extraction on random bindings."""
    rng = random.Random(seed)
    mismatches = 0
    for _ in range(trials):
        bindings = {name: random_tensor(rng, dims) for name, dims in env.items()}
        if eval_expr(expr, bindings) != eval_expr(extracted, bindings):
            mismatches += 1
    return {"mode": "exact-equal", "trials": trials, "mismatches": mismatches}


def exit_code_for(result: CompileResult) -> int:
    """0 success; 3 when a resource limit stopped saturation with no improvement."""
    report = result.report
    if report.stop == "limit" and report.extracted_cost >= report.input_cost:
        return 3
    return 0
