"""Compile service: request/response models and the FastAPI app.

The CLI drives the same models through `handle_compile`/`handle_parse`
in-process; `create_app` exposes them over HTTP for long-running,
multi-client use.
"""
from __future__ import annotations

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__, ir, textio
from .pipeline import (
    CompileError,
    CompileOptions,
    CompileResult,
    VerifyErrorWithResult,
    compile_program,
    exit_code_for,
    select_rules,
)
from .rules import RULE_GROUPS


class CompileRequest(BaseModel):
    program: str
    rules: list[str] = Field(default_factory=lambda: list(RULE_GROUPS))
    target: str | None = None
    iter_limit: int = 30
    node_limit: int = 100_000
    time_limit: float = 60.0
    cost: dict[str, int] = Field(default_factory=dict)
    check: int = 0
    seed: int = 0
    filename: str = "<input>"


class StatsModel(BaseModel):
    schema_version: int = Field(alias="schema")
    offloads: dict[str, int]
    cost: dict[str, int]
    saturation: dict
    verify: dict

    model_config = {"populate_by_name": True}


class CompileResponse(BaseModel):
    ok: bool
    exit_code: int
    program: str | None = None
    stats: StatsModel | None = None
    diagnostics: list[str] = Field(default_factory=list)
    wall_time: float | None = None


class ParseRequest(BaseModel):
    program: str
    filename: str = "<input>"


class ShapeReport(BaseModel):
    name: str
    shape: str


class ParseResponse(BaseModel):
    ok: bool
    diagnostics: list[str] = Field(default_factory=list)
    variables: list[ShapeReport] = Field(default_factory=list)
    result_shape: str | None = None
    canonical: str | None = None


class RuleInfo(BaseModel):
    name: str
    group: str


class RulesResponse(BaseModel):
    groups: list[str]
    rules: list[RuleInfo]


def _response_for(result: CompileResult, exit_code: int,
                  diagnostics: list[str] | None = None) -> CompileResponse:
    return CompileResponse(
        ok=exit_code == 0,
        exit_code=exit_code,
        program=result.extracted_text,
        stats=StatsModel.model_validate(result.report.stats_json()),
        diagnostics=diagnostics or [],
        wall_time=result.report.wall_time,
    )


def handle_compile(req: CompileRequest) -> CompileResponse:
    groups = tuple(g for g in req.rules if g)
    options = CompileOptions(
        rule_groups=groups,
        target=req.target,
        iter_limit=req.iter_limit,
        node_limit=req.node_limit,
        time_limit=req.time_limit,
        cost_overrides=dict(req.cost),
        check=req.check,
        seed=req.seed,
        filename=req.filename,
    )
    try:
        result = compile_program(req.program, options)
    except CompileError as err:
        return CompileResponse(ok=False, exit_code=1, diagnostics=list(err.diagnostics))
    except VerifyErrorWithResult as err:
        return _response_for(err.result, 2, [str(err)])
    except ValueError as err:
        return CompileResponse(ok=False, exit_code=1, diagnostics=[str(err)])
    return _response_for(result, exit_code_for(result))


def handle_parse(req: ParseRequest) -> ParseResponse:
    try:
        expr, env = textio.parse(req.program)
    except textio.ParseError as err:
        return ParseResponse(ok=False, diagnostics=[err.diagnostic(req.filename)])
    diags = ir.check_well_formed(expr, env)
    if diags:
        return ParseResponse(
            ok=False, diagnostics=[f"{req.filename}: error: {d}" for d in diags])
    return ParseResponse(
        ok=True,
        variables=[ShapeReport(name=n, shape=str(ir.shape_of_tensor(s)))
                   for n, s in env.items()],
        result_shape=str(ir.infer_shape(expr, env)),
        canonical=textio.program_text(expr, env),
    )


def handle_rules() -> RulesResponse:
    rules = []
    for group in RULE_GROUPS:
        for rule in select_rules((group,)):
            rules.append(RuleInfo(name=rule.name, group=group))
    return RulesResponse(groups=list(RULE_GROUPS), rules=rules)


def create_app() -> FastAPI:
    app = FastAPI(title="apex compile service", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/compile", response_model=CompileResponse)
    def compile_endpoint(req: CompileRequest) -> CompileResponse:
        return handle_compile(req)

    @app.post("/parse", response_model=ParseResponse)
    def parse_endpoint(req: ParseRequest) -> ParseResponse:
        return handle_parse(req)

    @app.get("/rules", response_model=RulesResponse)
    def rules_endpoint() -> RulesResponse:
        return handle_rules()

    return app
