"""apex command line: a thin client over the compile service models.

`apex compile` builds a CompileRequest from flags and runs it in-process by
default, or posts it to a running service with --server. `apex serve` hosts
the service.

Exit codes: 0 success, 1 compile error, 2 verification failure, 3 resource
limit hit with no cost improvement.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .rules import RULE_GROUPS
from .service import CompileRequest, CompileResponse, handle_compile


def _parse_cost(text: str) -> dict[str, int]:
    out: dict[str, int] = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad cost entry {part!r}, want key=weight")
        key, value = part.split("=", 1)
        try:
            out[key.strip()] = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad cost weight {value!r}") from None
    return out


def _parse_rules(text: str) -> list[str]:
    return [g.strip() for g in text.split(",") if g.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apex",
        description="access-pattern tensor compiler with equality-saturation offload mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a .gls program")
    c.add_argument("input", help=".gls program file, or - for stdin")
    c.add_argument("--rules", default=",".join(RULE_GROUPS), metavar="GROUPS",
                   help="comma-separated rule groups (generic,im2col,blocking,mapping); "
                        "empty string disables rewriting")
    c.add_argument("--target", choices=("systolic", "vta", "hlscnn"),
                   help="keep only this accelerator's mapping rules")
    c.add_argument("--iter-limit", type=int, default=30)
    c.add_argument("--node-limit", type=int, default=100_000)
    c.add_argument("--time-limit", type=float, default=60.0, metavar="SECONDS")
    c.add_argument("--cost", type=_parse_cost, default={}, metavar="K=V,...",
                   help="cost overrides, e.g. accel=1,compute=1000,concat=5")
    c.add_argument("--emit", choices=("sexpr", "json"), default="sexpr")
    c.add_argument("--stats", metavar="FILE.json", help="write the stats document here")
    c.add_argument("--check", type=int, default=0, metavar="N",
                   help="verify extraction against the input on N random integer bindings")
    c.add_argument("--seed", type=int,
                   default=int(os.environ.get("APEX_SEED", "0")))
    c.add_argument("--server", metavar="URL",
                   help="post the request to a running apex service instead of compiling in-process")

    s = sub.add_parser("serve", help="run the compile service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return parser


def _post(server: str, req: CompileRequest) -> CompileResponse:
    import httpx

    url = server.rstrip("/") + "/compile"
    try:
        resp = httpx.post(url, json=req.model_dump(), timeout=None)
        resp.raise_for_status()
    except httpx.HTTPError as err:
        return CompileResponse(ok=False, exit_code=1,
                               diagnostics=[f"apex: {url}: {err}"])
    return CompileResponse.model_validate(resp.json())


def run_compile(args) -> int:
    if args.input == "-":
        text = sys.stdin.read()
        filename = "<stdin>"
    else:
        try:
            with open(args.input, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as err:
            print(f"apex: {err}", file=sys.stderr)
            return 1
        filename = args.input

    req = CompileRequest(
        program=text,
        rules=_parse_rules(args.rules),
        target=args.target,
        iter_limit=args.iter_limit,
        node_limit=args.node_limit,
        time_limit=args.time_limit,
        cost=args.cost,
        check=args.check,
        seed=args.seed,
        filename=filename,
    )
    response = _post(args.server, req) if args.server else handle_compile(req)

    for line in response.diagnostics:
        print(line, file=sys.stderr)
    if response.program is not None:
        if args.emit == "json":
            doc = {"schema": 1, "program": response.program,
                   "stats": response.stats.model_dump(by_alias=True)}
            sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        else:
            sys.stdout.write(response.program)
    if args.stats and response.stats is not None:
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(response.stats.model_dump(by_alias=True), fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
    if response.wall_time is not None:
        print(f"apex: compiled in {response.wall_time:.3f}s "
              f"(exit {response.exit_code})", file=sys.stderr)
    return response.exit_code


def run_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compile":
        return run_compile(args)
    if args.command == "serve":
        return run_serve(args)
    return 1


if __name__ == "__main__":
    sys.exit(main())
