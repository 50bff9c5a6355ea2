"""Command-line client for the design service.

Every subcommand builds a service request from a config file plus flags
and dispatches it either in-process (default) or to a running server via
``--server URL``; the printed JSON is the service response either way.

Exit codes: 0 success, 2 infeasible, 3 convergence failure, 4 config
error.  The ``COEXIST_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from fastapi import HTTPException

from . import __version__
from .service import schemas
from .service.app import (
    handle_feasibility,
    handle_solve,
    handle_sweep,
    handle_validate_sdr,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONFIG = 4


def _read_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        _fail(f"config file not found: {path}", EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        _fail(f"config file {path} is not valid JSON: {exc}", EXIT_CONFIG)


def _fail(message: str, code: int):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _dispatch(server: str | None, route: str, handler, request):
    """Run a request in-process, or POST it to a remote service."""
    if server is None:
        try:
            return handler(request)
        except HTTPException as exc:
            _fail(str(exc.detail), EXIT_CONFIG if exc.status_code == 400
                  else EXIT_INFEASIBLE)
    import httpx
    reply = httpx.post(server.rstrip("/") + route,
                       json=request.model_dump(), timeout=None)
    if reply.status_code == 400:
        _fail(reply.json().get("detail", reply.text), EXIT_CONFIG)
    if reply.status_code == 409:
        _fail(reply.json().get("detail", reply.text), EXIT_INFEASIBLE)
    reply.raise_for_status()
    return _response_model(route).model_validate(reply.json())


def _response_model(route: str):
    return {
        "/solve": schemas.SolveResponse,
        "/feasibility": schemas.FeasibilityResponse,
        "/validate-sdr": schemas.ValidateSdrResponse,
        "/sweep": schemas.SweepResponse,
    }[route]


def _emit(model) -> None:
    print(model.model_dump_json(indent=2))


def cmd_solve(args) -> int:
    req = schemas.SolveRequest(config=_read_config(args.config),
                               mode=args.mode, rho_db=args.rho,
                               seed=args.seed, include_trace=args.trace)
    resp = _dispatch(args.server, "/solve", handle_solve, req)
    _emit(resp)
    if resp.status == "infeasible":
        return EXIT_INFEASIBLE
    if resp.status in ("max_iterations", "convergence_failure"):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_feasibility(args) -> int:
    req = schemas.FeasibilityRequest(config=_read_config(args.config),
                                     seed=args.seed)
    resp = _dispatch(args.server, "/feasibility", handle_feasibility, req)
    _emit(resp)
    return EXIT_OK if resp.feasible else EXIT_INFEASIBLE


def cmd_validate_sdr(args) -> int:
    req = schemas.ValidateSdrRequest(config=_read_config(args.config),
                                     draws=args.draws, seed=args.seed,
                                     rho_db=args.rho)
    resp = _dispatch(args.server, "/validate-sdr", handle_validate_sdr, req)
    _emit(resp)
    return EXIT_OK


def cmd_sweep(args) -> int:
    req = schemas.SweepRequest(config=_read_config(args.config),
                               out_dir=args.out, jobs=args.jobs,
                               include_trace=args.trace)
    resp = _dispatch(args.server, "/sweep", handle_sweep, req)
    if args.out is not None and args.server is not None:
        # remote run: materialize the returned CSVs locally
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(resp.runs_csv)
        (out / "aggregate.csv").write_text(resp.aggregate_csv)
    summary = resp.model_dump()
    summary.pop("runs_csv")
    summary.pop("aggregate_csv")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("coexist.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coexist",
        description="Joint MIMO codebook / radar power and filter design")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to a JSON config file")
        p.add_argument("--server", default=None,
                       help="base URL of a running service; default runs "
                            "in-process")
        p.add_argument("--seed", type=int, default=None,
                       help="scenario seed (default: montecarlo.base_seed)")

    p = sub.add_parser("solve", help="design one scenario")
    common(p)
    p.add_argument("--mode", default="ee",
                   choices=["ee", "rate", "disjoint", "isolated"])
    p.add_argument("--rho", type=float, default=None,
                   help="override the SDR floor, dB")
    p.add_argument("--trace", action="store_true",
                   help="include the per-iteration trace in the output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("feasibility",
                       help="report per-cell SDR ceilings and the verdict")
    common(p)
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("validate-sdr",
                       help="check the analytic SDR against snapshots")
    common(p)
    p.add_argument("--draws", type=int, default=100000)
    p.add_argument("--rho", type=float, default=None)
    p.set_defaults(func=cmd_validate_sdr)

    p = sub.add_parser("sweep", help="run the configured Monte Carlo sweep")
    common(p)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: CPU count)")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("COEXIST_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
