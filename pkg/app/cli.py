"""Operator command line: `python -m app.cli <command> [options]`.

Exit codes: 0 success, 2 the protocol or security condition failed, 1 usage or internal error.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import QKDError
from app.core.logging import configure_logging
from app.netrun.roles import CONDITION_FAILED, run_local, run_role
from app.schemas.config import RunConfig
from app.schemas.distill import DistillParams
from app.schemas.run import RunCreate
from app.services.analysis import analysis_report
from app.services.channels import parse_channel
from app.services.distill import LabeledKey, distill_report, resolve_matrix, simulate_distillation
from app.services.field import field_spec
from app.services.protocol import run_session, stream
from app.services.threshold import e_max_scan, iff_scan, write_frontier_csv
from app.services.verify import run_verify

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_CONDITION = 0, 1, 2

# stream tag for the i.i.d. labeled keys of `distill --distill-bits`
ROLE_LABELS = 6


class UsageError(Exception):
    pass


def _opt(parser: argparse.ArgumentParser, *flags: str, **kwargs) -> None:
    # absent flags stay out of the namespace so TOML values are not overwritten
    parser.add_argument(*flags, default=argparse.SUPPRESS, **kwargs)


def create_cli_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML file with run options; flags override it.")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--record", action="store_true", help="Store the run in the run registry.")
    _opt(common, "--json", dest="json_out", help="Also write the JSON result to this path.")
    _opt(common, "--seed", type=int)
    _opt(common, "--threads", type=int)
    _opt(common, "--n", type=int, help="Field degree; the alphabet has N = 2^n letters.")
    _opt(common, "--modulus", type=lambda s: int(s, 0), help="Field modulus, e.g. 0x13.")

    parser = argparse.ArgumentParser(prog="qkd", description="Qudit one-bit QKD workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo session through a channel.")
    _opt(sim, "--rounds", type=int)
    _opt(sim, "--channel")
    _opt(sim, "--sample-fraction", dest="sample_fraction", type=float)
    _opt(sim, "--ec-reading", dest="ec_reading", choices=["outcome", "announcement"])
    _opt(sim, "--gate", choices=["confidence", "point"],
         help="confidence (default): pass only if the condition holds at the 99%% Wilson bounds; "
              "point: judge the plain estimates.")
    _opt(sim, "--block-size", dest="block_size", type=int)
    _opt(sim, "--drop-outside", dest="keep_outside", action="store_false")
    _opt(sim, "--csv", help="Write the per-round log here.")

    ana = sub.add_parser("analyze", parents=[common], help="Exact Bell-diagonal analysis of a channel.")
    _opt(ana, "--channel")

    dis = sub.add_parser("distill", parents=[common], help="Parameter selection and rates for post-processing.")
    _opt(dis, "--matrix", help="p_I,p_x,p_y,p_z")
    _opt(dis, "--channel")
    _opt(dis, "--k", type=int)
    _opt(dis, "--r", type=int)
    _opt(dis, "--auto-params", dest="r", action="store_const", const="auto",
         help="Pick the smallest feasible (k, r) instead of using --k and --r.")
    _opt(dis, "--margin", type=float)
    _opt(dis, "--css-target", dest="css_target", type=float)
    _opt(dis, "--z-budget", dest="z_budget", type=float)
    _opt(dis, "--distill-bits", dest="distill_bits", type=int,
         help="Also run the pipeline on this many i.i.d. labeled positions.")

    thr = sub.add_parser("threshold", parents=[common], help="Scan the tolerable bit error rate.")
    _opt(thr, "--grid", type=int)
    _opt(thr, "--csv", help="Write the frontier rows here.")

    ver = sub.add_parser("verify", parents=[common], help="Field, conjugation and sum-rule self-checks.")
    _opt(ver, "--samples", type=int)

    net = sub.add_parser("netrun", parents=[common], help="Run Alice, Bob or Eve over TCP, or all locally.")
    _opt(net, "--role", choices=["alice", "bob", "eve", "local"])
    _opt(net, "--listen")
    _opt(net, "--connect-alice", dest="connect_alice")
    _opt(net, "--connect-bob", dest="connect_bob")
    _opt(net, "--rounds", type=int)
    _opt(net, "--channel")
    _opt(net, "--eve", action="store_true", help="With --role local, relay through Eve applying --channel.")
    _opt(net, "--sample-fraction", dest="sample_fraction", type=float)
    _opt(net, "--block-size", dest="block_size", type=int)
    _opt(net, "--k", type=int)
    _opt(net, "--r", type=int)
    _opt(net, "--report", help="Write the role report here.")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                loaded = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        values.update({key.replace("-", "_"): value for key, value in loaded.items()})
    skip = {"command", "config", "log_level", "record"}
    values.update({key: value for key, value in vars(args).items() if key not in skip})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) or "config" for err in e.errors())
        raise UsageError(f"invalid config ({fields}): {e}") from e


def cmd_simulate(cfg: RunConfig):
    result = run_session(cfg.session_config())
    if cfg.csv:
        result.log.to_csv(Path(cfg.csv))
    stats = result.stats
    passed = stats.status == "ok" and bool(stats.verdict)
    return stats.model_dump(mode="json"), passed, stats.status if stats.status != "ok" else str(stats.verdict)


def cmd_analyze(cfg: RunConfig):
    report = analysis_report(parse_channel(cfg.channel, field_spec(cfg.n, cfg.modulus)))
    if "ed_condition" in report:
        passed = report["ed_condition"]["passed"]
    else:
        passed = bool(report.get("pm_condition", False))
    return report, passed, str(passed)


def cmd_distill(cfg: RunConfig):
    channel = None if cfg.matrix is not None else cfg.channel
    m = resolve_matrix(cfg.matrix, channel, cfg.n, cfg.modulus)
    report = distill_report(m, cfg.distill_params(), auto=cfg.auto_params)
    selection = report["selection"]
    if cfg.distill_bits and selection["feasible"]:
        params = DistillParams(**selection["params"])
        keys = LabeledKey.sample(m, cfg.distill_bits, stream(cfg.seed, ROLE_LABELS))
        outcome = simulate_distillation(keys, params, stream(cfg.seed, ROLE_LABELS, 1))
        report["simulation"] = outcome.summary()
    passed = bool(selection["feasible"] and report.get("residual_ok", True))
    return report, passed, "feasible" if selection["feasible"] else "infeasible"


def cmd_threshold(cfg: RunConfig):
    summary, rows = e_max_scan(cfg.n, cfg.grid, cfg.threads)
    if cfg.csv:
        write_frontier_csv(rows, Path(cfg.csv))
    iff = iff_scan(cfg.n)
    result = {"summary": summary.model_dump(mode="json"), "iff": iff.model_dump(mode="json")}
    passed = summary.violations_below_half == 0 and iff.passed
    return result, passed, f"e_max={summary.e_max:.6f}"


def cmd_verify(cfg: RunConfig):
    results = run_verify(cfg.n, cfg.seed, samples=cfg.samples)
    for suite in results:
        print(suite.line())
    passed = all(suite.passed for suite in results)
    body = {"suites": [{"name": s.name, "ok": s.ok, "total": s.total} for s in results], "passed": passed}
    return body, passed, "pass" if passed else "mismatch"


def cmd_netrun(cfg: RunConfig):
    if cfg.role is None:
        raise UsageError("netrun needs --role alice|bob|eve|local")
    if cfg.role == "local":
        alice, bob, eve = asyncio.run(run_local(cfg.protocol_params(), cfg.channel if cfg.eve else None))
        reports = {"alice": alice, "bob": bob}
        if eve is not None:
            reports["eve"] = eve
        if cfg.report:
            Path(cfg.report).write_text(json.dumps({k: v.model_dump(mode="json") for k, v in reports.items()},
                                                   indent=2))
        mine = [alice, bob]
    else:
        try:
            role_config = cfg.role_config()
        except ValidationError as e:
            raise UsageError(str(e)) from e
        mine = [asyncio.run(run_role(role_config))]
        reports = {cfg.role: mine[0]}
    body = {name: report.model_dump(mode="json") for name, report in reports.items()}
    if all(r.status == "ok" for r in mine):
        return body, True, "ok"
    reasons = {r.reason for r in mine if r.status != "ok"}
    if reasons <= {CONDITION_FAILED, "insufficient-length", None} and all(
            r.status in ("ok", "aborted", "insufficient-sift") for r in mine):
        return body, False, "aborted"
    raise _NetrunFailed(body, ",".join(sorted(str(r) for r in reasons)))


class _NetrunFailed(Exception):
    def __init__(self, body: Dict, reason: str):
        super().__init__(reason)
        self.body = body


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "distill": cmd_distill,
    "threshold": cmd_threshold,
    "verify": cmd_verify,
    "netrun": cmd_netrun,
}


def record_run(command: str, cfg: RunConfig, result: Dict, verdict: str) -> int:
    from app.db.session import SessionLocal, init_db
    from app.services.runs import create_run

    init_db()
    db = SessionLocal()
    try:
        run = create_run(db, RunCreate(command=command, n=cfg.n, seed=cfg.seed,
                                       config=cfg.model_dump(mode="json"), result=result, verdict=verdict))
        return run.id
    finally:
        db.close()


def _emit(payload: Dict, cfg: RunConfig, quiet: bool) -> None:
    text = json.dumps(payload, indent=2, default=_json_default)
    if not quiet:
        print(text)
    if cfg.json_out:
        Path(cfg.json_out).write_text(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_cli_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level or settings.LOG_LEVEL)
    try:
        cfg = load_config(args)
        logger.info("command=%s seed=%d n=%d", args.command, cfg.seed, cfg.n)
        try:
            result, passed, verdict = COMMANDS[args.command](cfg)
        except _NetrunFailed as e:
            _emit({"command": args.command, "config": cfg.model_dump(mode="json"), "result": e.body}, cfg, False)
            print(f"error: netrun failed: {e}", file=sys.stderr)
            return EXIT_ERROR
        payload = {"command": args.command, "config": cfg.model_dump(mode="json"), "result": result}
        _emit(payload, cfg, quiet=args.command == "verify")
        if args.record:
            run_id = record_run(args.command, cfg, json.loads(json.dumps(result, default=_json_default)), verdict)
            logger.info("recorded run id=%d", run_id)
    except (UsageError, ValidationError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except QKDError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "verify":
        return EXIT_OK if passed else EXIT_ERROR
    return EXIT_OK if passed else EXIT_CONDITION


if __name__ == "__main__":
    sys.exit(main())
