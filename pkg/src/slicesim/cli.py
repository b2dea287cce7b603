"""Command-line entry point: ``slicesim {run,sweep,diff,validate}``."""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .config import config_from_dict, config_hash, emit_config, set_path
from .errors import AuditFailure, SchemaViolation, SliceSimError
from .experiments import back_reaction_slope, run_scenario
from .report import clean, diff_reports, load_report, write_atomic, write_outputs

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIFF = 0, 1, 2, 3, 4
SWEEP_ALIASES = {"L": "scenario.params.trap_separation"}


@dataclass
class RunManifest:
    config_path: str
    config_hash: str
    seed: int
    out_dir: str
    version: str = __version__
    started: Optional[str] = None
    finished: Optional[str] = None
    rerun: bool = False
    outputs: Optional[List[str]] = None


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _read_doc(path: str) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.loads(fh.read().decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise SchemaViolation("<document>", str(exc)) from None


def _resolve(doc: dict, seed: Optional[int]):
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc.setdefault("scenario", {})["seed"] = seed
    return config_from_dict(doc)


def _previous_hash(out_dir: str) -> Optional[str]:
    try:
        with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
            return json.load(fh).get("config_hash")
    except (OSError, ValueError):
        return None


def execute(cfg, config_path: str, out_dir: str, plots: bool = True):
    """Run one scenario and write its artifacts; returns (report, manifest)."""
    h = config_hash(cfg)
    manifest = RunManifest(config_path, h, cfg.scenario.seed, out_dir, started=_now())
    manifest.rerun = _previous_hash(out_dir) == h
    report = run_scenario(cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_atomic(os.path.join(out_dir, "config.resolved.toml"), emit_config(cfg))
    manifest.outputs = [os.path.basename(p) for p in write_outputs(report, out_dir, h, plots)]
    manifest.finished = _now()
    write_atomic(os.path.join(out_dir, "manifest.json"), json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return report, manifest


def _check(report):
    failed = report.failed_audits()
    if failed:
        a = report.audits
        raise AuditFailure(failed[0], f"max drift {a.get(failed[0] + '_max_drift')!r} "
                                      f"exceeds {a.get(failed[0] + '_tolerance')!r}")


def cmd_run(args) -> int:
    cfg = _resolve(_read_doc(args.config), args.seed)
    if args.validate_only:
        sys.stdout.write(emit_config(cfg))
        return EXIT_OK
    out = args.out or cfg.output.dir
    report, manifest = execute(cfg, args.config, out, plots=cfg.output.plots and not args.no_plots)
    flag = " (rerun of identical config)" if manifest.rerun else ""
    print(f"{cfg.scenario.name}: {len(report.branches)} branches -> {out}{flag}")
    _check(report)
    return EXIT_OK


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_sweep(spec: str):
    if "=" not in spec:
        raise SchemaViolation("--sweep", "expected KEY=v1,v2,...")
    key, values = spec.split("=", 1)
    key = SWEEP_ALIASES.get(key.strip(), key.strip())
    vals = [_parse_value(v.strip()) for v in values.split(",") if v.strip()]
    if not vals:
        raise SchemaViolation("--sweep", "no values given")
    return key, vals


def _execute_job(job):
    return execute(*job)


def cmd_sweep(args) -> int:
    base = _read_doc(args.config)
    key, vals = parse_sweep(args.sweep)
    cfgs = []
    for v in vals:
        doc = copy.deepcopy(base)
        set_path(doc, key, v)
        cfgs.append((v, _resolve(doc, args.seed)))
    out = args.out or cfgs[0][1].output.dir
    jobs = [(cfg, args.config, os.path.join(out, f"{key.rsplit('.', 1)[-1]}={v}"),
             cfg.output.plots and not args.no_plots) for v, cfg in cfgs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = [r for r, _ in pool.map(_execute_job, jobs)]
    else:
        reports = [execute(*job)[0] for job in jobs]
    failures = []
    for (v, _), (_, _, sub, _), report in zip(cfgs, jobs, reports):
        failures += [f"{sub}:{a}" for a in report.failed_audits()]
        print(f"{key}={v}: {len(report.branches)} branches -> {sub}")
    summary = {"key": key, "values": vals,
               "runs": [{"value": v, "config_hash": r.provenance["config_hash"], "metrics": r.metrics}
                        for v, r in zip(vals, reports)]}
    if reports[0].scenario == "back_reaction":
        summary["slope"] = back_reaction_slope(reports)
        print(f"slope of |shift| vs separation: {summary['slope']['slope']!r}")
    write_atomic(os.path.join(out, "sweep_summary.json"), json.dumps(clean(summary), indent=2, sort_keys=True) + "\n")
    if failures:
        raise AuditFailure(failures[0].rsplit(":", 1)[1], f"in {failures[0]}")
    return EXIT_OK


def cmd_diff(args) -> int:
    d = diff_reports(load_report(args.a), load_report(args.b), tol=args.tol)
    print(json.dumps(d, indent=2, sort_keys=True))
    return EXIT_OK if d["empty"] else EXIT_DIFF


def cmd_validate(args) -> int:
    cfg = _resolve(_read_doc(args.config), args.seed)
    sys.stdout.write(emit_config(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicesim", description=__doc__)
    p.add_argument("--version", action="version", version=f"slicesim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, default=None, metavar="N", help="override scenario.seed")

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.add_argument("--out", metavar="DIR")
    r.add_argument("--no-plots", action="store_true")
    r.add_argument("--validate-only", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run one scenario per value of a config key")
    common(s)
    s.add_argument("--sweep", required=True, metavar="KEY=v1,v2,...")
    s.add_argument("--out", metavar="DIR")
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--jobs", type=int, default=1, metavar="N", help="run sweep points in N processes")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diff", help="per-branch deltas between two report.json files")
    d.add_argument("a")
    d.add_argument("b")
    d.add_argument("--tol", type=float, default=0.0)
    d.set_defaults(func=cmd_diff)

    v = sub.add_parser("validate", help="resolve a config and print it")
    common(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AuditFailure as exc:
        print(f"error: audit failed: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (SchemaViolation,) as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SliceSimError as exc:
        msg = str(exc)
        prefix = "" if msg.startswith(exc.code) else f"{exc.code}: "
        code = EXIT_CONFIG if exc.code in ("inconsistent-physics", "schema-mismatch") else EXIT_RUNTIME
        print(f"error: {prefix}{msg}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
