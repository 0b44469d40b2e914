"""Command-line entry point.

Subcommands: ``keygen`` (provision a processor identity fixture),
``export`` (public material only), ``package`` (build a secure executable
file), ``run`` (full session + load + execute + audit + timing), ``report``
(normalized-IPC comparison table), ``audit`` (functional run, audit records
only). Exit codes: 0 success, 2 usage error, 3 integrity or protocol
failure, 4 confidentiality-audit violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import EdapError, FreshnessError
from .executable import ProgramImage, package
from .machine import audit_report_json, audit_report_lines
from .pipeline import SimReport
from .protocol import FreshnessRegistry, SessionContext, provision_processor, wrap_key
from .rng import ByteSource
from .runner import RunManifest, run_pipeline

USAGE_ERROR = 2
PROTOCOL_ERROR = 3
AUDIT_ERROR = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# keygen / export
# ---------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    proc = provision_processor(args.seed)
    priv = proc.private_key_bytes_for_confinement_scan()
    (out / f"{args.name}.priv").write_bytes(priv)
    (out / f"{args.name}.pub").write_bytes(proc.pub)
    print(f"identity written: {out / args.name}.priv/.pub pub={proc.pub.hex()}")
    return 0


def cmd_export(args) -> int:
    pub_path = Path(args.identity).with_suffix(".pub")
    if not pub_path.exists():
        return _fail(USAGE_ERROR, f"no public key at {pub_path}")
    print(pub_path.read_bytes().hex())
    return 0


# ---------------------------------------------------------------------------
# package
# ---------------------------------------------------------------------------


def cmd_package(args) -> int:
    image_path = Path(args.image)
    pub_path = Path(args.identity_pub)
    if not image_path.exists() or not pub_path.exists():
        return _fail(USAGE_ERROR, "image or public-key file does not exist")
    try:
        image = ProgramImage.from_json(image_path.read_text())
    except (ValueError, KeyError) as exc:
        return _fail(USAGE_ERROR, f"bad image file: {exc}")
    registry = FreshnessRegistry()
    state_path = Path(args.state) if args.state else Path(args.out).with_suffix(".pairs")
    registry.load(state_path)
    ctx = SessionContext.create(
        args.seid, pub_path.read_bytes(), rng=ByteSource(args.seed), registry=registry
    )
    try:
        se = package(image, ctx)
    except FreshnessError as exc:
        return _fail(PROTOCOL_ERROR, str(exc))
    except EdapError as exc:
        return _fail(PROTOCOL_ERROR, str(exc))
    registry.save(state_path)
    Path(args.out).write_bytes(se.to_bytes())
    wrapped = wrap_key(ctx.processor_pub, ctx.xts_key.to_bytes(), ctx.rng)
    Path(args.out).with_suffix(".wrapped").write_bytes(wrapped.blob)
    print(f"packaged {len(se.blocks)} blocks under session {args.seid:#x} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# run / audit
# ---------------------------------------------------------------------------


def _load_manifest(path_str: str) -> RunManifest:
    path = Path(path_str)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    return RunManifest.parse(path.read_text(), base_dir=path.parent)


def _parse_remap(spec: str) -> tuple[int, int]:
    left, _, right = spec.partition(":")
    return int(left, 0), int(right, 0)


def cmd_run(args) -> int:
    try:
        manifest = _load_manifest(args.config)
        if args.seed is not None:
            manifest.seed = args.seed
        if args.out is not None:
            manifest.out_dir = Path(args.out)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(USAGE_ERROR, str(exc))
    try:
        outcome = run_pipeline(
            manifest,
            tamper_bit=args.tamper_bit,
            remap_ea=_parse_remap(args.remap_ea) if args.remap_ea else None,
            replay_frame=args.replay_frame,
            break_clearing=args.break_clearing,
        )
    except EdapError as exc:
        return _fail(PROTOCOL_ERROR, f"{type(exc).__name__}: {exc}")
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    (manifest.out_dir / "report_baseline.json").write_text(outcome.baseline.to_json())
    for p in outcome.placements:
        name = p.placement.value
        (manifest.out_dir / f"report_{name}.json").write_text(p.report.to_json())
        (manifest.out_dir / f"audit_{name}.txt").write_text(audit_report_lines(p.violations))
        norm = p.report.ipc_normalized_to_baseline
        print(
            f"{name}: cycles={p.report.cycles} ipc={p.report.ipc:.3f} "
            f"normalized={norm * 100 if norm else 0:.1f}% "
            f"audit={'clean' if p.audits_clean else 'VIOLATIONS'} "
            f"boundaries={p.audit_boundaries}"
        )
    if not outcome.all_audits_clean():
        return _fail(AUDIT_ERROR, "confidentiality audit reported violations")
    return 0


def cmd_audit(args) -> int:
    try:
        manifest = _load_manifest(args.config)
    except (FileNotFoundError, ValueError) as exc:
        return _fail(USAGE_ERROR, str(exc))
    try:
        outcome = run_pipeline(manifest, break_clearing=args.break_clearing)
    except EdapError as exc:
        return _fail(PROTOCOL_ERROR, f"{type(exc).__name__}: {exc}")
    violations = [v for p in outcome.placements for v in p.violations]
    if args.json:
        print(audit_report_json(violations))
    else:
        sys.stdout.write(audit_report_lines(violations))
    if violations:
        return _fail(AUDIT_ERROR, f"{len(violations)} audit violations")
    print("audit clean across " + ", ".join(p.placement.value for p in outcome.placements))
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    reports = []
    for path_str in args.reports:
        path = Path(path_str)
        if not path.exists():
            return _fail(USAGE_ERROR, f"report file {path} does not exist")
        reports.append(SimReport.from_json(path.read_text()))
    reports.sort(key=lambda r: r.cycles)
    print(f"{'placement':<22}{'cycles':>12}{'ipc':>10}{'normalized':>12}")
    for r in reports:
        if r.placement == "baseline":
            norm = 1.0
        else:
            norm = r.ipc_normalized_to_baseline
        norm_s = f"{norm * 100:.1f}%" if norm is not None else "-"
        print(f"{r.placement:<22}{r.cycles:>12}{r.ipc:>10.3f}{norm_s:>12}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edap",
        description="Encrypted-data-processing model: protocol, loader, machine, timing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="provision a processor identity fixture")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="processor")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("export", help="print public identity material")
    p.add_argument("--identity", required=True, help="identity path prefix")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("package", help="build a secure executable from an image")
    p.add_argument("--image", required=True)
    p.add_argument("--identity-pub", required=True)
    p.add_argument("--seid", type=lambda s: int(s, 0), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--state", help="pair-freshness state file")
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("run", help="full pipeline: session, load, execute, audit, time")
    p.add_argument("--config", required=True, help="run manifest file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--tamper-bit", type=int, help="flip this stored memory bit before running")
    p.add_argument("--remap-ea", help="FROM:TO adversarial translation remap")
    p.add_argument("--replay-frame", type=int, help="re-send this stream frame")
    p.add_argument("--break-clearing", action="store_true",
                   help="negative control: skip clearing on control transfer")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="functional run, print audit records")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--break-clearing", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="normalized-IPC comparison table")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
