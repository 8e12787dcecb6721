"""Command-line runner.

``qsb run --scenario fig2``          simulate and write a report
``qsb verify chain.jsonl``           replay an exported chain
``qsb keys report.json``             key-consumption table from a report

Exit codes: 0 success, 1 invariant violation, 2 configuration or parse error.
``QSB_LOG`` sets the log level (``DEBUG``, ``INFO``, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .ledger import Block, DecodeError, Violation, verify_chain
from .netsim import Simulation
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("qsb")


def _configure_logging(verbose: int) -> None:
    level = os.environ.get("QSB_LOG", "").upper() or ("DEBUG" if verbose > 1 else "INFO" if verbose else "WARNING")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def format_run_table(report: dict) -> str:
    lines = [f"scenario {report['scenario']}  seed {report['seed']}  m={report['m']}  "
             f"rounds/block={report['rounds_per_block']}"]
    for b in report["blocks"]:
        hashes = set(v for v in b["block_hash"].values())
        lines.append(f"block {b['height']}: {'identical' if b['identical'] else 'DIVERGENT'} rounds={b.get('rounds')} "
                     f"{next(iter(hashes))[:16] if len(hashes) == 1 and None not in hashes else ''}")
        for t in b.get("txns", []):
            lines.append(f"  + {t['label'] or t['txid'][:12]:<10} {t['sender']}->{t['receiver']} {t['amount']}")
        for t in b.get("rejected", []):
            label = t.get("label") or t["txid"][:12]
            lines.append(f"  - {label:<10} {t['reason']}")
        if b.get("inconsistent_slots"):
            lines.append(f"  inconsistent slots: {', '.join(b['inconsistent_slots'])}")
    tr = report["traffic"]
    lines.append(f"frames {tr['frames']}  auth failures {tr['auth_failures']}  "
                 f"deferred {tr.get('deferred_sends', 0)}  late {tr.get('late_batches', 0)}")
    lines.append("invariants: " + ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in report["invariants"].items()))
    return "\n".join(lines) + "\n"


def format_keys_table(report: dict) -> str:
    keys = report["keys"]
    head = f"{'link':<8}{'consumed':>10}{'refilled':>10}{'depth':>10}{'rate bps':>10}{'exhaust':>9}"
    lines = [f"l_h = {keys['l_h']}  window = {keys['window_s']:g} s", head, "-" * len(head)]
    for d in keys["directions"]:
        name = "->".join(d["link"])
        lines.append(f"{name:<8}{d['consumed_total']:>10}{d['refilled_total']:>10}{d['depth']:>10}"
                     f"{d['rate_bps']:>10.3f}{d['exhaustions']:>9}")
    avg = keys["averages"]
    lines.append(f"average consumption: per link {avg['per_link_bps']:.3f} bit/s, "
                 f"per node {avg['per_node_bps']:.3f} bit/s, network {avg['network_bps']:.3f} bit/s")
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = time.perf_counter()
    sim = Simulation(scenario)
    report = sim.run()
    log.info("simulated %s in %.3f s wall-clock", scenario.name, time.perf_counter() - started)
    text = report.to_json() if args.format == "json" else format_run_table(report.data)
    _emit(text, args.out)
    if args.export:
        folder = Path(args.export)
        folder.mkdir(parents=True, exist_ok=True)
        for name, chain in report.chains.items():
            (folder / f"{name}.jsonl").write_text(chain.export_jsonl())
    if not report.ok:
        failed = [k for k, v in report["invariants"].items() if not v]
        print(f"invariant violation: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        violation, count = verify_export(Path(args.chain).read_text(), args.hash_bits)
    except (OSError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if violation is None:
        print(f"ok: {count} blocks")
        return EXIT_OK
    print(f"violation at height {violation.height}: {violation.reason}")
    return EXIT_VIOLATION


def verify_export(text: str, digest_bits: int = 256):
    """Verify a JSON-lines chain export; return ``(violation or None, block count)``.

    Lines that are not JSON are a parse error (truncation, wrong file). A
    line that is JSON but not a well-formed block is a violation at its height.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DecodeError("empty chain file")
    objs = []
    for lineno, line in enumerate(lines, 1):
        try:
            objs.append(json.loads(line))
        except ValueError as exc:
            raise DecodeError(f"line {lineno}: {exc}") from None
    blocks = []
    for height, obj in enumerate(objs):
        try:
            blocks.append(Block.from_json(obj))
        except (ValueError, KeyError, TypeError) as exc:
            found = verify_chain(blocks, digest_bits) if blocks else None
            return found or Violation(height, f"malformed block: {exc}"), len(objs)
    return verify_chain(blocks, digest_bits), len(objs)


def cmd_keys(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
        text = format_keys_table(report) if args.format == "table" else json.dumps(report["keys"], indent=2, sort_keys=True) + "\n"
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario")
    run.add_argument("--scenario", required=True, help="scenario JSON file or shipped scenario name")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="report path (default stdout)")
    run.add_argument("--format", choices=("json", "table"), default="json")
    run.add_argument("--export", help="directory for per-node chain exports (JSON lines)")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="verify an exported chain")
    verify.add_argument("chain")
    verify.add_argument("--hash-bits", type=int, choices=(256, 512), default=256)
    verify.set_defaults(func=cmd_verify)

    keys = sub.add_parser("keys", help="key-consumption table from a run report")
    keys.add_argument("report")
    keys.add_argument("--format", choices=("json", "table"), default="table")
    keys.add_argument("--out")
    keys.set_defaults(func=cmd_keys)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _configure_logging(args.verbose)
    if args.command == "run" and args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
