#!/usr/bin/env python3

import argparse
import fcntl
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from typing import List, Optional

from .agents import PrinterModel, PrintClient, PrintServer, audit_job
from .blobstore import open_store
from .config import CliConfig
from .encoding import digest, from_hex, u64
from .errors import (ChainLogError, ConfigError, IdentityError, InvalidBlock, PrintLedgerError,
                     SimulationError, StoreError)
from .identity import address_from_hex, keygen, load_keypair, save_keypair
from .ledger import Chain, VerificationReport, append_log, read_log, verify_blocks
from .repro import REPORTS, write_report
from .simnet import (VirtualClock, check_bound, read_job_csv, render_summary_text, run_sim, summarize,
                     summarize_job_rows, summary_to_json, write_job_csv, write_tx_csv)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_FOUND = 2
EXIT_INTEGRITY = 3


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit value")
    return value


def fail(message: str, code: int):
    print(f"Error: {message}")
    sys.exit(code)


def emit(args, data, text_lines: List[str]) -> None:
    if args.format == "json":
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


@contextmanager
def chain_lock(chain_path: str):
    """Exclusive advisory lock held by commands that append to the chain log"""
    with open(chain_path + ".lock", "a") as handle:
        fcntl.flock(handle, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(handle, fcntl.LOCK_UN)


def open_chain(config: CliConfig, create: bool = False) -> Chain:
    if not os.path.exists(config.chain_path):
        if not create:
            fail(f"Chain log not found: {config.chain_path}", EXIT_NOT_FOUND)
        chain = Chain(difficulty=config.difficulty)
        chain.save_log(config.chain_path)
        logger.info("Created chain log %s", config.chain_path)
        return chain
    return Chain.from_blocks(read_log(config.chain_path), difficulty=config.difficulty)


def mine_pending(chain: Chain, clock: VirtualClock, config: CliConfig) -> list:
    """Mine the mempool empty, one block per CLI step, appending to the log"""
    blocks = []
    while chain.mempool:
        clock.advance_to(max(clock.now(), chain.tip.timestamp + config.d_block))
        block = chain.produce_block(clock.now())
        append_log(config.chain_path, block)
        blocks.append(block)
    return blocks


def keygen_command(args, config: CliConfig):
    seed = digest(u64(args.seed)) if args.seed is not None else None
    keypair = keygen(seed)
    save_keypair(args.out_path, keypair)
    emit(args, {"address": keypair.address.hex0x(), "key_file": args.out_path},
         [keypair.address.hex0x()])


def run_sim_command(args, config: CliConfig):
    sim = config.sim.with_overrides(
        d_block=args.d_block, block_dist=args.block_dist, inclusion_skip=args.skip,
        propagation_delay=args.delay, n_jobs=args.jobs, rng_seed=args.seed,
        poll_interval=args.poll, print_model=args.print_model, start_jitter_ms=args.jitter,
        approval_timeout_ms=args.approval_timeout,
    )
    result = run_sim(sim)
    metrics = result.metrics

    os.makedirs(args.out_dir, exist_ok=True)
    jobs_path = os.path.join(args.out_dir, "jobs.csv")
    txs_path = os.path.join(args.out_dir, "txs.csv")
    with open(jobs_path, "w", newline="") as f:
        write_job_csv(f, metrics)
    with open(txs_path, "w", newline="") as f:
        write_tx_csv(f, metrics)
    rows = summarize(metrics)
    summary_path = os.path.join(args.out_dir, "summary.json" if args.format == "json" else "summary.txt")
    with open(summary_path, "w") as f:
        f.write(summary_to_json(rows) if args.format == "json" else render_summary_text(rows))
    if args.chain_out:
        result.chain.save_log(args.chain_out)

    bound = check_bound(metrics, sim)
    if args.format == "json":
        print(summary_to_json(rows), end="")
    else:
        print(render_summary_text(rows), end="")
        print(f"jobs done: {len(metrics.per_job)}/{sim.n_jobs}")
        print(f"bound: {bound.describe()}")
        print(f"wrote {jobs_path}, {txs_path}, {summary_path}")
    for job_id, reason in metrics.failed_jobs:
        logger.warning("Job %s failed: %s", job_id, reason)

    if sim.block_dist == "deterministic" and not bound.ok:
        for violation in bound.violations:
            logger.warning("Bound violated by %s: d_tx=%d n=%d", violation.tx_hash, violation.d_tx,
                           violation.n_until_included)
        sys.exit(EXIT_INTEGRITY)


def submit_command(args, config: CliConfig):
    keypair = load_keypair(args.key or config.key_path or fail("--key is required", EXIT_USAGE))
    printer = address_from_hex(args.printer or config.agent.printer_address
                               or fail("--printer is required", EXIT_USAGE))
    try:
        with open(args.model, "rb") as f:
            model = f.read()
    except OSError as e:
        fail(f"Cannot read model file: {e}", EXIT_NOT_FOUND)
    store = open_store(config.store_root)

    with chain_lock(config.chain_path):
        chain = open_chain(config, create=True)
        clock = VirtualClock(chain.tip.timestamp + config.d_block)
        client = PrintClient(keypair, chain, store, clock)
        job = client.submit(printer, model)
        if job.failure:
            fail(f"Ledger rejected the request: {job.failure}", EXIT_USAGE)
        blocks = mine_pending(chain, clock, config)

    receipt = chain.receipt(job.tx_hash)
    if receipt is not None and not receipt.ok:
        fail(f"Contract rejected the request: {receipt.reason}", EXIT_USAGE)
    emit(args, {
        "job_id": job.job_id.hex0x(),
        "tx_hash": job.tx_hash.hex0x(),
        "height": blocks[-1].height,
        "model_hash": job.request.model_hash.hex0x(),
    }, [
        f"Job submitted: {job.job_id.hex0x()}",
        f"Transaction: {job.tx_hash.hex0x()}",
        f"Included at height: {blocks[-1].height}",
    ])


def serve_command(args, config: CliConfig):
    """One pass of the print server over the chain log"""
    keypair = load_keypair(args.key or config.key_path or fail("--key is required", EXIT_USAGE))
    printer = PrinterModel.parse(args.print_model) if args.print_model else config.agent.print_model
    store = open_store(config.store_root)

    with chain_lock(config.chain_path):
        chain = open_chain(config, create=True)
        clock = VirtualClock(chain.tip.timestamp + config.d_block)
        server = PrintServer(keypair, chain, store, clock, printer, poll_interval=config.agent.poll_interval)
        server.poll()
        mine_pending(chain, clock, config)
        while True:
            server.print_step()
            if server.loop.printing is None:
                break
            clock.advance_to(max(clock.now(), server.loop.printing[1]))
        mine_pending(chain, clock, config)

    approved = sorted(job_id.hex0x() for job_id in server.approvals)
    printed = sorted(job_id.hex0x() for job_id in server.responses)
    skipped = {job_id.hex0x(): reason for job_id, reason in sorted(server.incidents.items())}
    lines = [f"Printer: {server.address.hex0x()}",
             f"Approved: {len(approved)}", *[f"  {job_id}" for job_id in approved],
             f"Printed: {len(printed)}", *[f"  {job_id}" for job_id in printed]]
    if skipped:
        lines += [f"Skipped: {len(skipped)}", *[f"  {job_id} ({reason})" for job_id, reason in skipped.items()]]
    lines.append(f"Chain height: {chain.tip_height()}")
    emit(args, {"printer": server.address.hex0x(), "approved": approved, "printed": printed,
                "skipped": skipped, "height": chain.tip_height()}, lines)


def _verify_log(config: CliConfig):
    """Parse and verify the chain log in log order; exits 2 or 3 on failure"""
    if not os.path.exists(config.chain_path):
        fail(f"Chain log not found: {config.chain_path}", EXIT_NOT_FOUND)
    try:
        blocks = read_log(config.chain_path)
    except ChainLogError as e:
        where = f" (height {e.height})" if e.height is not None else ""
        fail(f"chain: FAILED at line {e.line_number}{where}: {e}", EXIT_INTEGRITY)
    return blocks, verify_blocks(blocks)


def _render_verdict(report: VerificationReport) -> str:
    return f"chain: {report.describe()}"


def verify_chain_command(args, config: CliConfig):
    _, report = _verify_log(config)
    emit(args, {
        "ok": report.ok,
        "blocks_checked": report.blocks_checked,
        "height": report.height,
        "first_bad_block": report.first_bad_block.hex0x() if report.first_bad_block is not None else None,
        "reason": report.reason,
    }, [_render_verdict(report)])
    if not report.ok:
        sys.exit(EXIT_INTEGRITY)


def audit_command(args, config: CliConfig):
    blocks, report = _verify_log(config)
    if not report.ok:
        fail(_render_verdict(report), EXIT_INTEGRITY)
    chain = Chain.from_blocks(blocks, validate=False, difficulty=config.difficulty)
    try:
        job_id = from_hex(args.job_id)
    except IdentityError:
        fail(f"Job not found: {args.job_id} is not a hex job id", EXIT_NOT_FOUND)
    trail = audit_job(chain, job_id)
    if trail is None:
        fail(f"Job not found: {args.job_id}", EXIT_NOT_FOUND)

    if args.format == "json":
        print(json.dumps(trail.to_dict(), indent=2, sort_keys=True))
    elif args.format == "csv":
        print("phase,tx_hash,height,timestamp,sender")
        for entry in trail.entries:
            print(f"{entry.phase},{entry.tx_hash.hex0x()},{entry.height},{entry.timestamp},{entry.sender.hex0x()}")
    else:
        print(f"Audit trail for job: {trail.job_id.hex0x()}")
        for i, entry in enumerate(trail.entries):
            print(f"  {i+1}. {entry.phase:<8} height {entry.height:<6} at {entry.timestamp:<10} "
                  f"by {entry.sender.hex0x()} tx {entry.tx_hash.hex0x()}")
        for entry, reason in trail.rejected:
            print(f"  rejected {entry.phase} at height {entry.height}: {reason}")
        print(_render_verdict(trail.verification))
    if not trail.chain_ok:
        sys.exit(EXIT_INTEGRITY)


def report_command(args, config: CliConfig):
    if args.repro:
        name, builder = REPORTS[args.repro]
        seed = args.seed if args.seed is not None else config.sim.rng_seed
        report = builder(seed=seed)
        path = write_report(report.render_markdown(), name, args.reports_dir)
        print(f"Report written to {path}")
        if not getattr(report, "passed", True):
            sys.exit(EXIT_INTEGRITY)
        return

    if not args.metrics:
        fail("report needs --metrics CSV or --repro NAME", EXIT_USAGE)
    try:
        with open(args.metrics, newline="") as f:
            rows = summarize_job_rows(read_job_csv(f))
    except FileNotFoundError:
        fail(f"Metrics file not found: {args.metrics}", EXIT_NOT_FOUND)
    except (ValueError, KeyError) as e:
        fail(f"Cannot read metrics: {e}", EXIT_USAGE)
    if args.format == "json":
        print(summary_to_json(rows), end="")
    elif args.format == "csv":
        print("quantity,count,mean,stddev,min,max")
        for row in rows:
            print(f"{row.quantity},{row.count},{row.mean},{row.stddev},{row.min},{row.max}")
    else:
        print(render_summary_text(rows), end="")


def build_config(args) -> CliConfig:
    """Config file values, overridden by the global flags that were given.

    Store and key paths resolve as flag, then the agent section, then the
    top-level config value.
    """
    config = CliConfig.from_file(args.config) if args.config else CliConfig()
    overrides = {
        "chain_path": args.chain,
        "store_root": args.store or config.agent.store_root,
        "output_format": args.format,
        "key_path": getattr(args, "key", None) or config.agent.key_path,
    }
    config = replace(config, **{key: value for key, value in overrides.items() if value is not None})
    args.format = config.output_format
    return config


def add_global_options(parser: argparse.ArgumentParser, default=None) -> None:
    parser.add_argument("--chain", default=default, help="Chain log path (default: chain.log)")
    parser.add_argument("--store", default=default, help="Model blob store directory (default: model_store)")
    parser.add_argument("--format", default=default, choices=["text", "json", "csv"],
                        help="Output format (default: text)")
    parser.add_argument("--seed", default=default, type=_u64, help="Seed for key generation and simulation")
    parser.add_argument("--config", default=default, help="JSON configuration file")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(description="Print job ledger CLI")
    add_global_options(parser)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-v info, -vv debug)")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # global flags may also follow the command; SUPPRESS keeps the top-level values
    global_options = argparse.ArgumentParser(add_help=False)
    add_global_options(global_options, default=argparse.SUPPRESS)

    keygen_parser = subparsers.add_parser("keygen", parents=[global_options], help="Generate a key file")
    keygen_parser.add_argument("out_path", help="Key file to create")
    keygen_parser.set_defaults(func=keygen_command)

    sim_parser = subparsers.add_parser("run-sim", parents=[global_options], help="Run the print job simulation")
    sim_parser.add_argument("--d-block", type=int, help="Block interval in ms (default: 12000)")
    sim_parser.add_argument("--block-dist", choices=["deterministic", "exponential"])
    sim_parser.add_argument("--skip", type=int, help="Blocks before a transaction is includable")
    sim_parser.add_argument("--delay", type=int, help="Propagation delay in ms")
    sim_parser.add_argument("--jobs", type=int, help="Number of print jobs (default: 100)")
    sim_parser.add_argument("--poll", type=int, help="Agent poll interval in ms")
    sim_parser.add_argument("--print-model", help="fixed:<ms> or per-byte:<ms_per_byte>:<base_ms>")
    sim_parser.add_argument("--jitter", type=int, help="Random delay before each job submission, ms")
    sim_parser.add_argument("--approval-timeout", type=int, help="Client approval timeout in ms")
    sim_parser.add_argument("--out-dir", default=".", help="Directory for CSV and summary files")
    sim_parser.add_argument("--chain-out", help="Also write the simulated chain log here")
    sim_parser.set_defaults(func=run_sim_command)

    submit_parser = subparsers.add_parser("submit", parents=[global_options], help="Submit a print request and mine it")
    submit_parser.add_argument("--key", help="Fabricator key file")
    submit_parser.add_argument("--printer", help="Printer address (0x + 40 hex)")
    submit_parser.add_argument("--model", required=True, help="Model file to store and request")
    submit_parser.set_defaults(func=submit_command)

    serve_parser = subparsers.add_parser("serve", parents=[global_options], help="Run one print server pass")
    serve_parser.add_argument("--key", help="Printer key file")
    serve_parser.add_argument("--print-model", help="fixed:<ms> or per-byte:<ms_per_byte>:<base_ms>")
    serve_parser.set_defaults(func=serve_command)

    audit_parser = subparsers.add_parser("audit", parents=[global_options], help="Show the on-chain history of a job")
    audit_parser.add_argument("job_id", help="Print Job ID (0x + 64 hex)")
    audit_parser.set_defaults(func=audit_command)

    verify_parser = subparsers.add_parser("verify-chain", parents=[global_options],
                                          help="Verify every block in the chain log")
    verify_parser.set_defaults(func=verify_chain_command)

    report_parser = subparsers.add_parser("report", parents=[global_options],
                                          help="Summarize metrics or write a reproduction report")
    report_parser.add_argument("--metrics", help="Per-job CSV written by run-sim")
    report_parser.add_argument("--repro", choices=sorted(REPORTS), help="Reproduction report to write")
    report_parser.add_argument("--reports-dir", default="reports", help="Output directory for reports")
    report_parser.set_defaults(func=report_command)

    return parser


def main(argv: Optional[List[str]] = None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        sys.exit(EXIT_USAGE)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = build_config(args)
        args.func(args, config)
    except (ConfigError, IdentityError) as e:
        fail(str(e), EXIT_USAGE)
    except (ChainLogError, InvalidBlock, SimulationError) as e:
        fail(str(e), EXIT_INTEGRITY)
    except StoreError as e:
        fail(str(e), EXIT_NOT_FOUND)
    except PrintLedgerError as e:
        fail(str(e), EXIT_USAGE)


if __name__ == "__main__":
    main()
