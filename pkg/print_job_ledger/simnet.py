#!/usr/bin/env python3
"""
Deterministic discrete-event simulation of the print job sequence.

One print client, one print server and one chain share a virtual clock.
Blocks are produced by a scheduled process (fixed or exponential intervals),
transactions become includable `inclusion_skip` blocks after they reach the
mempool, and every agent poll is an event. The harness records per-transaction
inclusion latency and per-job phase durations.

Events at the same virtual time run in the order they were scheduled.
"""

import csv
import enum
import heapq
import io
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, IO, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .agents import ClientJob, Phase, PrintClient, PrintServer
from .blobstore import MemoryBlobStore
from .config import SimConfig
from .contract import CreateJob, ContractState, RequestRecord
from .encoding import Address, Hash32, digest, to_hex
from .errors import SimulationError, TransactionRejected
from .identity import keygen_from_label
from .ledger import Chain, Receipt, Transaction

logger = logging.getLogger(__name__)

JOB_CSV_HEADER = ["job_id", "request_ms", "request_approve_ms", "response_ms", "all_phase_ms"]
TX_CSV_HEADER = ["tx_hash", "submitted_at", "included_at", "d_tx_ms", "n_until_included"]


class VirtualClock:
    """Simulation time in milliseconds; only ever moves forward"""

    def __init__(self, start: int = 0):
        self._now = start

    def now(self) -> int:
        return self._now

    def advance_to(self, at: int) -> None:
        if at < self._now:
            raise SimulationError(f"Virtual time cannot move back from {self._now} to {at}")
        self._now = at


class EventKind(enum.Enum):
    BLOCK_PRODUCTION = "block"
    AGENT_TICK = "tick"
    PRINT_COMPLETION = "print-done"
    TX_DELIVERY = "deliver"
    SUBMISSION = "submit"


@dataclass(frozen=True)
class EventRecord:
    at: int
    kind: str
    detail: str

    def render(self) -> str:
        return f"{self.at} {self.kind} {self.detail}"


class EventQueue:
    """Pending events ordered by (time, scheduling order)"""

    def __init__(self):
        self._heap: List[Tuple[int, int, EventKind, Callable[[], Optional[str]]]] = []
        self._sequence = itertools.count()

    def schedule(self, at: int, kind: EventKind, handler: Callable[[], Optional[str]]) -> None:
        heapq.heappush(self._heap, (at, next(self._sequence), kind, handler))

    def pop(self) -> Tuple[int, EventKind, Callable[[], Optional[str]]]:
        at, _, kind, handler = heapq.heappop(self._heap)
        return at, kind, handler

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class Submission:
    tx_hash: Hash32
    submitted_at: int
    tip_height: int


class SimulatedEndpoint:
    """The agents' view of the chain, with propagation delay.

    Submitted transactions reach the mempool `delay` ms later and agents see
    the state of the newest block that is at least `delay` ms old.
    """

    def __init__(self, chain: Chain, clock: VirtualClock, queue: EventQueue, delay: int = 0):
        self.chain = chain
        self.clock = clock
        self.queue = queue
        self.delay = delay
        self.submissions: List[Submission] = []
        self.delivery_failures: Dict[bytes, str] = {}
        self._in_flight: Dict[bytes, int] = {}

    def submit_transaction(self, tx: Transaction) -> Hash32:
        self.submissions.append(Submission(tx.tx_hash, tx.submitted_at, self.chain.tip_height()))
        if self.delay == 0:
            return self.chain.submit_transaction(tx)
        sender = bytes(tx.sender)
        self._in_flight[sender] = self._in_flight.get(sender, 0) + 1
        self.queue.schedule(self.clock.now() + self.delay, EventKind.TX_DELIVERY, lambda: self._deliver(tx))
        return tx.tx_hash

    def _deliver(self, tx: Transaction) -> str:
        self._in_flight[bytes(tx.sender)] -= 1
        try:
            self.chain.submit_transaction(tx)
        except TransactionRejected as e:
            logger.warning("Delivery of %s failed: %s", to_hex(tx.tx_hash), e)
            self.delivery_failures[bytes(tx.tx_hash)] = e.reason
            return f"tx={to_hex(tx.tx_hash)} rejected={e.reason}"
        return f"tx={to_hex(tx.tx_hash)}"

    def read_state(self) -> ContractState:
        if self.delay == 0:
            return self.chain.read_state()
        return self.chain.read_state(as_of=self.clock.now() - self.delay)

    def next_nonce(self, sender: bytes) -> int:
        return self.chain.next_nonce(sender) + self._in_flight.get(bytes(sender), 0)

    def pending_deliveries(self) -> int:
        return sum(self._in_flight.values())

    def receipt(self, tx_hash: bytes) -> Optional[Receipt]:
        found = self.chain.find_transaction(tx_hash)
        if found is None or found[0].timestamp > self.clock.now() - self.delay:
            return None
        return self.chain.receipt(tx_hash)


@dataclass(frozen=True)
class TxMetric:
    tx_hash: Hash32
    submitted_at: int
    included_at: int
    d_tx: int
    n_until_included: int

    def row(self) -> List:
        return [to_hex(self.tx_hash), self.submitted_at, self.included_at, self.d_tx, self.n_until_included]


@dataclass(frozen=True)
class JobMetric:
    job_id: Hash32
    request_ms: int
    approve_ms: int
    request_approve_ms: int
    response_ms: int
    all_phase_ms: int

    def row(self) -> List:
        return [to_hex(self.job_id), self.request_ms, self.request_approve_ms, self.response_ms, self.all_phase_ms]


@dataclass
class SimMetrics:
    per_tx: List[TxMetric] = field(default_factory=list)
    per_job: List[JobMetric] = field(default_factory=list)
    failed_jobs: List[Tuple[Hash32, str]] = field(default_factory=list)

    @property
    def summary(self) -> List["SummaryRow"]:
        return summarize(self)


@dataclass(frozen=True)
class SummaryRow:
    quantity: str
    count: int
    mean: float
    stddev: float
    min: float
    max: float


class SimResult(NamedTuple):
    metrics: SimMetrics
    chain: Chain
    event_log: List[EventRecord]


@dataclass(frozen=True)
class BoundReport:
    checked: int
    violations: Tuple[TxMetric, ...]
    d_block: int
    propagation_delay: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def describe(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"d_tx <= d_block * n_until_included + {self.propagation_delay} ms: "
                f"{self.checked - len(self.violations)}/{self.checked} transactions ({status})")


class Simulation:
    """Wires clock, event queue, chain and agents for one run"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.clock = VirtualClock()
        self.queue = EventQueue()
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.rng_seed)))
        self.chain = Chain(difficulty=config.difficulty, max_block_txs=config.max_block_txs,
                           inclusion_skip=config.inclusion_skip, clock=self.clock.now)
        self.endpoint = SimulatedEndpoint(self.chain, self.clock, self.queue, config.propagation_delay)
        self.store = MemoryBlobStore()
        self.event_log: List[EventRecord] = []
        self._print_scheduled: Optional[Tuple[bytes, int]] = None

    # -- processes ----------------------------------------------------------

    def _block_interval(self) -> int:
        if self.config.block_dist == "exponential":
            return max(1, int(round(self.rng.exponential(self.config.d_block))))
        return self.config.d_block

    def _schedule_block(self) -> None:
        self.queue.schedule(self.clock.now() + self._block_interval(), EventKind.BLOCK_PRODUCTION,
                            self._produce_block)

    def _produce_block(self) -> str:
        block = self.chain.produce_block(self.clock.now())
        self._schedule_block()
        return f"height={block.height} txs={len(block.transactions)} hash={to_hex(block.block_hash)}"

    def _dispatch(self, limit: int, done: Callable[[], bool]) -> None:
        while not done():
            if not self.queue:
                raise SimulationError("Event queue drained before the run finished")
            at, kind, handler = self.queue.pop()
            if at > limit:
                raise SimulationError(self._diagnostic(limit))
            self.clock.advance_to(at)
            detail = handler()
            if detail:
                self.event_log.append(EventRecord(at, kind.value, detail))

    def _diagnostic(self, limit: int) -> str:
        return (f"Virtual-time ceiling of {limit} ms reached at height {self.chain.tip_height()} "
                f"with {len(self.chain.mempool)} transactions in the mempool")

    # -- print job experiment ---------------------------------------------

    def run_jobs(self) -> SimResult:
        config = self.config
        client_keys = keygen_from_label(f"sim-client-{config.rng_seed}")
        server_keys = keygen_from_label(f"sim-server-{config.rng_seed}")
        self.client = PrintClient(client_keys, self.endpoint, self.store, self.clock,
                                  approval_timeout_ms=config.approval_timeout_ms)
        self.server = PrintServer(server_keys, self.endpoint, self.store, self.clock,
                                  config.print_model, poll_interval=config.poll_interval)
        self.jobs: List[ClientJob] = []
        self._current: Optional[ClientJob] = None

        self._schedule_block()
        self.queue.schedule(self._jitter(), EventKind.SUBMISSION, self._submit_job)
        self.queue.schedule(0, EventKind.AGENT_TICK, self._tick)
        self._dispatch(config.time_limit(), self._all_jobs_finished)
        return SimResult(self._job_metrics(), self.chain, self.event_log)

    def _jitter(self) -> int:
        if self.config.start_jitter_ms:
            return int(self.rng.integers(0, self.config.start_jitter_ms))
        return 0

    def _all_jobs_finished(self) -> bool:
        return len(self.jobs) == self.config.n_jobs and all(job.finished for job in self.jobs)

    def _schedule_next_job(self) -> None:
        if len(self.jobs) < self.config.n_jobs:
            at = self.clock.now() + self.config.poll_interval + self._jitter()
            self.queue.schedule(at, EventKind.SUBMISSION, self._submit_job)

    def _submit_job(self) -> str:
        model = self.rng.bytes(self.config.model_size) if self.config.model_size else b""
        job = self.client.submit(self.server.address, model)
        self.jobs.append(job)
        self._current = job
        if job.finished:
            self._schedule_next_job()
        return f"job={job.job_id.hex0x()} tx={to_hex(job.tx_hash) if job.tx_hash else '-'}"

    def _tick(self) -> Optional[str]:
        notes = []
        self.server.poll()
        self.server.print_step()
        self._schedule_print_completion()
        job = self._current
        if job is not None and not job.finished:
            before = job.phase
            self.client.poll(job)
            if job.phase != before:
                notes.append(f"job={job.job_id.hex0x()} phase={job.phase.name}")
            if job.finished:
                self._schedule_next_job()
        if not self._all_jobs_finished():
            self.queue.schedule(self.clock.now() + self.config.poll_interval, EventKind.AGENT_TICK, self._tick)
        return " ".join(notes) or None

    def _schedule_print_completion(self) -> None:
        printing = self.server.loop.printing
        if printing is None:
            return
        key = (bytes(printing[0]), printing[1])
        if key == self._print_scheduled:
            return
        self._print_scheduled = key
        self.queue.schedule(printing[1], EventKind.PRINT_COMPLETION, self._print_done)

    def _print_done(self) -> str:
        job_id = self.server.loop.printing[0] if self.server.loop.printing else None
        self.server.print_step()
        self._schedule_print_completion()
        return f"job={job_id.hex0x()}" if job_id is not None else "idle"

    # -- background load ----------------------------------------------------

    def run_load(self, n_tx: int, per_block: float = 2.0) -> SimResult:
        """Submit n_tx independent transactions at uniform random times"""
        if n_tx < 1:
            raise SimulationError("run_load needs at least one transaction")
        keys = keygen_from_label(f"sim-load-{self.config.rng_seed}")
        printer = keygen_from_label(f"sim-server-{self.config.rng_seed}").address
        span = max(1, int(n_tx * self.config.d_block / per_block))
        times = sorted(int(t) for t in self.rng.integers(0, span, size=n_tx))
        self._schedule_block()
        for index, at in enumerate(times):
            self.queue.schedule(at, EventKind.SUBMISSION, lambda i=index: self._submit_load(keys, printer, i))
        self._load_total = n_tx

        def all_included() -> bool:
            return len(self.endpoint.submissions) == self._load_total and not self.chain.mempool \
                and not self._deliveries_pending()

        self._dispatch(span + self.config.time_limit(), all_included)
        return SimResult(self._tx_metrics_only(), self.chain, self.event_log)

    def _deliveries_pending(self) -> bool:
        return self.endpoint.pending_deliveries() > 0

    def _submit_load(self, keys, printer: Address, index: int) -> str:
        now = self.clock.now()
        request = RequestRecord(keys.address, printer, Hash32(digest(index.to_bytes(8, "big"))), now)
        tx = Transaction.create(keys, self.endpoint.next_nonce(keys.address), CreateJob(request), now)
        self.endpoint.submit_transaction(tx)
        return f"tx={to_hex(tx.tx_hash)}"

    # -- metrics --------------------------------------------------------------

    def _collect_tx(self) -> Tuple[List[TxMetric], Dict[bytes, TxMetric]]:
        per_tx = []
        for submission in self.endpoint.submissions:
            found = self.chain.find_transaction(submission.tx_hash)
            if found is None:
                continue
            block = found[0]
            per_tx.append(TxMetric(
                tx_hash=submission.tx_hash,
                submitted_at=submission.submitted_at,
                included_at=block.timestamp,
                d_tx=block.timestamp - submission.submitted_at,
                n_until_included=block.height - submission.tip_height,
            ))
        return per_tx, {bytes(metric.tx_hash): metric for metric in per_tx}

    def _tx_metrics_only(self) -> SimMetrics:
        return SimMetrics(per_tx=self._collect_tx()[0])

    def _job_metrics(self) -> SimMetrics:
        per_tx, by_hash = self._collect_tx()
        metrics = SimMetrics(per_tx=per_tx)
        for job in self.jobs:
            if job.phase != Phase.DONE:
                metrics.failed_jobs.append((job.job_id, job.failure or job.phase.name))
                continue
            approve_tx = self.server.approvals.get(job.job_id)
            response_tx = self.server.responses.get(job.job_id)
            metrics.per_job.append(JobMetric(
                job_id=job.job_id,
                request_ms=by_hash[bytes(job.tx_hash)].d_tx,
                approve_ms=by_hash[bytes(approve_tx)].d_tx,
                request_approve_ms=job.elapsed(Phase.AWAITING_RESPONSE),
                response_ms=by_hash[bytes(response_tx)].d_tx,
                all_phase_ms=job.elapsed(Phase.DONE),
            ))
        return metrics


def run_sim(config: SimConfig) -> SimResult:
    """Run n_jobs print jobs back to back; deterministic for a fixed config"""
    logger.info("Running %d jobs, d_block=%d ms (%s), skip=%d, seed=%d", config.n_jobs, config.d_block,
                config.block_dist, config.inclusion_skip, config.rng_seed)
    return Simulation(config).run_jobs()


def run_load(config: SimConfig, n_tx: int, per_block: float = 2.0) -> SimResult:
    return Simulation(config).run_load(n_tx, per_block)


def check_bound(metrics: SimMetrics, config: SimConfig) -> BoundReport:
    """Check d_tx <= d_block * n_until_included (+ propagation delay) per tx"""
    if config.block_dist != "deterministic":
        logger.warning("Latency bound is only guaranteed for deterministic block intervals")
    limit_extra = config.propagation_delay
    violations = tuple(
        metric for metric in metrics.per_tx
        if metric.d_tx > config.d_block * metric.n_until_included + limit_extra
    )
    return BoundReport(len(metrics.per_tx), violations, config.d_block, config.propagation_delay)


SUMMARY_COLUMNS = (
    ("d_tx_ms", "per_tx", "d_tx"),
    ("n_until_included", "per_tx", "n_until_included"),
    ("request_ms", "per_job", "request_ms"),
    ("approve_ms", "per_job", "approve_ms"),
    ("request_approve_ms", "per_job", "request_approve_ms"),
    ("response_ms", "per_job", "response_ms"),
    ("all_phase_ms", "per_job", "all_phase_ms"),
)


def summary_row(quantity: str, values: Sequence[float]) -> SummaryRow:
    data = np.asarray(values, dtype=float)
    return SummaryRow(quantity, int(data.size), float(data.mean()), float(data.std()),
                      float(data.min()), float(data.max()))


def summarize(metrics: SimMetrics) -> List[SummaryRow]:
    """mean / stddev / min / max for every measured quantity, fixed order"""
    rows = []
    for quantity, source, attribute in SUMMARY_COLUMNS:
        values = [getattr(item, attribute) for item in getattr(metrics, source)]
        if values:
            rows.append(summary_row(quantity, values))
    return rows


def summarize_job_rows(rows: Sequence[Dict[str, str]]) -> List[SummaryRow]:
    """Summary of per-job CSV rows as read back by read_job_csv"""
    out = []
    for column in JOB_CSV_HEADER[1:]:
        values = [int(row[column]) for row in rows]
        if values:
            out.append(summary_row(column, values))
    return out


# -- output formats -----------------------------------------------------------

def write_job_csv(out: IO[str], metrics: SimMetrics) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(JOB_CSV_HEADER)
    for metric in metrics.per_job:
        writer.writerow(metric.row())


def write_tx_csv(out: IO[str], metrics: SimMetrics) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TX_CSV_HEADER)
    for metric in metrics.per_tx:
        writer.writerow(metric.row())


def read_job_csv(source: IO[str]) -> List[Dict[str, str]]:
    reader = csv.DictReader(source)
    if reader.fieldnames != JOB_CSV_HEADER:
        raise ValueError(f"Unexpected job CSV header: {reader.fieldnames}")
    return list(reader)


def job_csv_text(metrics: SimMetrics) -> str:
    buffer = io.StringIO()
    write_job_csv(buffer, metrics)
    return buffer.getvalue()


def render_summary_text(rows: Sequence[SummaryRow]) -> str:
    header = ("quantity", "count", "mean", "stddev", "min", "max")
    body = [(row.quantity, str(row.count), f"{row.mean:.1f}", f"{row.stddev:.1f}",
             f"{row.min:.1f}", f"{row.max:.1f}") for row in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = []
    for line in [header] + body:
        cells = [line[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(line[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def summary_to_json(rows: Sequence[SummaryRow]) -> str:
    return json.dumps([asdict(row) for row in rows], indent=2, sort_keys=True) + "\n"


def summary_from_json(text: str) -> List[SummaryRow]:
    return [SummaryRow(**row) for row in json.loads(text)]
