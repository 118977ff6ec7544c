#!/usr/bin/env python3
"""
Print client and print server.

The client posts a CreateJob request and then polls the contract state until
its job is approved and printed. The server polls for jobs addressed to its
printer, approves the ones whose model blob verifies, prints them one at a
time on a simulated printer and posts the response. Neither agent shares state
with the other; they only submit transactions and read contract state.
"""

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Protocol, Set, Tuple

from . import contract
from .blobstore import BlobStore, verify as verify_blob
from .contract import (ApproveJob, ContractCall, ContractState, CreateJob, JobId, RequestRecord,
                       RespondJob, call_job_id, describe_call)
from .encoding import Address, Hash32, to_hex
from .errors import ConfigError, ContractRejection, TransactionRejected
from .identity import KeyPair
from .ledger import Chain, Receipt, Transaction, VerificationReport, verify_chain

logger = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL_MS = 1000


class Clock(Protocol):
    def now(self) -> int: ...


class LedgerEndpoint(Protocol):
    """What an agent may do with the chain"""

    def submit_transaction(self, tx: Transaction) -> Hash32: ...

    def read_state(self) -> ContractState: ...

    def next_nonce(self, sender: bytes) -> int: ...

    def receipt(self, tx_hash: bytes) -> Optional[Receipt]: ...


class Phase(enum.IntEnum):
    SUBMITTED = 0
    AWAITING_APPROVAL = 1
    AWAITING_RESPONSE = 2
    DONE = 3
    FAILED = 4


@dataclass
class ClientJob:
    request: RequestRecord
    job_id: JobId
    tx_hash: Optional[Hash32] = None
    phase: Phase = Phase.SUBMITTED
    failure: Optional[str] = None
    phase_timestamps: Dict[Phase, int] = field(default_factory=dict)

    @property
    def finished(self) -> bool:
        return self.phase in (Phase.DONE, Phase.FAILED)

    def advance(self, phase: Phase, now: int) -> None:
        """Move forward to `phase`, stamping any phases passed on the way"""
        if self.finished:
            raise ValueError(f"Job {self.job_id} already finished as {self.phase.name}")
        if phase == Phase.FAILED:
            self.phase = Phase.FAILED
            self.phase_timestamps[Phase.FAILED] = now
            return
        if phase < self.phase:
            raise ValueError(f"Cannot move job back from {self.phase.name} to {phase.name}")
        for step in range(self.phase + 1, phase + 1):
            self.phase_timestamps[Phase(step)] = now
        self.phase = phase

    def fail(self, reason: str, now: int) -> None:
        self.failure = reason
        self.advance(Phase.FAILED, now)

    def elapsed(self, phase: Phase) -> Optional[int]:
        if phase not in self.phase_timestamps:
            return None
        return self.phase_timestamps[phase] - self.phase_timestamps[Phase.SUBMITTED]


@dataclass(frozen=True)
class PrinterModel:
    """Fixed duration, or base + ms_per_byte * model size"""

    kind: str = "fixed"
    fixed_ms: int = 1000
    ms_per_byte: float = 0.0
    base_ms: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed", "per-byte"):
            raise ConfigError(f"Unknown printer model kind: {self.kind}")
        if self.kind == "fixed" and self.fixed_ms <= 0:
            raise ConfigError("Fixed print duration must be positive")
        if self.kind == "per-byte" and (self.ms_per_byte < 0 or self.base_ms < 0
                                        or (self.ms_per_byte == 0 and self.base_ms == 0)):
            raise ConfigError("Per-byte print duration must be positive")

    @classmethod
    def fixed(cls, ms: int) -> "PrinterModel":
        return cls(kind="fixed", fixed_ms=ms)

    @classmethod
    def per_byte(cls, ms_per_byte: float, base_ms: int) -> "PrinterModel":
        return cls(kind="per-byte", fixed_ms=0, ms_per_byte=ms_per_byte, base_ms=base_ms)

    @classmethod
    def parse(cls, text: str) -> "PrinterModel":
        """'fixed:<ms>' or 'per-byte:<ms_per_byte>:<base_ms>'"""
        parts = text.split(":")
        try:
            if parts[0] == "fixed" and len(parts) == 2:
                return cls.fixed(int(parts[1]))
            if parts[0] == "per-byte" and len(parts) == 3:
                return cls.per_byte(float(parts[1]), int(parts[2]))
        except ValueError as e:
            raise ConfigError(f"Invalid printer model {text!r}: {e}")
        raise ConfigError(f"Invalid printer model {text!r}")

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.fixed_ms}"
        return f"per-byte:{self.ms_per_byte}:{self.base_ms}"

    def duration(self, model_size: int) -> int:
        if self.kind == "fixed":
            return self.fixed_ms
        return max(1, int(round(self.base_ms + self.ms_per_byte * model_size)))


@dataclass
class ServerLoop:
    printer_address: Address
    poll_interval: int = DEFAULT_POLL_INTERVAL_MS
    print_queue: Deque[JobId] = field(default_factory=deque)
    printing: Optional[Tuple[JobId, int]] = None


class PrintClient:
    def __init__(self, keypair: KeyPair, endpoint: LedgerEndpoint, store: BlobStore, clock: Clock,
                 approval_timeout_ms: Optional[int] = None):
        self.keypair = keypair
        self.endpoint = endpoint
        self.store = store
        self.clock = clock
        self.approval_timeout_ms = approval_timeout_ms

    @property
    def address(self) -> Address:
        return self.keypair.address

    def submit(self, printer: Address, model: bytes) -> ClientJob:
        """Store the model, then post a CreateJob request for it"""
        model_hash = self.store.put(model)
        now = self.clock.now()
        request = RequestRecord(fabricator=self.address, printer=Address(printer), model_hash=model_hash, date=now)
        job = ClientJob(request=request, job_id=request.job_id, phase_timestamps={Phase.SUBMITTED: now})
        tx = Transaction.create(self.keypair, self.endpoint.next_nonce(self.address), CreateJob(request), now)
        try:
            job.tx_hash = self.endpoint.submit_transaction(tx)
        except TransactionRejected as e:
            logger.warning("Request for job %s rejected by the ledger: %s", job.job_id, e)
            job.fail(e.reason, now)
            return job
        logger.info("Submitted job %s to printer %s", job.job_id, request.printer)
        return job

    def poll(self, job: ClientJob) -> ClientJob:
        if job.finished:
            return job
        now = self.clock.now()
        record = contract.get_job(self.endpoint.read_state(), job.job_id)
        if record is None:
            receipt = self.endpoint.receipt(job.tx_hash) if job.tx_hash is not None else None
            if receipt is not None and not receipt.ok:
                logger.warning("Request for job %s failed on chain: %s", job.job_id, receipt.reason)
                job.fail(receipt.reason, now)
                return job
        elif record.printed:
            job.advance(Phase.DONE, now)
            logger.info("Job %s printed at %s", job.job_id, record.print_date)
            return job
        elif record.approved:
            if job.phase < Phase.AWAITING_RESPONSE:
                job.advance(Phase.AWAITING_RESPONSE, now)
            return job
        elif job.phase == Phase.SUBMITTED:
            job.advance(Phase.AWAITING_APPROVAL, now)

        if self.approval_timeout_ms is not None and job.phase < Phase.AWAITING_RESPONSE \
                and now - job.phase_timestamps[Phase.SUBMITTED] > self.approval_timeout_ms:
            logger.warning("Job %s not approved within %d ms", job.job_id, self.approval_timeout_ms)
            job.fail("timeout", now)
        return job


class PrintServer:
    def __init__(self, keypair: KeyPair, endpoint: LedgerEndpoint, store: BlobStore, clock: Clock,
                 printer: PrinterModel, poll_interval: int = DEFAULT_POLL_INTERVAL_MS):
        self.keypair = keypair
        self.endpoint = endpoint
        self.store = store
        self.clock = clock
        self.printer = printer
        self.loop = ServerLoop(printer_address=keypair.address, poll_interval=poll_interval)
        self.handled: Set[JobId] = set()
        self.incidents: Dict[JobId, str] = {}
        self.approval_detected: Dict[JobId, int] = {}
        self.approvals: Dict[JobId, Hash32] = {}
        self.responses: Dict[JobId, Hash32] = {}

    @property
    def address(self) -> Address:
        return self.keypair.address

    def _send(self, call: ContractCall) -> Optional[Hash32]:
        now = self.clock.now()
        tx = Transaction.create(self.keypair, self.endpoint.next_nonce(self.address), call, now)
        try:
            return self.endpoint.submit_transaction(tx)
        except TransactionRejected as e:
            logger.warning("Ledger rejected %s for job %s: %s", describe_call(call), call_job_id(call), e)
            return None

    def poll(self) -> ServerLoop:
        """Approve new jobs whose model verifies and queue them for printing"""
        state = self.endpoint.read_state()
        for job_id in contract.pending_jobs_for(state, self.address):
            if job_id in self.handled:
                continue
            model_hash = state.jobs[job_id].request.model_hash
            blob = self.store.get(model_hash)
            if not verify_blob(model_hash, blob):
                if job_id not in self.incidents:
                    reason = "model missing" if blob is None else "model digest mismatch"
                    logger.warning("Not approving job %s: %s (%s)", job_id, reason, model_hash.hex0x())
                    self.incidents[job_id] = reason
                continue
            tx_hash = self._send(ApproveJob(job_id))
            if tx_hash is None:
                continue
            self.approvals[job_id] = tx_hash
            self.incidents.pop(job_id, None)
            self.handled.add(job_id)
            self.loop.print_queue.append(job_id)
            logger.info("Approved job %s", job_id)
        # approved earlier (for instance by a previous run) but never answered
        for job_id, record in state.history():
            if record.request.printer == self.address and record.approved and not record.printed \
                    and job_id not in self.handled:
                self.handled.add(job_id)
                self.loop.print_queue.append(job_id)
        return self.loop

    def print_step(self) -> ServerLoop:
        """Finish the running print or start the next approved one"""
        now = self.clock.now()
        if self.loop.printing is not None:
            job_id, ends_at = self.loop.printing
            if now < ends_at:
                return self.loop
            tx_hash = self._send(RespondJob(job_id, now))
            if tx_hash is not None:
                self.responses[job_id] = tx_hash
                logger.info("Printed job %s, response %s", job_id, to_hex(tx_hash))
            self.loop.printing = None

        while self.loop.printing is None and self.loop.print_queue:
            job_id = self.loop.print_queue[0]
            record = contract.get_job(self.endpoint.read_state(), job_id)
            if record is None or not record.approved:
                break
            self.loop.print_queue.popleft()
            if record.printed:
                continue
            self.approval_detected[job_id] = now
            blob = self.store.get(record.request.model_hash) or b""
            self.loop.printing = (job_id, now + self.printer.duration(len(blob)))
            logger.debug("Printing job %s until %d", job_id, self.loop.printing[1])
        return self.loop


@dataclass(frozen=True)
class AuditEntry:
    phase: str
    tx_hash: Hash32
    height: int
    timestamp: int
    sender: Address

    def to_dict(self) -> Dict:
        return {
            "phase": self.phase,
            "tx_hash": to_hex(self.tx_hash),
            "height": self.height,
            "timestamp": self.timestamp,
            "sender": to_hex(self.sender),
        }


@dataclass(frozen=True)
class AuditTrail:
    job_id: JobId
    entries: Tuple[AuditEntry, ...]
    rejected: Tuple[Tuple[AuditEntry, str], ...]
    verification: VerificationReport

    @property
    def chain_ok(self) -> bool:
        return self.verification.ok

    def to_dict(self) -> Dict:
        return {
            "job_id": self.job_id.hex0x(),
            "entries": [entry.to_dict() for entry in self.entries],
            "rejected": [dict(entry.to_dict(), reason=reason) for entry, reason in self.rejected],
            "chain_ok": self.chain_ok,
            "verification": self.verification.describe(),
        }


def audit_job(chain: Chain, job_id: bytes) -> Optional[AuditTrail]:
    """History of one job from the canonical chain, plus a full chain check"""
    entries: List[AuditEntry] = []
    rejected: List[Tuple[AuditEntry, str]] = []
    for block in chain.canonical_blocks():
        receipts = chain.block_receipts(block.block_hash)
        for tx, receipt in zip(block.transactions, receipts):
            try:
                call = tx.call
            except (ContractRejection, ValueError):
                continue
            if call_job_id(call) != job_id:
                continue
            entry = AuditEntry(describe_call(call), tx.tx_hash, block.height, block.timestamp, tx.sender)
            if receipt.ok:
                entries.append(entry)
            else:
                rejected.append((entry, receipt.reason))
    if not entries or entries[0].phase != "create":
        return None
    return AuditTrail(JobId(job_id), tuple(entries), tuple(rejected), verify_chain(chain))
