#!/usr/bin/env python3
"""
Print job registry contract.

A deterministic state machine over contract calls. It holds one Print Job
record per request, keyed by the digest of the request (the Print Job ID).
Every transition is pure: it returns a new ContractState or raises
ContractRejection and leaves the input untouched.
"""

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .encoding import ADDRESS_SIZE, DIGEST_SIZE, Address, Hash32, digest, from_hex, u64
from .errors import ContractRejection

# rejection reasons
UNKNOWN_JOB = "unknown-job"
SENDER_MISMATCH = "sender-mismatch"
DUPLICATE_JOB = "duplicate-job"
ALREADY_APPROVED = "already-approved"
NOT_THE_PRINTER = "not-the-printer"
NOT_APPROVED = "not-approved"
ALREADY_PRINTED = "already-printed"
MALFORMED_CALL = "malformed-call"

TAG_CREATE = 0x01
TAG_APPROVE = 0x02
TAG_RESPOND = 0x03


class JobId(Hash32):
    """Print Job ID: digest of the canonical request encoding"""


@dataclass(frozen=True)
class RequestRecord:
    fabricator: Address
    printer: Address
    model_hash: Hash32
    date: int

    def __post_init__(self):
        # normalise and length-check once
        object.__setattr__(self, "fabricator", Address(self.fabricator))
        object.__setattr__(self, "printer", Address(self.printer))
        object.__setattr__(self, "model_hash", Hash32(self.model_hash))
        if not 0 <= self.date < 2 ** 64:
            raise ContractRejection(MALFORMED_CALL, f"date out of range: {self.date}")

    def encode(self) -> bytes:
        return self.fabricator + self.printer + self.model_hash + u64(self.date)

    @property
    def job_id(self) -> JobId:
        return JobId(digest(self.encode()))

    def to_dict(self) -> Dict:
        return {
            "from": self.fabricator.hex0x(),
            "printer": self.printer.hex0x(),
            "model_hash": self.model_hash.hex0x(),
            "date": self.date,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RequestRecord":
        return cls(
            fabricator=Address.from_hex(data["from"]),
            printer=Address.from_hex(data["printer"]),
            model_hash=Hash32(from_hex(data["model_hash"])),
            date=int(data["date"]),
        )


@dataclass(frozen=True)
class PrintJobRecord:
    request: RequestRecord
    print_date: Optional[int] = None
    approved: bool = False
    printed: bool = False

    def to_dict(self) -> Dict:
        return {
            "request": self.request.to_dict(),
            "print_date": self.print_date,
            "approved": self.approved,
            "printed": self.printed,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PrintJobRecord":
        return cls(
            request=RequestRecord.from_dict(data["request"]),
            print_date=data.get("print_date"),
            approved=bool(data["approved"]),
            printed=bool(data["printed"]),
        )


@dataclass(frozen=True)
class CreateJob:
    request: RequestRecord

    def encode(self) -> bytes:
        return bytes([TAG_CREATE]) + self.request.encode()


@dataclass(frozen=True)
class ApproveJob:
    job_id: JobId

    def encode(self) -> bytes:
        return bytes([TAG_APPROVE]) + JobId(self.job_id)


@dataclass(frozen=True)
class RespondJob:
    job_id: JobId
    print_date: int

    def encode(self) -> bytes:
        return bytes([TAG_RESPOND]) + JobId(self.job_id) + u64(self.print_date)


ContractCall = Union[CreateJob, ApproveJob, RespondJob]

_CREATE_SIZE = 1 + 2 * ADDRESS_SIZE + DIGEST_SIZE + 8
_APPROVE_SIZE = 1 + DIGEST_SIZE
_RESPOND_SIZE = 1 + DIGEST_SIZE + 8


def decode_call(data: bytes) -> ContractCall:
    """Decode the wire form of a contract call"""
    if not data:
        raise ContractRejection(MALFORMED_CALL, "empty call payload")
    tag = data[0]
    if tag == TAG_CREATE and len(data) == _CREATE_SIZE:
        a = 1 + ADDRESS_SIZE
        b = a + ADDRESS_SIZE
        c = b + DIGEST_SIZE
        (date,) = struct.unpack(">Q", data[c:])
        return CreateJob(RequestRecord(Address(data[1:a]), Address(data[a:b]), Hash32(data[b:c]), date))
    if tag == TAG_APPROVE and len(data) == _APPROVE_SIZE:
        return ApproveJob(JobId(data[1:]))
    if tag == TAG_RESPOND and len(data) == _RESPOND_SIZE:
        (print_date,) = struct.unpack(">Q", data[1 + DIGEST_SIZE:])
        return RespondJob(JobId(data[1:1 + DIGEST_SIZE]), print_date)
    raise ContractRejection(MALFORMED_CALL, f"tag {tag:#04x} with {len(data)} bytes")


def describe_call(call: ContractCall) -> str:
    if isinstance(call, CreateJob):
        return "create"
    if isinstance(call, ApproveJob):
        return "approve"
    return "respond"


def call_job_id(call: ContractCall) -> JobId:
    if isinstance(call, CreateJob):
        return call.request.job_id
    return JobId(call.job_id)


@dataclass(frozen=True)
class ContractState:
    jobs: Dict[JobId, PrintJobRecord] = field(default_factory=dict)
    job_order: Tuple[JobId, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "jobs": [
                dict(job_id=job_id.hex0x(), **self.jobs[job_id].to_dict())
                for job_id in self.job_order
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict) -> "ContractState":
        jobs = {}
        order = []
        for entry in data["jobs"]:
            job_id = JobId.from_hex(entry["job_id"])
            jobs[job_id] = PrintJobRecord.from_dict(entry)
            order.append(job_id)
        return cls(jobs=jobs, job_order=tuple(order))

    def history(self) -> List[Tuple[JobId, PrintJobRecord]]:
        return [(job_id, self.jobs[job_id]) for job_id in self.job_order]

    def jobs_by(self, fabricator: Address) -> List[JobId]:
        return [job_id for job_id in self.job_order if self.jobs[job_id].request.fabricator == fabricator]


def _with_job(state: ContractState, job_id: JobId, record: PrintJobRecord) -> ContractState:
    jobs = dict(state.jobs)
    jobs[job_id] = record
    return ContractState(jobs=jobs, job_order=state.job_order)


def _existing(state: ContractState, job_id: bytes) -> PrintJobRecord:
    record = state.jobs.get(job_id)
    if record is None:
        raise ContractRejection(UNKNOWN_JOB, JobId(job_id).hex0x())
    return record


def create_job(state: ContractState, sender: Address, request: RequestRecord) -> Tuple[ContractState, JobId]:
    if sender != request.fabricator:
        raise ContractRejection(SENDER_MISMATCH, f"{Address(sender)} is not {request.fabricator}")
    job_id = request.job_id
    if job_id in state.jobs:
        raise ContractRejection(DUPLICATE_JOB, job_id.hex0x())
    jobs = dict(state.jobs)
    jobs[job_id] = PrintJobRecord(request=request)
    return ContractState(jobs=jobs, job_order=state.job_order + (job_id,)), job_id


def approve_job(state: ContractState, sender: Address, job_id: JobId) -> ContractState:
    record = _existing(state, job_id)
    if sender != record.request.printer:
        raise ContractRejection(NOT_THE_PRINTER, f"{Address(sender)} cannot approve")
    if record.approved:
        raise ContractRejection(ALREADY_APPROVED, JobId(job_id).hex0x())
    return _with_job(state, JobId(job_id), replace(record, approved=True))


def respond_job(state: ContractState, sender: Address, job_id: JobId, print_date: int) -> ContractState:
    record = _existing(state, job_id)
    if sender != record.request.printer:
        raise ContractRejection(NOT_THE_PRINTER, f"{Address(sender)} cannot respond")
    if record.printed:
        raise ContractRejection(ALREADY_PRINTED, JobId(job_id).hex0x())
    if not record.approved:
        raise ContractRejection(NOT_APPROVED, JobId(job_id).hex0x())
    return _with_job(state, JobId(job_id), replace(record, printed=True, print_date=print_date))


def apply(state: ContractState, sender: Address, call: Union[ContractCall, bytes]) -> ContractState:
    """Apply one contract call; raises ContractRejection and leaves state as is"""
    if isinstance(call, (bytes, bytearray)):
        call = decode_call(bytes(call))
    if isinstance(call, CreateJob):
        new_state, _ = create_job(state, sender, call.request)
        return new_state
    if isinstance(call, ApproveJob):
        return approve_job(state, sender, call.job_id)
    if isinstance(call, RespondJob):
        return respond_job(state, sender, call.job_id, call.print_date)
    raise ContractRejection(MALFORMED_CALL, f"unsupported call {type(call).__name__}")


def get_job(state: ContractState, job_id: bytes) -> Optional[PrintJobRecord]:
    return state.jobs.get(job_id)


def pending_jobs_for(state: ContractState, printer: Address) -> List[JobId]:
    return [
        job_id for job_id in state.job_order
        if state.jobs[job_id].request.printer == printer and not state.jobs[job_id].approved
    ]


def fold(calls: Iterable[Tuple[Address, Union[ContractCall, bytes]]],
         state: Optional[ContractState] = None) -> Tuple[ContractState, List[Optional[str]]]:
    """Replay (sender, call) pairs in order; returns the final state and one
    rejection reason (or None) per call"""
    state = state if state is not None else ContractState()
    outcomes: List[Optional[str]] = []
    for sender, call in calls:
        try:
            state = apply(state, sender, call)
            outcomes.append(None)
        except ContractRejection as rejection:
            outcomes.append(rejection.reason)
    return state, outcomes
