#!/usr/bin/env python3
"""
Miniature proof-of-work blockchain carrying print job contract calls.

Blocks are hash-chained and mined to a leading-zero-bit target. The canonical
tip is the tip with the most cumulative work (sum of 2**difficulty), ties going
to the lexicographically smaller tip hash. Contract state is never stored: it is
the fold of the contract over the canonical transaction sequence, cached per
block.

Encodings are big-endian:
  transaction signing bytes = sender | nonce(8) | call | submitted_at(8)
  tx_hash                   = H(signing bytes | sender_key | signature)
  block header              = height(8) | prev_hash | timestamp(8)
                              | difficulty(4) | nonce(8) | H(tx hashes)
"""

import bisect
import json
import logging
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from . import contract
from .contract import ContractCall, ContractState
from .encoding import (ZERO_HASH, Address, Hash32, digest, from_hex, leading_zero_bits,
                       to_hex, u32, u64)
from .errors import (ChainLogError, ContractRejection, IdentityError, InvalidBlock,
                     MiningError, TransactionRejected)
from .identity import KeyPair, address_of, verify

logger = logging.getLogger(__name__)

DEFAULT_DIFFICULTY = 8
DEFAULT_MAX_BLOCK_TXS = 10
DEFAULT_MAX_NONCE_ATTEMPTS = 2 ** 32

# verification / rejection reasons
BAD_HEIGHT = "bad-height"
BROKEN_LINK = "broken-link"
TX_DIGEST_MISMATCH = "tx-digest-mismatch"
BAD_SIGNATURE = "bad-signature"
SENDER_KEY_MISMATCH = "sender-key-mismatch"
BLOCK_HASH_MISMATCH = "block-hash-mismatch"
INSUFFICIENT_WORK = "insufficient-work"
PARSE_ERROR = "parse-error"
MISSING_GENESIS = "missing-genesis"
NONCE_MISMATCH = "nonce-mismatch"
DUPLICATE_TX = "duplicate-tx"
FUTURE_TIMESTAMP = "future-timestamp"


@dataclass(frozen=True)
class Transaction:
    sender: Address
    nonce: int
    payload: bytes
    submitted_at: int
    sender_key: bytes
    signature: bytes
    tx_hash: Hash32

    @staticmethod
    def signing_bytes(sender: bytes, nonce: int, payload: bytes, submitted_at: int) -> bytes:
        return bytes(sender) + u64(nonce) + bytes(payload) + u64(submitted_at)

    @classmethod
    def create(cls, keypair: KeyPair, nonce: int, call: ContractCall, submitted_at: int) -> "Transaction":
        """Build and sign a transaction for a contract call"""
        sender = keypair.address
        payload = call.encode()
        body = cls.signing_bytes(sender, nonce, payload, submitted_at)
        signature = keypair.sign(digest(body))
        tx_hash = Hash32(digest(body + keypair.public_key + signature))
        return cls(sender, nonce, payload, submitted_at, keypair.public_key, signature, tx_hash)

    def signing_digest(self) -> bytes:
        return digest(self.signing_bytes(self.sender, self.nonce, self.payload, self.submitted_at))

    def compute_hash(self) -> bytes:
        body = self.signing_bytes(self.sender, self.nonce, self.payload, self.submitted_at)
        return digest(body + bytes(self.sender_key) + bytes(self.signature))

    @property
    def call(self) -> ContractCall:
        return contract.decode_call(self.payload)

    def check(self) -> Optional[str]:
        """First integrity problem of this transaction, or None"""
        try:
            if self.compute_hash() != bytes(self.tx_hash):
                return TX_DIGEST_MISMATCH
        except (struct.error, TypeError, ValueError):
            return TX_DIGEST_MISMATCH
        try:
            if address_of(self.sender_key) != self.sender:
                return SENDER_KEY_MISMATCH
        except IdentityError:
            return SENDER_KEY_MISMATCH
        if not verify(self.sender_key, self.signing_digest(), self.signature):
            return BAD_SIGNATURE
        return None

    def to_dict(self) -> Dict:
        return {
            "sender": to_hex(self.sender),
            "nonce": self.nonce,
            "call": to_hex(self.payload),
            "submitted_at": self.submitted_at,
            "sender_key": to_hex(self.sender_key),
            "signature": to_hex(self.signature),
            "tx_hash": to_hex(self.tx_hash),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Transaction":
        return cls(
            sender=Address(from_hex(data["sender"])),
            nonce=int(data["nonce"]),
            payload=from_hex(data["call"]),
            submitted_at=int(data["submitted_at"]),
            sender_key=from_hex(data["sender_key"]),
            signature=from_hex(data["signature"]),
            tx_hash=Hash32(from_hex(data["tx_hash"])),
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: Hash32
    timestamp: int
    difficulty: int
    nonce: int
    transactions: Tuple[Transaction, ...]
    block_hash: Hash32

    @staticmethod
    def tx_list_digest(transactions: Iterable[Transaction]) -> bytes:
        return digest(b"".join(bytes(tx.tx_hash) for tx in transactions))

    @staticmethod
    def header_prefix(height: int, prev_hash: bytes, timestamp: int, difficulty: int) -> bytes:
        return u64(height) + bytes(prev_hash) + u64(timestamp) + u32(difficulty)

    def compute_hash(self) -> bytes:
        prefix = self.header_prefix(self.height, self.prev_hash, self.timestamp, self.difficulty)
        return digest(prefix + u64(self.nonce) + self.tx_list_digest(self.transactions))

    @property
    def work(self) -> int:
        return 2 ** self.difficulty

    def to_dict(self) -> Dict:
        return {
            "height": self.height,
            "prev_hash": to_hex(self.prev_hash),
            "timestamp": self.timestamp,
            "difficulty": self.difficulty,
            "nonce": self.nonce,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "block_hash": to_hex(self.block_hash),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict) -> "Block":
        return cls(
            height=int(data["height"]),
            prev_hash=Hash32(from_hex(data["prev_hash"])),
            timestamp=int(data["timestamp"]),
            difficulty=int(data["difficulty"]),
            nonce=int(data["nonce"]),
            transactions=tuple(Transaction.from_dict(tx) for tx in data["transactions"]),
            block_hash=Hash32(from_hex(data["block_hash"])),
        )


def mine_block(height: int, prev_hash: bytes, timestamp: int, difficulty: int,
               transactions: Sequence[Transaction],
               max_attempts: int = DEFAULT_MAX_NONCE_ATTEMPTS) -> Block:
    """Search nonces until the block hash has `difficulty` leading zero bits"""
    prefix = Block.header_prefix(height, prev_hash, timestamp, difficulty)
    tx_digest = Block.tx_list_digest(transactions)
    for nonce in range(max_attempts):
        block_hash = digest(prefix + u64(nonce) + tx_digest)
        if leading_zero_bits(block_hash) >= difficulty:
            return Block(height, Hash32(prev_hash), timestamp, difficulty, nonce,
                         tuple(transactions), Hash32(block_hash))
    raise MiningError(f"No nonce below {max_attempts} meets difficulty {difficulty} at height {height}")


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_block: Optional[Hash32] = None
    height: Optional[int] = None
    reason: Optional[str] = None
    blocks_checked: int = 0

    def describe(self) -> str:
        if self.ok:
            return f"OK ({self.blocks_checked} blocks)"
        where = to_hex(self.first_bad_block) if self.first_bad_block is not None else "?"
        return f"FAILED at height {self.height} ({where}): {self.reason}"


def check_block(block: Block, parent: Optional[Block]) -> Optional[str]:
    """First problem of one block relative to its parent (None for genesis)"""
    if parent is None:
        if block.height != 0:
            return BAD_HEIGHT
        if bytes(block.prev_hash) != ZERO_HASH:
            return BROKEN_LINK
    else:
        if block.height != parent.height + 1:
            return BAD_HEIGHT
        if block.prev_hash != parent.block_hash:
            return BROKEN_LINK
    for tx in block.transactions:
        problem = tx.check()
        if problem:
            return problem
    try:
        if block.compute_hash() != bytes(block.block_hash):
            return BLOCK_HASH_MISMATCH
    except (struct.error, TypeError, ValueError):
        return BLOCK_HASH_MISMATCH
    if leading_zero_bits(block.block_hash) < block.difficulty:
        return INSUFFICIENT_WORK
    return None


def verify_blocks(blocks: Sequence[Block]) -> VerificationReport:
    """Verify blocks given parent-before-child (chain order or log order).

    Failures report the height the block should have (parent height + 1), not
    its stored height field, which may itself be the tampered value.
    """
    if not blocks:
        return VerificationReport(False, None, 0, MISSING_GENESIS, 0)
    seen: Dict[bytes, Block] = {}
    for index, block in enumerate(blocks):
        if index == 0:
            parent = None
            expected_height = 0
        else:
            parent = seen.get(bytes(block.prev_hash))
            if parent is None:
                return VerificationReport(False, block.block_hash, block.height, BROKEN_LINK, index)
            expected_height = parent.height + 1
        problem = check_block(block, parent)
        if problem:
            return VerificationReport(False, block.block_hash, expected_height, problem, index)
        seen[bytes(block.block_hash)] = block
    return VerificationReport(True, blocks_checked=len(blocks))


@dataclass(frozen=True)
class Receipt:
    tx_hash: Hash32
    ok: bool
    reason: Optional[str] = None


@dataclass
class MempoolEntry:
    tx: Transaction
    arrival_height: int


class Chain:
    """Block tree, fork choice, mempool and contract state reads.

    Writers are serialised by an internal lock; read_state returns immutable
    snapshots so readers never see a half-applied block.
    """

    def __init__(self, difficulty: int = DEFAULT_DIFFICULTY, max_block_txs: int = DEFAULT_MAX_BLOCK_TXS,
                 inclusion_skip: int = 1, genesis_timestamp: int = 0,
                 max_nonce_attempts: int = DEFAULT_MAX_NONCE_ATTEMPTS,
                 clock: Optional[Callable[[], int]] = None, genesis: Optional[Block] = None):
        if inclusion_skip < 1:
            raise ValueError("inclusion_skip must be at least 1")
        if max_block_txs < 0:
            raise ValueError("max_block_txs must not be negative")
        self.difficulty = difficulty
        self.max_block_txs = max_block_txs
        self.inclusion_skip = inclusion_skip
        self.max_nonce_attempts = max_nonce_attempts
        self.clock = clock

        self.blocks: Dict[bytes, Block] = {}
        self.tips: Set[Hash32] = set()
        self.mempool: List[MempoolEntry] = []
        self._work: Dict[bytes, int] = {}
        self._tx_index: Dict[bytes, List[Hash32]] = {}
        self._states: Dict[bytes, Tuple[ContractState, Tuple[Receipt, ...]]] = {}
        self._canonical: List[Hash32] = []
        self._canonical_nonces: Dict[bytes, int] = {}
        self._lock = threading.RLock()

        if genesis is None:
            genesis = mine_block(0, ZERO_HASH, genesis_timestamp, difficulty, (), max_nonce_attempts)
        self.genesis_hash = genesis.block_hash
        self.canonical_tip = genesis.block_hash
        self._insert(genesis)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block], validate: bool = True, **kwargs) -> "Chain":
        """Rebuild a chain from blocks in parent-before-child order.

        With validate=False blocks are trusted (only parent presence is
        required) so a tampered history can still be inspected and verified.
        """
        if not blocks:
            raise ChainLogError("empty chain log", 0)
        genesis = blocks[0]
        if validate:
            problem = check_block(genesis, None)
            if problem:
                raise InvalidBlock(problem, f"genesis {to_hex(genesis.block_hash)}")
        chain = cls(genesis=genesis, **kwargs)
        for block in blocks[1:]:
            if validate:
                chain.add_block(block)
            else:
                if bytes(block.prev_hash) not in chain.blocks:
                    raise InvalidBlock(BROKEN_LINK, f"parent of height {block.height} is missing")
                chain._insert(block)
        return chain

    def build_block(self, parent_hash: bytes, transactions: Sequence[Transaction], timestamp: int,
                    difficulty: Optional[int] = None) -> Block:
        """Mine a block on any known parent without adding it"""
        parent = self.blocks.get(bytes(parent_hash))
        if parent is None:
            raise InvalidBlock(BROKEN_LINK, f"unknown parent {to_hex(parent_hash)}")
        difficulty = self.difficulty if difficulty is None else difficulty
        return mine_block(parent.height + 1, parent.block_hash, timestamp, difficulty,
                          transactions, self.max_nonce_attempts)

    def add_block(self, block: Block) -> Hash32:
        """Validate and import a block (possibly on a side fork)"""
        with self._lock:
            if bytes(block.block_hash) in self.blocks:
                return block.block_hash
            parent = self.blocks.get(bytes(block.prev_hash))
            if parent is None:
                raise InvalidBlock(BROKEN_LINK, f"parent of height {block.height} is missing")
            problem = check_block(block, parent) or self._check_branch_order(block)
            if problem:
                raise InvalidBlock(problem, f"block {to_hex(block.block_hash)} at height {block.height}")
            self._insert(block)
            return self.canonical_tip

    def _check_branch_order(self, block: Block) -> Optional[str]:
        """Nonce order and replay check of a block against its own ancestors"""
        nonces: Dict[bytes, int] = {}
        seen: Set[bytes] = set()
        key = bytes(block.prev_hash)
        while key in self.blocks:
            ancestor = self.blocks[key]
            for tx in ancestor.transactions:
                nonces[bytes(tx.sender)] = nonces.get(bytes(tx.sender), 0) + 1
                seen.add(bytes(tx.tx_hash))
            if ancestor.height == 0:
                break
            key = bytes(ancestor.prev_hash)
        for tx in block.transactions:
            if bytes(tx.tx_hash) in seen:
                return DUPLICATE_TX
            if tx.nonce != nonces.get(bytes(tx.sender), 0):
                return NONCE_MISMATCH
            nonces[bytes(tx.sender)] = tx.nonce + 1
            seen.add(bytes(tx.tx_hash))
        return None

    def _insert(self, block: Block) -> None:
        with self._lock:
            key = bytes(block.block_hash)
            self.blocks[key] = block
            parent_work = self._work.get(bytes(block.prev_hash), 0)
            self._work[key] = parent_work + block.work
            self.tips.discard(block.prev_hash)
            self.tips.add(block.block_hash)
            for tx in block.transactions:
                self._tx_index.setdefault(bytes(tx.tx_hash), []).append(block.block_hash)
            previous = self.canonical_tip
            self.canonical_tip = self.choose_canonical()
            self._refresh_canonical(previous)

    # -- fork choice ------------------------------------------------------

    def cumulative_work(self, block_hash: bytes) -> int:
        return self._work[bytes(block_hash)]

    def choose_canonical(self) -> Hash32:
        """Tip with maximal cumulative work; ties go to the smaller hash"""
        return min(self.tips, key=lambda tip: (-self._work[bytes(tip)], bytes(tip)))

    def _refresh_canonical(self, previous_tip: bytes) -> None:
        tip = self.blocks[bytes(self.canonical_tip)]
        if self._canonical and bytes(tip.prev_hash) == bytes(previous_tip) \
                and len(self._canonical) == tip.height:
            self._canonical.append(tip.block_hash)
            self._count_nonces(tip)
            return
        if self._canonical and bytes(self._canonical[-1]) == bytes(tip.block_hash):
            return
        path: List[Hash32] = []
        block = tip
        while True:
            path.append(block.block_hash)
            if block.height == 0:
                break
            block = self.blocks[bytes(block.prev_hash)]
        path.reverse()
        if self._canonical:
            logger.info("Canonical tip moved to fork at height %d (%s)", tip.height, to_hex(tip.block_hash))
        self._canonical = path
        self._canonical_nonces = {}
        for block_hash in path:
            self._count_nonces(self.blocks[bytes(block_hash)])

    def _count_nonces(self, block: Block) -> None:
        for tx in block.transactions:
            sender = bytes(tx.sender)
            self._canonical_nonces[sender] = self._canonical_nonces.get(sender, 0) + 1

    # -- queries ----------------------------------------------------------

    @property
    def tip(self) -> Block:
        with self._lock:
            return self.blocks[bytes(self.canonical_tip)]

    def tip_height(self) -> int:
        return self.tip.height

    def canonical_blocks(self) -> List[Block]:
        with self._lock:
            return [self.blocks[bytes(block_hash)] for block_hash in self._canonical]

    def is_canonical(self, block: Block) -> bool:
        return block.height < len(self._canonical) and self._canonical[block.height] == block.block_hash

    def find_transaction(self, tx_hash: bytes) -> Optional[Tuple[Block, int]]:
        """Canonical block including tx_hash and its position in the block"""
        with self._lock:
            for block_hash in self._tx_index.get(bytes(tx_hash), ()):
                block = self.blocks[bytes(block_hash)]
                if self.is_canonical(block):
                    for index, tx in enumerate(block.transactions):
                        if tx.tx_hash == tx_hash:
                            return block, index
            return None

    def confirmations(self, tx_hash: bytes) -> Optional[int]:
        """Depth of the including canonical block; None when not included"""
        with self._lock:
            found = self.find_transaction(tx_hash)
            if found is None:
                return None
            return self.tip_height() - found[0].height + 1

    def next_nonce(self, sender: bytes) -> int:
        with self._lock:
            pending = sum(1 for entry in self.mempool if entry.tx.sender == sender)
            return self._canonical_nonces.get(bytes(sender), 0) + pending

    def in_mempool(self, tx_hash: bytes) -> bool:
        with self._lock:
            return any(entry.tx.tx_hash == tx_hash for entry in self.mempool)

    # -- transactions and blocks -------------------------------------------

    def submit_transaction(self, tx: Transaction) -> Hash32:
        with self._lock:
            if self.in_mempool(tx.tx_hash) or self.find_transaction(tx.tx_hash) is not None:
                raise TransactionRejected(DUPLICATE_TX, to_hex(tx.tx_hash))
            problem = tx.check()
            if problem:
                raise TransactionRejected(problem, to_hex(tx.tx_hash))
            expected = self.next_nonce(tx.sender)
            if tx.nonce != expected:
                raise TransactionRejected(NONCE_MISMATCH, f"expected nonce {expected}, got {tx.nonce}")
            if self.clock is not None and tx.submitted_at > self.clock():
                raise TransactionRejected(FUTURE_TIMESTAMP, f"submitted_at {tx.submitted_at} is ahead of the clock")
            self.mempool.append(MempoolEntry(tx, self.tip_height()))
            logger.debug("Accepted tx %s from %s nonce %d", to_hex(tx.tx_hash), to_hex(tx.sender), tx.nonce)
            return tx.tx_hash

    def eligible_transactions(self, height: int) -> List[Transaction]:
        """FIFO prefix of the mempool that may go into a block at `height`"""
        eligible = []
        for entry in self.mempool:
            if len(eligible) >= self.max_block_txs:
                break
            if height < entry.arrival_height + self.inclusion_skip:
                break
            eligible.append(entry.tx)
        return eligible

    def produce_block(self, now: int) -> Block:
        """Mine the eligible mempool prefix on top of the canonical tip"""
        with self._lock:
            height = self.tip_height() + 1
            txs = self.eligible_transactions(height)
            block = self.build_block(self.canonical_tip, txs, now)
            del self.mempool[:len(txs)]
            self._insert(block)
            logger.debug("Produced block %d with %d txs at %d", block.height, len(txs), now)
            return block

    # -- contract state -----------------------------------------------------

    def _state_at(self, block_hash: bytes) -> Tuple[ContractState, Tuple[Receipt, ...]]:
        pending: List[Block] = []
        key = bytes(block_hash)
        while key not in self._states:
            block = self.blocks[key]
            pending.append(block)
            if block.height == 0:
                state = ContractState()
                break
            key = bytes(block.prev_hash)
        else:
            state = self._states[key][0]
        for block in reversed(pending):
            receipts = []
            for tx in block.transactions:
                try:
                    state = contract.apply(state, tx.sender, tx.payload)
                    receipts.append(Receipt(tx.tx_hash, True))
                except ContractRejection as rejection:
                    receipts.append(Receipt(tx.tx_hash, False, rejection.reason))
            self._states[bytes(block.block_hash)] = (state, tuple(receipts))
        return self._states[bytes(block_hash)]

    def state_block(self, as_of: Optional[int] = None) -> Block:
        """Newest canonical block whose timestamp is not after as_of"""
        if as_of is None:
            return self.tip
        blocks = self.canonical_blocks()
        index = bisect.bisect_right([block.timestamp for block in blocks], as_of) - 1
        return blocks[max(index, 0)]

    def read_state(self, as_of: Optional[int] = None) -> ContractState:
        with self._lock:
            return self._state_at(self.state_block(as_of).block_hash)[0]

    def block_receipts(self, block_hash: bytes) -> Tuple[Receipt, ...]:
        with self._lock:
            return self._state_at(block_hash)[1]

    def receipt(self, tx_hash: bytes) -> Optional[Receipt]:
        with self._lock:
            found = self.find_transaction(tx_hash)
            if found is None:
                return None
            block, index = found
            return self._state_at(block.block_hash)[1][index]

    # -- persistence --------------------------------------------------------

    def save_log(self, path: str) -> None:
        """Write every block, parents first, one JSON object per line"""
        tmp_path = path + ".tmp"
        with open(tmp_path, "w") as f:
            for block in self.blocks.values():
                f.write(block.to_json() + "\n")
        os.replace(tmp_path, path)


def verify_chain(chain: Chain) -> VerificationReport:
    """Recheck every link, transaction and proof of work from genesis to tip"""
    return verify_blocks(chain.canonical_blocks())


def read_state(chain: Chain, as_of: Optional[int] = None) -> ContractState:
    return chain.read_state(as_of)


def append_log(path: str, block: Block) -> None:
    with open(path, "a") as f:
        f.write(block.to_json() + "\n")


def read_log(path: str) -> List[Block]:
    """Parse a chain log; raises ChainLogError naming the first bad line"""
    blocks = []
    with open(path, "rb") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            height = None
            try:
                data = json.loads(line.decode("utf-8"))
                if isinstance(data, dict) and isinstance(data.get("height"), int):
                    height = data["height"]
                blocks.append(Block.from_dict(data))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise ChainLogError(f"{PARSE_ERROR}: {e}", line_number, height)
            if not line.endswith(b"\n"):
                raise ChainLogError(f"{PARSE_ERROR}: truncated final line", line_number, height)
    return blocks


def load_log(path: str, validate: bool = True, **kwargs) -> Chain:
    return Chain.from_blocks(read_log(path), validate=validate, **kwargs)
