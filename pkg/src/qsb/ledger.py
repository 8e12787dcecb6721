"""Transactions, blocks and the hash-chained ledger.

Funds follow a UTXO model. A transaction spends the outputs listed in
``refs`` and creates output 0 ``(receiver, amount)`` plus, when the spent
total ``v`` exceeds ``amount``, a change output 1 ``(sender, v - amount)``.
Genesis grants come from the reserved sender :data:`GENESIS` and spend
nothing.

Canonical encodings (big-endian, length-prefixed lists)::

    transaction: sender u16 | receiver u16 | amount u64 | timestamp u64
                 | n_refs u32 | n_refs * (txid 32 bytes | index u32)
    block:       height u64 | hash_len u8 | prev_hash | n_txns u32
                 | n_txns * (len u32 | transaction)
    record:      block | block_hash

``txid = SHA-256(transaction)``. ``block_hash = H(block)`` with ``H`` SHA-256
by default or SHA-512 when the chain is configured for 512-bit digests.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable

GENESIS = 0xFFFF
TXID_BYTES = 32

_TXN_HEAD = struct.Struct(">HHQQI")
_REF = struct.Struct(">32sI")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

_DIGESTS = {256: hashlib.sha256, 512: hashlib.sha512}


class DecodeError(ValueError):
    pass


class Reason(str, enum.Enum):
    BAD_AMOUNT = "bad-amount"
    NO_REFS = "no-refs"
    GENESIS_SENDER = "genesis-sender"
    DUPLICATE = "duplicate"
    UNKNOWN_REF = "unknown-ref"
    OWNERSHIP = "ownership-mismatch"
    INSUFFICIENT_FUNDS = "insufficient-funds"
    DOUBLE_SPEND = "double-spend"


def hash_bytes(data: bytes, digest_bits: int = 256) -> bytes:
    try:
        return _DIGESTS[digest_bits](data).digest()
    except KeyError:
        raise ValueError(f"digest width must be 256 or 512, got {digest_bits}") from None


@dataclass(frozen=True)
class Transaction:
    sender: int
    receiver: int
    amount: int
    timestamp: int
    refs: tuple = ()
    txid: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        refs = tuple((bytes(t), int(i)) for t, i in self.refs)
        object.__setattr__(self, "refs", refs)
        object.__setattr__(self, "txid", hashlib.sha256(self.to_bytes()).digest())

    @property
    def is_genesis(self) -> bool:
        return self.sender == GENESIS

    def to_bytes(self) -> bytes:
        parts = [_TXN_HEAD.pack(self.sender, self.receiver, self.amount, self.timestamp, len(self.refs))]
        parts.extend(_REF.pack(t, i) for t, i in self.refs)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        txn, used = cls._decode(data, 0)
        if used != len(data):
            raise DecodeError("trailing bytes after transaction")
        return txn

    @classmethod
    def _decode(cls, data: bytes, offset: int):
        try:
            sender, receiver, amount, ts, n = _TXN_HEAD.unpack_from(data, offset)
            offset += _TXN_HEAD.size
            if offset + n * _REF.size > len(data):
                raise DecodeError("reference list overruns buffer")
            refs = []
            for _ in range(n):
                refs.append(_REF.unpack_from(data, offset))
                offset += _REF.size
        except struct.error as exc:
            raise DecodeError(str(exc)) from None
        return cls(sender, receiver, amount, ts, tuple(refs)), offset

    @property
    def sort_key(self):
        return (self.timestamp, self.txid)

    def to_json(self) -> dict:
        return {
            "txid": self.txid.hex(),
            "sender": self.sender,
            "receiver": self.receiver,
            "amount": self.amount,
            "timestamp": self.timestamp,
            "refs": [[t.hex(), i] for t, i in self.refs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Transaction":
        txn = cls(obj["sender"], obj["receiver"], obj["amount"], obj["timestamp"],
                  tuple((bytes.fromhex(t), i) for t, i in obj["refs"]))
        if "txid" in obj and bytes.fromhex(obj["txid"]) != txn.txid:
            raise DecodeError(f"recorded txid {obj['txid'][:12]} does not match content")
        return txn

    def short(self) -> str:
        return self.txid.hex()[:12]


def genesis_grant(node: int, amount: int, index: int = 0) -> Transaction:
    """Allocation of ``amount`` to ``node``; ``index`` (stored as the timestamp) keeps repeated grants distinct."""
    return Transaction(GENESIS, node, amount, index, ())


def block_content(height: int, prev_hash: bytes, txns: Iterable[Transaction]) -> bytes:
    txns = list(txns)
    parts = [_U64.pack(height), bytes([len(prev_hash)]), prev_hash, _U32.pack(len(txns))]
    for t in txns:
        raw = t.to_bytes()
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def hash_block(content: bytes, digest_bits: int = 256) -> bytes:
    """Digest of canonical block bytes."""
    return hash_bytes(content, digest_bits)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txns: tuple
    block_hash: bytes

    @classmethod
    def create(cls, height: int, prev_hash: bytes, txns: Iterable[Transaction], digest_bits: int = 256) -> "Block":
        txns = tuple(txns)
        return cls(height, prev_hash, txns, hash_block(block_content(height, prev_hash, txns), digest_bits))

    def content(self) -> bytes:
        return block_content(self.height, self.prev_hash, self.txns)

    def to_record(self) -> bytes:
        return self.content() + self.block_hash

    @classmethod
    def from_record(cls, data: bytes, digest_bits: int = 256) -> "Block":
        size = digest_bits // 8
        try:
            (height,) = _U64.unpack_from(data, 0)
            hlen = data[8]
            prev = data[9:9 + hlen]
            if len(prev) != hlen:
                raise DecodeError("truncated prev_hash")
            off = 9 + hlen
            (count,) = _U32.unpack_from(data, off)
            off += 4
            txns = []
            for _ in range(count):
                (n,) = _U32.unpack_from(data, off)
                off += 4
                if off + n > len(data):
                    raise DecodeError("transaction overruns record")
                txns.append(Transaction.from_bytes(data[off:off + n]))
                off += n
        except (struct.error, IndexError) as exc:
            raise DecodeError(f"malformed block record: {exc}") from None
        block_hash = data[off:]
        if len(block_hash) != size:
            raise DecodeError(f"expected {size}-byte block hash, found {len(block_hash)}")
        return cls(height, prev, tuple(txns), block_hash)

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "block_hash": self.block_hash.hex(),
            "txns": [t.to_json() for t in self.txns],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Block":
        return cls(obj["height"], bytes.fromhex(obj["prev_hash"]),
                   tuple(Transaction.from_json(t) for t in obj["txns"]),
                   bytes.fromhex(obj["block_hash"]))


@dataclass(frozen=True)
class Verdict:
    reason: Reason | None = None

    @property
    def admissible(self) -> bool:
        return self.reason is None

    def __bool__(self):
        return self.admissible


ADMISSIBLE = Verdict()


class RoundState:
    """UTXO overlay for validating a sequence of transactions in one round.

    Tracks outputs created and spent by transactions admitted so far without
    touching the underlying chain.
    """

    def __init__(self, chain: "Chain"):
        self.chain = chain
        self.created: dict[tuple, tuple] = {}
        self.spent: set[tuple] = set()
        self.txids: set[bytes] = set()
        self.admitted: list[Transaction] = []

    def lookup(self, ref):
        if ref in self.created:
            return self.created[ref]
        return self.chain.utxo.get(ref)

    def check(self, txn: Transaction) -> Verdict:
        if txn.amount < 1:
            return Verdict(Reason.BAD_AMOUNT)
        if txn.is_genesis:
            return Verdict(Reason.GENESIS_SENDER)
        if not txn.refs:
            return Verdict(Reason.NO_REFS)
        if txn.txid in self.txids or txn.txid in self.chain.txids:
            return Verdict(Reason.DUPLICATE)
        if len(set(txn.refs)) != len(txn.refs):
            return Verdict(Reason.DOUBLE_SPEND)
        total = 0
        for ref in txn.refs:
            if ref in self.spent:
                return Verdict(Reason.DOUBLE_SPEND)
            out = self.lookup(ref)
            if out is None:
                return Verdict(Reason.UNKNOWN_REF)
            owner, value = out
            if owner != txn.sender:
                return Verdict(Reason.OWNERSHIP)
            total += value
        if total < txn.amount:
            return Verdict(Reason.INSUFFICIENT_FUNDS)
        return ADMISSIBLE

    def admit(self, txn: Transaction) -> Verdict:
        verdict = self.check(txn)
        if verdict:
            self._apply(txn)
        return verdict

    def _apply(self, txn: Transaction) -> None:
        total = 0
        for ref in txn.refs:
            total += self.lookup(ref)[1]
            self.spent.add(ref)
        for ref, out in transaction_outputs(txn, total).items():
            self.created[ref] = out
        self.txids.add(txn.txid)
        self.admitted.append(txn)


def transaction_outputs(txn: Transaction, spent_total: int) -> dict:
    outs = {(txn.txid, 0): (txn.receiver, txn.amount)}
    if not txn.is_genesis and spent_total > txn.amount:
        outs[(txn.txid, 1)] = (txn.sender, spent_total - txn.amount)
    return outs


class AppendError(ValueError):
    def __init__(self, height: int, reason: str):
        self.height = height
        self.reason = reason
        super().__init__(f"block {height}: {reason}")


class Chain:
    """Append-only block list with its derived UTXO set."""

    def __init__(self, genesis: Block, digest_bits: int = 256):
        self.digest_bits = digest_bits
        self.blocks: list[Block] = []
        self.utxo: dict[tuple, tuple] = {}
        self.txids: set[bytes] = set()
        problem = _check_genesis(genesis, digest_bits)
        if problem:
            raise AppendError(0, problem)
        self._apply_genesis(genesis)

    @classmethod
    def from_grants(cls, grants: dict, digest_bits: int = 256) -> "Chain":
        return cls(make_genesis(grants, digest_bits), digest_bits)

    def _apply_genesis(self, block: Block) -> None:
        for t in block.txns:
            self.utxo.update(transaction_outputs(t, 0))
            self.txids.add(t.txid)
        self.blocks.append(block)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash

    def round_state(self) -> RoundState:
        return RoundState(self)

    def balance(self, node: int) -> int:
        return sum(v for owner, v in self.utxo.values() if owner == node)

    def total_supply(self) -> int:
        return sum(v for _, v in self.utxo.values())

    def unspent_of(self, node: int) -> list:
        """Outputs owned by ``node`` in deterministic (txid, index) order."""
        return sorted((ref, v) for ref, (owner, v) in self.utxo.items() if owner == node)

    def append(self, block: Block) -> "Chain":
        problem = self._check_link(block)
        if problem:
            raise AppendError(block.height, problem)
        state = self.round_state()
        for t in block.txns:
            verdict = state.admit(t)
            if not verdict:
                raise AppendError(block.height, f"transaction {t.short()} inadmissible: {verdict.reason.value}")
        for ref in state.spent:
            del self.utxo[ref]
        self.utxo.update(state.created)
        self.txids |= state.txids
        self.blocks.append(block)
        return self

    def _check_link(self, block: Block) -> str | None:
        if block.height != len(self.blocks):
            return f"height {block.height} does not extend chain of height {self.height}"
        if block.prev_hash != self.tip_hash:
            return "prev_hash does not match tip"
        if hash_block(block.content(), self.digest_bits) != block.block_hash:
            return "block_hash does not match content"
        keys = [t.sort_key for t in block.txns]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            return "transactions not strictly sorted by (timestamp, txid)"
        return None

    def export_jsonl(self) -> str:
        return "".join(json.dumps(b.to_json(), sort_keys=True) + "\n" for b in self.blocks)


def make_genesis(grants: dict, digest_bits: int = 256) -> Block:
    """Genesis block from ``{node: amount}`` or ``{node: [amount, ...]}``."""
    txns = []
    for node, amounts in grants.items():
        amounts = [amounts] if isinstance(amounts, int) else list(amounts)
        txns += [genesis_grant(node, a, i) for i, a in enumerate(amounts)]
    txns.sort(key=lambda t: t.sort_key)
    return Block.create(0, bytes(digest_bits // 8), txns, digest_bits)


def _check_genesis(block: Block, digest_bits: int) -> str | None:
    if block.height != 0:
        return "genesis height must be 0"
    if block.prev_hash != bytes(digest_bits // 8):
        return "genesis prev_hash must be all zeros"
    if hash_block(block.content(), digest_bits) != block.block_hash:
        return "block_hash does not match content"
    keys = [t.sort_key for t in block.txns]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        return "transactions not strictly sorted by (timestamp, txid)"
    for t in block.txns:
        if not t.is_genesis or t.refs or t.amount < 1:
            return f"non-grant transaction {t.short()} in genesis"
    return None


def validate_transaction(chain: Chain, pending: Iterable[Transaction], txn: Transaction) -> Verdict:
    """Check ``txn`` against ``chain`` after the already-accepted ``pending`` txns.

    ``pending`` is replayed in the given order; it must itself be admissible.
    """
    state = chain.round_state()
    for p in pending:
        if not state.admit(p):
            raise ValueError(f"pending transaction {p.short()} is itself inadmissible")
    return state.check(txn)


def build_block(chain: Chain, admissible: Iterable[Transaction]) -> Block:
    """Deterministic next block: transactions sorted by (timestamp, txid)."""
    unique = {t.txid: t for t in admissible}
    txns = sorted(unique.values(), key=lambda t: t.sort_key)
    return Block.create(chain.height + 1, chain.tip_hash, txns, chain.digest_bits)


def append_block(chain: Chain, block: Block) -> Chain:
    return chain.append(block)


@dataclass(frozen=True)
class Violation:
    height: int
    reason: str


def verify_chain(blocks, digest_bits: int | None = None) -> Violation | None:
    """Replay ``blocks`` from genesis; return the first violation or ``None``.

    ``blocks`` may be a :class:`Chain` or a list of :class:`Block`.
    """
    if isinstance(blocks, Chain):
        digest_bits = blocks.digest_bits if digest_bits is None else digest_bits
        blocks = blocks.blocks
    digest_bits = 256 if digest_bits is None else digest_bits
    blocks = list(blocks)
    if not blocks:
        return Violation(0, "empty chain")
    try:
        replay = Chain(blocks[0], digest_bits)
    except AppendError as exc:
        return Violation(0, exc.reason)
    for block in blocks[1:]:
        expected = replay.height + 1
        try:
            replay.append(block)
        except AppendError as exc:
            return Violation(expected, exc.reason)
    return None


def chain_records(chain: Chain) -> list[bytes]:
    return [b.to_record() for b in chain.blocks]


def verify_records(records: list[bytes], digest_bits: int = 256) -> Violation | None:
    """Decode binary block records and verify them, reporting undecodable records as violations."""
    blocks = []
    for h, rec in enumerate(records):
        try:
            blocks.append(Block.from_record(rec, digest_bits))
        except DecodeError as exc:
            found = verify_chain(blocks, digest_bits) if blocks else None
            return found or Violation(h, f"malformed record: {exc}")
    return verify_chain(blocks, digest_bits)


def load_jsonl(text: str) -> list[Block]:
    blocks = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            blocks.append(Block.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise DecodeError(f"line {lineno}: {exc}") from None
    return blocks
