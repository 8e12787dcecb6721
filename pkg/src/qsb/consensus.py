"""Oral-messages broadcast and the interactive consistency vector.

Every node runs one OM(m) instance per commander. The instances proceed in
lock-step rounds and share frames: in each round a node sends one batch per
peer holding all of its relay messages for that round, so a full
interactive-consistency run takes ``m + 1`` rounds and ``m + 1`` frames per
link direction.

State is kept as an exponential-information-gathering tree keyed by the
chronological relay path ``(commander, r1, r2, ...)``; :class:`RelayMessage`
carries the same path most-recent-first on the wire. A node resolves path
``p`` as the strict majority of the value it received for ``p`` and the
resolutions of all one-step extensions ``p + (j,)`` with ``j`` not in ``p``
and not itself, bottoming out at length ``m + 1``. No strict majority, a
missing message, or a malformed one all give :data:`DEFAULT`.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .ledger import Chain, DecodeError, Transaction


class _Default:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DEFAULT"

    def __reduce__(self):
        return (_Default, ())


DEFAULT = _Default()


class ConfigurationError(ValueError):
    pass


def check_resilience(n: int, m: int) -> None:
    if m < 0:
        raise ConfigurationError(f"m must be >= 0, got {m}")
    if n < 3 * m + 1:
        raise ConfigurationError(f"oral messages needs n >= 3m + 1; got n={n}, m={m}")


def majority(values: Iterable) -> object:
    """Strict-majority element of ``values`` or :data:`DEFAULT`."""
    values = list(values)
    if not values:
        return DEFAULT
    value, count = Counter(values).most_common(1)[0]
    return value if 2 * count > len(values) else DEFAULT


# --------------------------------------------------------------------------
# private values

_PV_HEAD = struct.Struct(">HI")
_U32 = struct.Struct(">I")


@dataclass(frozen=True)
class PrivateValue:
    """A node's unconfirmed pool plus one admissibility bit per entry."""

    node: int
    pool: tuple
    opinions: tuple

    def __post_init__(self):
        if len(self.pool) != len(self.opinions):
            raise ValueError("one opinion bit is required per pool entry")

    @classmethod
    def build(cls, node: int, pool: Iterable[Transaction], chain: Chain) -> "PrivateValue":
        """Pool sorted by txid; each opinion checks the entry alone against ``chain``."""
        txns = sorted({t.txid: t for t in pool}.values(), key=lambda t: t.txid)
        state = chain.round_state()
        opinions = tuple(bool(state.check(t)) for t in txns)
        return cls(node, tuple(txns), opinions)

    def to_bytes(self) -> bytes:
        parts = [_PV_HEAD.pack(self.node, len(self.pool))]
        for t, ok in zip(self.pool, self.opinions):
            raw = t.to_bytes()
            parts += [_U32.pack(len(raw)), raw, b"\x01" if ok else b"\x00"]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrivateValue":
        try:
            node, count = _PV_HEAD.unpack_from(data, 0)
            off = _PV_HEAD.size
            pool, opinions = [], []
            for _ in range(count):
                (n,) = _U32.unpack_from(data, off)
                off += 4
                if off + n + 1 > len(data):
                    raise DecodeError("pool entry overruns value")
                pool.append(Transaction.from_bytes(data[off:off + n]))
                flag = data[off + n]
                if flag > 1:
                    raise DecodeError("opinion byte must be 0 or 1")
                opinions.append(bool(flag))
                off += n + 1
        except struct.error as exc:
            raise DecodeError(str(exc)) from None
        if off != len(data):
            raise DecodeError("trailing bytes after private value")
        return cls(node, tuple(pool), tuple(opinions))

    def opinion_of(self, txid: bytes) -> bool | None:
        for t, ok in zip(self.pool, self.opinions):
            if t.txid == txid:
                return ok
        return None


# --------------------------------------------------------------------------
# relay messages


@dataclass(frozen=True)
class RelayMessage:
    """``path[0]`` told the receiver that ``path[1]`` told it ... that ``path[-1]`` holds ``value``."""

    path: tuple
    value: object

    @property
    def chronological(self) -> tuple:
        return tuple(reversed(self.path))


_BATCH_HEAD = struct.Struct(">QBI")


def encode_batch(instance: int, rnd: int, messages: list[RelayMessage]) -> bytes:
    parts = [_BATCH_HEAD.pack(instance, rnd, len(messages))]
    for msg in messages:
        parts.append(bytes([len(msg.path)]))
        parts.append(struct.pack(f">{len(msg.path)}H", *msg.path))
        if msg.value is DEFAULT:
            parts.append(b"\x00")
        else:
            parts += [b"\x01", _U32.pack(len(msg.value)), msg.value]
    return b"".join(parts)


def decode_batch(data: bytes) -> tuple[int, int, list[RelayMessage]]:
    try:
        instance, rnd, count = _BATCH_HEAD.unpack_from(data, 0)
        off = _BATCH_HEAD.size
        out = []
        for _ in range(count):
            plen = data[off]
            off += 1
            path = struct.unpack_from(f">{plen}H", data, off)
            off += 2 * plen
            flag = data[off]
            off += 1
            if flag == 0:
                value = DEFAULT
            elif flag == 1:
                (n,) = _U32.unpack_from(data, off)
                off += 4
                value = bytes(data[off:off + n])
                if len(value) != n:
                    raise DecodeError("value overruns batch")
                off += n
            else:
                raise DecodeError(f"bad value flag {flag}")
            out.append(RelayMessage(tuple(path), value))
    except (struct.error, IndexError) as exc:
        raise DecodeError(f"malformed relay batch: {exc}") from None
    if off != len(data):
        raise DecodeError("trailing bytes after relay batch")
    return instance, rnd, out


# --------------------------------------------------------------------------
# per-node protocol state


class OMProcess:
    """One node's view of concurrent OM(m) instances, one per commander."""

    def __init__(self, me: int, nodes: Iterable[int], m: int, commanders: Iterable[int] | None = None,
                 own_value=DEFAULT):
        self.me = me
        self.nodes = tuple(sorted(nodes))
        self.m = m
        self.commanders = tuple(sorted(self.nodes if commanders is None else commanders))
        check_resilience(len(self.nodes), m)
        self.own_value = own_value
        self.tree: dict[tuple, object] = {}
        self.rejected = 0

    @property
    def rounds(self) -> int:
        return self.m + 1

    def outgoing(self, rnd: int) -> dict[int, list[RelayMessage]]:
        """Messages this node sends in round ``rnd`` (1-based), keyed by destination."""
        out: dict[int, list[RelayMessage]] = {}
        if rnd == 1:
            if self.me in self.commanders:
                for dst in self.nodes:
                    if dst != self.me:
                        out.setdefault(dst, []).append(RelayMessage((self.me,), self.own_value))
            return out
        # a missing value is relayed as DEFAULT, as if DEFAULT had been received
        for path in self._paths(rnd - 1):
            ext = path + (self.me,)
            msg = RelayMessage(tuple(reversed(ext)), self.tree.get(path, DEFAULT))
            for dst in self.nodes:
                if dst not in ext:
                    out.setdefault(dst, []).append(msg)
        return out

    def _paths(self, length: int) -> list[tuple]:
        """Chronological paths of ``length`` this node can receive: distinct ids, commander first, no ``me``."""
        paths = [(c,) for c in self.commanders if c != self.me]
        for _ in range(length - 1):
            paths = [p + (j,) for p in paths for j in self.nodes if j not in p and j != self.me]
        return sorted(paths)

    def deliver(self, rnd: int, src: int, messages: Iterable[RelayMessage]) -> None:
        """Record messages from ``src`` for round ``rnd``; malformed ones are counted and dropped."""
        for msg in messages:
            chron = msg.chronological
            ok = (
                len(chron) == rnd
                and chron[-1] == src
                and chron[0] in self.commanders
                and self.me not in chron
                and len(set(chron)) == len(chron)
                and all(j in self.nodes for j in chron)
                and chron not in self.tree
                and (msg.value is DEFAULT or isinstance(msg.value, bytes))
            )
            if ok:
                self.tree[chron] = msg.value
            else:
                self.rejected += 1

    def resolve(self, path: tuple) -> object:
        received = self.tree.get(path, DEFAULT)
        if len(path) == self.m + 1:
            return received
        votes = [received]
        for j in self.nodes:
            if j not in path and j != self.me:
                votes.append(self.resolve(path + (j,)))
        return majority(votes)

    def decide(self, commander: int) -> object:
        if commander == self.me:
            return self.own_value
        return self.resolve((commander,))

    def transcript(self) -> dict:
        """JSON-ready dump of everything received, for debugging and oracle comparison."""
        return {
            "node": self.me,
            "m": self.m,
            "rejected": self.rejected,
            "received": [
                {"path": list(path), "value": None if v is DEFAULT else v.hex()}
                for path, v in sorted(self.tree.items())
            ],
        }


# --------------------------------------------------------------------------
# adversaries and transports

SILENT = object()

# (round, chronological path including the sender, destination, honest value) -> value | SILENT
Strategy = Callable[[int, tuple, int, object], object]


def honest_strategy(rnd, path, dst, value):
    return value


def apply_strategy(strategy: Strategy, rnd: int, dst: int, messages: list[RelayMessage]) -> list[RelayMessage]:
    out = []
    for msg in messages:
        value = strategy(rnd, msg.chronological, dst, msg.value)
        if value is not SILENT:
            out.append(RelayMessage(msg.path, value))
    return out


class LocalTransport:
    """In-memory synchronous delivery with optional Byzantine strategies per node."""

    def __init__(self, adversaries: Mapping[int, Strategy] | None = None):
        self.adversaries = dict(adversaries or {})
        self.rounds = 0
        self.messages = 0
        self.batches = 0
        self.bytes = 0

    def exchange(self, rnd: int, outboxes: dict[int, dict[int, list[RelayMessage]]]):
        inboxes: dict[int, dict[int, list[RelayMessage]]] = {}
        self.rounds = max(self.rounds, rnd)
        for src in sorted(outboxes):
            strategy = self.adversaries.get(src)
            for dst in sorted(outboxes[src]):
                msgs = outboxes[src][dst]
                if strategy is not None:
                    msgs = apply_strategy(strategy, rnd, dst, msgs)
                    if not msgs:
                        continue
                self.batches += 1
                self.messages += len(msgs)
                self.bytes += len(encode_batch(0, rnd, msgs))
                inboxes.setdefault(dst, {})[src] = msgs
        return inboxes


class ChannelTransport(LocalTransport):
    """Delivers each round batch as one authenticated frame per direction."""

    def __init__(self, channels: Mapping[frozenset, "object"], adversaries=None, instance: int = 0):
        super().__init__(adversaries)
        self.channels = dict(channels)
        self.instance = instance
        self.frames = 0

    def exchange(self, rnd, outboxes):
        inboxes: dict[int, dict[int, list[RelayMessage]]] = {}
        self.rounds = max(self.rounds, rnd)
        for src in sorted(outboxes):
            strategy = self.adversaries.get(src)
            for dst in sorted(outboxes[src]):
                msgs = outboxes[src][dst]
                if strategy is not None:
                    msgs = apply_strategy(strategy, rnd, dst, msgs)
                    if not msgs:
                        continue
                link = self.channels[frozenset((src, dst))]
                frame = link.send(src, encode_batch(self.instance, rnd, msgs))
                payload = link.receive(dst, frame)
                _, got_rnd, got = decode_batch(payload)
                self.frames += 1
                self.batches += 1
                self.messages += len(got)
                self.bytes += len(frame)
                inboxes.setdefault(dst, {})[src] = got
        return inboxes


def _run_rounds(procs: dict[int, OMProcess], m: int, transport) -> None:
    for rnd in range(1, m + 2):
        outboxes = {i: p.outgoing(rnd) for i, p in procs.items()}
        inboxes = transport.exchange(rnd, outboxes)
        for dst, by_src in inboxes.items():
            if dst in procs:
                for src in sorted(by_src):
                    procs[dst].deliver(rnd, src, by_src[src])


def om_broadcast(commander: int, value, m: int, participants: Iterable[int], transport=None) -> dict[int, object]:
    """Run OM(m) with ``commander`` broadcasting ``value``; return each node's resolution.

    Byzantine behaviour is injected through the transport's per-node strategies.
    """
    nodes = tuple(sorted(participants))
    check_resilience(len(nodes), m)
    transport = LocalTransport() if transport is None else transport
    procs = {
        i: OMProcess(i, nodes, m, (commander,), value if i == commander else DEFAULT)
        for i in nodes
    }
    _run_rounds(procs, m, transport)
    return {i: procs[i].decide(commander) for i in nodes}


@dataclass(frozen=True)
class ConsistencyVector:
    nodes: tuple
    slots: tuple

    def __post_init__(self):
        if len(self.nodes) != len(self.slots):
            raise ValueError("exactly one slot per node is required")

    def __getitem__(self, node):
        return self.slots[self.nodes.index(node)]

    def is_inconsistent(self, node) -> bool:
        return self[node] is DEFAULT

    @property
    def inconsistent(self) -> tuple:
        return tuple(n for n, v in zip(self.nodes, self.slots) if v is DEFAULT)

    def to_bytes(self) -> bytes:
        parts = [_U32.pack(len(self.nodes))]
        for node, value in zip(self.nodes, self.slots):
            parts.append(struct.pack(">H", node))
            if value is DEFAULT:
                parts.append(b"\x00")
            else:
                parts += [b"\x01", _U32.pack(len(value)), value]
        return b"".join(parts)


@dataclass
class ICOutcome:
    vectors: dict
    rounds: int
    messages: int
    batches: int
    bytes: int


def interactive_consistency(nodes: Iterable[int], values: Mapping[int, object], m: int, transport=None) -> ICOutcome:
    """Every node broadcasts its value via OM(m); all instances share rounds.

    ``values`` maps node -> bytes or :class:`PrivateValue`. Returns the
    vector each node assembled (including Byzantine nodes; callers filter).
    """
    nodes = tuple(sorted(nodes))
    check_resilience(len(nodes), m)
    transport = LocalTransport() if transport is None else transport
    encoded = {i: _as_value(values.get(i, DEFAULT)) for i in nodes}
    procs = {i: OMProcess(i, nodes, m, nodes, encoded[i]) for i in nodes}
    _run_rounds(procs, m, transport)
    vectors = {i: ConsistencyVector(nodes, tuple(procs[i].decide(c) for c in nodes)) for i in nodes}
    return ICOutcome(vectors, transport.rounds, transport.messages, transport.batches, transport.bytes)


def _as_value(v):
    if isinstance(v, PrivateValue):
        return v.to_bytes()
    return v


# --------------------------------------------------------------------------
# block resolution


@dataclass
class RoundOutcome:
    admitted: list
    rejected: dict = field(default_factory=dict)
    equivocators: set = field(default_factory=set)
    inconsistent_slots: tuple = ()

    def admitted_txids(self) -> list[bytes]:
        return [t.txid for t in self.admitted]


EQUIVOCATION = "equivocation"
CONFLICTING_VERSION = "conflicting-version"
NO_MAJORITY = "opinion-minority"


def _decode_slots(vector: ConsistencyVector) -> dict[int, PrivateValue]:
    out = {}
    for node, raw in zip(vector.nodes, vector.slots):
        if raw is DEFAULT:
            continue
        try:
            out[node] = PrivateValue.from_bytes(raw)
        except (DecodeError, ValueError):
            continue
    return out


def resolve_round(vector: ConsistencyVector, chain: Chain, m: int | None = None) -> RoundOutcome:
    """Admissible transactions for the next block, as decided from ``vector``.

    Transactions from one sender that share a spent reference form a conflict
    group. A version held by more than ``m`` slots was received by at least
    one honest node, so its sender really sent it. If two or more such
    versions in a group were reported by different sets of slots, the sender
    equivocated and the whole group is dropped. Otherwise a transaction is
    admitted iff

    * a strict majority of all ``n`` slots hold it with opinion bit 1
      (``DEFAULT`` slots count against), and
    * it validates against ``chain`` after the already-admitted candidates,
      taken in txid order, so of two racing spends the lower txid wins.
    """
    n = len(vector.nodes)
    m = (n - 1) // 3 if m is None else m
    slots = _decode_slots(vector)
    seen: dict[bytes, Transaction] = {}
    holders: dict[bytes, set] = {}
    approvals: Counter = Counter()
    for node, pv in slots.items():
        for t, ok in zip(pv.pool, pv.opinions):
            seen.setdefault(t.txid, t)
            holders.setdefault(t.txid, set()).add(node)
            if ok:
                approvals[t.txid] += 1

    outcome = RoundOutcome([], inconsistent_slots=vector.inconsistent)

    # union-find over txids: same sender spending the same reference
    parent = {txid: txid for txid in seen}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    spenders: dict[tuple, bytes] = {}
    for txid in sorted(seen):
        t = seen[txid]
        for ref in t.refs:
            key = (t.sender, ref)
            if key in spenders:
                parent[find(txid)] = find(spenders[key])
            else:
                spenders[key] = txid
    contested: set[bytes] = set()
    groups: dict[bytes, list[bytes]] = {}
    for txid in sorted(seen):
        groups.setdefault(find(txid), []).append(txid)
    for members in groups.values():
        if len(members) == 1:
            continue
        contested.update(members)
        genuine = [t for t in members if len(holders[t]) > m]
        if len(genuine) > 1 and len({frozenset(holders[t]) for t in genuine}) > 1:
            for txid in members:
                outcome.rejected[txid] = EQUIVOCATION
            outcome.equivocators.add(seen[members[0]].sender)

    state = chain.round_state()
    for txid in sorted(seen):
        if txid in outcome.rejected:
            continue
        if 2 * approvals[txid] <= n:
            outcome.rejected[txid] = CONFLICTING_VERSION if txid in contested else NO_MAJORITY
            continue
        verdict = state.admit(seen[txid])
        if not verdict:
            outcome.rejected[txid] = verdict.reason.value
    outcome.admitted = sorted(state.admitted, key=lambda t: t.sort_key)
    return outcome
