"""Deterministic discrete-event simulation of the quantum-secured ledger.

One event loop (a heap ordered by ``(time_ms, insertion counter)``) hosts the
nodes, their authenticated channels, the QKD refills and the consensus
round clock. Every ``block_interval`` the nodes run one interactive
consistency instance over their unconfirmed pools: round ``r`` opens at
``t0 + (r - 1) * round_deadline`` and anything that has not arrived by
``t0 + r * round_deadline`` counts as missing. After ``m + 1`` rounds each
node resolves the vector, builds the block and appends it.

A node that runs out of key defers its frames (block-and-retry); deferred
consensus batches jump ahead of deferred transaction broadcasts and are
discarded once their round has closed.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .auth import Tag
from .channel import AuthFrame, Channel, FrameRejected
from .consensus import (
    DEFAULT,
    SILENT,
    ConsistencyVector,
    OMProcess,
    PrivateValue,
    apply_strategy,
    decode_batch,
    encode_batch,
    resolve_round,
)
from .keypool import KeyExhausted
from .ledger import Chain, DecodeError, Transaction, build_block, verify_chain
from .qkdsim import QKDLink, keystream_bits
from .scenario import Scenario, derive_seed

log = logging.getLogger(__name__)

KIND_TXN = 0x01
KIND_CONSENSUS = 0x02
KIND_NAMES = {KIND_TXN: "txn", KIND_CONSENSUS: "consensus"}


class EventLoop:
    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._counter = 0
        self.executed = 0

    def at(self, time_ms: int, fn, *args) -> None:
        if time_ms < self.now:
            raise ValueError(f"cannot schedule at {time_ms} ms, clock is at {self.now} ms")
        heapq.heappush(self._queue, (time_ms, self._counter, fn, args))
        self._counter += 1

    def run(self, until: int | None = None) -> None:
        while self._queue and (until is None or self._queue[0][0] <= until):
            time_ms, _, fn, args = heapq.heappop(self._queue)
            self.now = time_ms
            fn(*args)
            self.executed += 1


# --------------------------------------------------------------------------
# adversary hooks


class Adversary:
    """Interception points for a Byzantine node; the base class is honest."""

    def __init__(self, node: "Node", params: dict, rng: np.random.Generator):
        self.node = node
        self.params = params
        self.rng = rng

    def active(self) -> bool:
        return True

    def sends_transactions(self) -> bool:
        return True

    def consensus_strategy(self):
        return None

    def on_start(self) -> None:
        pass


class Equivocator(Adversary):
    """Sends different versions of one transaction to different peers.

    With ``consensus = "split"`` it also tells each peer, in round 1, a
    private value containing the version that peer received.
    """

    def __init__(self, node, params, rng):
        super().__init__(node, params, rng)
        self.versions: dict[int, Transaction] = {}

    def consensus_strategy(self):
        if self.params.get("consensus", "split") != "split" or not self.versions:
            return None
        node = self.node
        told = {}
        base = [t for t in node.pool.values() if t.txid not in {v.txid for v in self.versions.values()}]
        for dst in node.sim.scenario.nodes:
            pool = base + ([self.versions[dst]] if dst in self.versions else [])
            told[dst] = PrivateValue.build(node.id, pool, node.chain).to_bytes()

        def strategy(rnd, path, dst, value):
            if rnd == 1:
                return told.get(dst, value)
            return value

        return strategy


class RelayLiar(Adversary):
    """Substitutes relayed values in rounds 2 and later."""

    def consensus_strategy(self):
        rule = self.params.get("rule", "corrupt")
        own = self.node.ic.own_value if self.node.ic else DEFAULT

        def strategy(rnd, path, dst, value):
            if rnd == 1:
                return value
            if rule == "default":
                return DEFAULT
            if rule == "drop":
                return SILENT
            if rule == "own":
                return own
            return _corrupt(value)

        return strategy


class Silent(Adversary):
    def active(self) -> bool:
        return self.node.sim.loop.now < _ms_param(self.params.get("from", 0))

    def sends_transactions(self) -> bool:
        return self.active()

    def consensus_strategy(self):
        if self.active():
            return None
        return lambda rnd, path, dst, value: SILENT


class RandomByzantine(Adversary):
    """Per-message random choice of honest, DEFAULT, silence, corruption or its own value."""

    def consensus_strategy(self):
        rng = self.rng
        own = self.node.ic.own_value if self.node.ic else DEFAULT

        def strategy(rnd, path, dst, value):
            choice = int(rng.integers(5))
            if choice == 0:
                return value
            if choice == 1:
                return DEFAULT
            if choice == 2:
                return SILENT
            if choice == 3:
                return _corrupt(value)
            return own

        return strategy


class TagForger(Adversary):
    """Honest in the protocol; injects frames with guessed tags on other nodes' links."""

    def on_start(self) -> None:
        sim = self.node.sim
        period = max(1, int(round(1000 / float(self.params.get("rate_per_s", 1.0)))))
        t = period
        while t <= sim.scenario.horizon_ms:
            sim.loop.at(t, self.forge)
            t += period

    def forge(self) -> None:
        sim = self.node.sim
        others = [i for i in sim.scenario.nodes if i != self.node.id]
        if len(others) < 2:
            return
        x, y = (int(v) for v in self.rng.choice(others, size=2, replace=False))
        channel = sim.channels[frozenset((x, y))]
        seq = channel.senders[(x, y)].next_seq
        payload = bytes([KIND_TXN]) + self.rng.bytes(32)
        tag = Tag(self.rng.integers(0, 2, sim.scenario.params.l_h, dtype=np.uint8))
        frame = AuthFrame(x, y, seq, payload, tag)
        sim.stats["forged_attempts"] += 1
        sim.loop.at(sim.loop.now + sim.scenario.latency_ms, sim.deliver, frame, True)


ADVERSARIES = {
    "equivocate": Equivocator,
    "lie-in-relay": RelayLiar,
    "silent": Silent,
    "random": RandomByzantine,
    "tag-forge": TagForger,
}


def _corrupt(value):
    if value is DEFAULT or not value:
        return b"\x00forged"
    return value[:-1] + bytes([value[-1] ^ 0x01])


def _ms_param(value) -> int:
    return int(round(float(value) * 1000))


# --------------------------------------------------------------------------
# nodes


class Node:
    def __init__(self, sim: "Simulation", node_id: int):
        self.sim = sim
        self.id = node_id
        sc = sim.scenario
        self.chain = Chain.from_grants(sc.genesis, sc.hash_bits)
        self.pool: dict[bytes, Transaction] = {}
        self.queues: dict[int, dict[int, deque]] = defaultdict(lambda: {KIND_CONSENSUS: deque(), KIND_TXN: deque()})
        self.adversary: Adversary | None = None
        self.ic: OMProcess | None = None
        self.ic_height = None
        self.ic_round = 0
        self.vectors: dict[int, ConsistencyVector] = {}
        self.outcomes: dict[int, object] = {}
        self.append_errors: list[str] = []

    @property
    def honest(self) -> bool:
        return self.adversary is None

    @property
    def peers(self):
        return [i for i in self.sim.scenario.nodes if i != self.id]

    # ---- sending

    def send(self, peer: int, kind: int, payload: bytes, meta=None) -> None:
        queue = self.queues[peer][kind]
        if kind == KIND_TXN and queue:
            queue.append((payload, meta))
            self.sim.stats["deferred_sends"] += 1
            return
        if not self._try_send(peer, kind, payload):
            queue.append((payload, meta))
            self.sim.stats["deferred_sends"] += 1

    def _try_send(self, peer: int, kind: int, payload: bytes) -> bool:
        sim = self.sim
        sender = sim.channels[frozenset((self.id, peer))].senders[(self.id, peer)]
        before = sender.pool.consumed_total
        try:
            frame = sender.send(bytes([kind]) + payload)
        except KeyExhausted:
            return False
        used = sender.pool.consumed_total - before
        instance = (self.ic_height, self.ic_round) if kind == KIND_CONSENSUS else None
        sim.record_send(self.id, peer, kind, frame, used, instance)
        sim.loop.at(sim.loop.now + sim.scenario.latency_ms, sim.deliver, frame, False)
        return True

    def flush(self, peer: int) -> None:
        queues = self.queues[peer]
        consensus = queues[KIND_CONSENSUS]
        while consensus:
            payload, meta = consensus[0]
            if meta != (self.ic_height, self.ic_round):
                consensus.popleft()
                self.sim.stats["stale_dropped"] += 1
                continue
            if not self._try_send(peer, KIND_CONSENSUS, payload):
                return
            consensus.popleft()
        txns = queues[KIND_TXN]
        while txns:
            payload, _ = txns[0]
            if not self._try_send(peer, KIND_TXN, payload):
                return
            txns.popleft()

    # ---- transactions

    def _select_refs(self, amount: int):
        locked = {ref for t in self.pool.values() if t.sender == self.id for ref in t.refs}
        refs, total = [], 0
        for ref, value in self.chain.unspent_of(self.id):
            if ref in locked:
                continue
            refs.append(ref)
            total += value
            if total >= amount:
                return tuple(refs)
        return None

    def create_transaction(self, receiver: int, amount: int) -> Transaction | None:
        if self.adversary is not None and not self.adversary.sends_transactions():
            return None
        refs = self._select_refs(amount)
        if refs is None:
            self.sim.stats["unfunded_skipped"] += 1
            return None
        txn = Transaction(self.id, receiver, amount, self.sim.loop.now, refs)
        self.pool[txn.txid] = txn
        self.sim.created.append((txn, self.id, None))
        raw = txn.to_bytes()
        for peer in self.peers:
            self.send(peer, KIND_TXN, raw)
        return txn

    def equivocate(self, versions: dict) -> None:
        amount = max(a for _, a in versions.values())
        refs = self._select_refs(amount)
        if refs is None:
            self.sim.stats["unfunded_skipped"] += 1
            return
        adv = self.adversary
        for peer in sorted(versions):
            receiver, amt = versions[peer]
            txn = Transaction(self.id, receiver, amt, self.sim.loop.now, refs)
            if isinstance(adv, Equivocator):
                adv.versions[peer] = txn
            self.sim.created.append((txn, self.id, peer))
            if peer != self.id:
                self.send(peer, KIND_TXN, txn.to_bytes())

    # ---- receiving

    def on_payload(self, src: int, payload: bytes) -> None:
        if not payload:
            return
        kind, body = payload[0], payload[1:]
        if kind == KIND_TXN:
            try:
                txn = Transaction.from_bytes(body)
            except DecodeError:
                self.sim.stats["malformed"] += 1
                return
            if txn.sender != src:
                self.sim.stats["misattributed"] += 1
                return
            if txn.txid not in self.chain.txids:
                self.pool.setdefault(txn.txid, txn)
        elif kind == KIND_CONSENSUS:
            try:
                instance, rnd, msgs = decode_batch(body)
            except DecodeError:
                self.sim.stats["malformed"] += 1
                return
            if self.ic is None or instance != self.ic_height or rnd != self.ic_round:
                self.sim.stats["late_batches"] += 1
                return
            self.ic.deliver(rnd, src, msgs)
        else:
            self.sim.stats["malformed"] += 1

    # ---- consensus

    def start_consensus(self, height: int) -> None:
        sc = self.sim.scenario
        value = PrivateValue.build(self.id, self.pool.values(), self.chain)
        self.ic = OMProcess(self.id, sc.nodes, sc.m, sc.nodes, value.to_bytes())
        self.ic_height = height
        self.ic_round = 0

    def open_round(self, rnd: int) -> None:
        self.ic_round = rnd
        out = self.ic.outgoing(rnd)
        strategy = self.adversary.consensus_strategy() if self.adversary else None
        for dst in sorted(out):
            msgs = out[dst]
            if strategy is not None:
                msgs = apply_strategy(strategy, rnd, dst, msgs)
                if not msgs:
                    continue
            self.send(dst, KIND_CONSENSUS, encode_batch(self.ic_height, rnd, msgs), (self.ic_height, rnd))

    def finish_consensus(self) -> None:
        sc = self.sim.scenario
        height = self.ic_height
        vector = ConsistencyVector(sc.nodes, tuple(self.ic.decide(c) for c in sc.nodes))
        self.vectors[height] = vector
        outcome = resolve_round(vector, self.chain, sc.m)
        self.outcomes[height] = outcome
        block = build_block(self.chain, outcome.admitted)
        try:
            self.chain.append(block)
        except ValueError as exc:
            self.append_errors.append(str(exc))
            log.warning("node %d could not append block %d: %s", self.id, height, exc)
        else:
            log.debug("node %d appended block %d with %d txns", self.id, height, len(block.txns))
        self.ic = None
        self.ic_round = 0
        utxo = self.chain.utxo
        self.pool = {
            txid: t for txid, t in self.pool.items()
            if txid not in self.chain.txids and all(ref in utxo for ref in t.refs)
        }


# --------------------------------------------------------------------------
# simulation


@dataclass
class SimulationReport:
    data: dict
    chains: dict = field(default_factory=dict, repr=False)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.data, sort_keys=True, indent=indent) + "\n"

    @property
    def ok(self) -> bool:
        return all(self.data["invariants"].values())

    @property
    def digest(self) -> str:
        return self.data["digest"]

    def __getitem__(self, key):
        return self.data[key]


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = sc = scenario
        self.loop = EventLoop()
        self.stats: Counter = Counter()
        self.created: list = []
        self.key_use: dict = defaultdict(Counter)  # (src, dst) -> kind name -> bits
        self.frames: dict = defaultdict(Counter)  # (src, dst) -> kind name -> frames
        self.consensus_bits: dict = defaultdict(Counter)  # height -> (src, dst) -> bits
        self.bytes_by_kind: Counter = Counter()
        self.frame_bits: dict = defaultdict(Counter)  # kind name -> bits drawn per frame -> frames
        self.rounds_used: Counter = Counter()  # height -> highest round that carried a frame
        self.channels: dict[frozenset, Channel] = {}
        self.qkd: dict[tuple, QKDLink] = {}
        seed_bits = sc.direction_seed_bits
        for link in sc.links:
            a, b = link.link_id
            seeds = {
                (s, d): keystream_bits(derive_seed(sc.seed, "preshared", s, d), 0, seed_bits)
                for s, d in ((a, b), (b, a))
            }
            self.channels[frozenset((a, b))] = Channel(a, b, sc.params, seeds, sc.s_mode)
            self.qkd[(a, b)] = QKDLink(link)
        self.nodes = [Node(self, i) for i in sc.nodes]
        for i, behavior in sc.adversaries.items():
            rng = np.random.default_rng(derive_seed(sc.seed, "adversary", i))
            self.nodes[i].adversary = ADVERSARIES[behavior.kind](self.nodes[i], dict(behavior.params), rng)

    # ---- plumbing used by nodes

    def record_send(self, src, dst, kind, frame, bits, instance) -> None:
        name = KIND_NAMES[kind]
        self.key_use[(src, dst)][name] += bits
        self.frames[(src, dst)][name] += 1
        self.bytes_by_kind[name] += len(frame)
        self.frame_bits[name][bits] += 1
        if instance is not None:
            height, rnd = instance
            self.consensus_bits[height][(src, dst)] += bits
            self.rounds_used[height] = max(self.rounds_used[height], rnd)

    def deliver(self, frame: AuthFrame, forged: bool) -> None:
        channel = self.channels[frozenset((frame.sender, frame.receiver))]
        try:
            payload = channel.receive(frame.receiver, frame)
        except FrameRejected:
            return
        if forged:
            self.stats["forged_accepted"] += 1
        self.nodes[frame.receiver].on_payload(frame.sender, payload)

    def refill(self) -> None:
        t = Fraction(self.loop.now, 1000)
        for (a, b), link in self.qkd.items():
            ch = self.channels[frozenset((a, b))]
            if link.deliver_until(t, list(ch.pools((a, b))), list(ch.pools((b, a)))):
                self.nodes[a].flush(b)
                self.nodes[b].flush(a)

    # ---- schedule

    def _schedule(self) -> None:
        sc, loop = self.scenario, self.loop
        for ev in sc.transactions:
            loop.at(ev.time_ms, self.nodes[ev.sender].create_transaction, ev.receiver, ev.amount)
        for ev in sc.equivocations:
            loop.at(ev.time_ms, self.nodes[ev.sender].equivocate, dict(ev.versions))
        if sc.generator is not None:
            self._schedule_generator()
        t = sc.refill_interval_ms
        while t <= sc.horizon_ms:
            loop.at(t, self.refill)
            t += sc.refill_interval_ms
        for k in range(1, sc.blocks + 1):
            t0 = k * sc.block_interval_ms
            loop.at(t0, self._consensus_start, k)
            for r in range(1, sc.m + 2):
                loop.at(t0 + (r - 1) * sc.round_deadline_ms, self._open_round, r)
            loop.at(t0 + (sc.m + 1) * sc.round_deadline_ms, self._consensus_finish)
        for node in self.nodes:
            if node.adversary is not None:
                node.adversary.on_start()

    def _schedule_generator(self) -> None:
        sc, g = self.scenario, self.scenario.generator
        rng = np.random.default_rng(derive_seed(sc.seed, "generator"))
        senders = g.senders or sc.honest
        period = 60_000 / g.rate_per_min
        end = g.end_ms if g.end_ms is not None else sc.blocks * sc.block_interval_ms
        k = 0
        while True:
            t = g.start_ms + int(round(k * period))
            if t >= end:
                break
            sender = senders[k % len(senders)]
            receiver = int(rng.choice([i for i in sc.nodes if i != sender]))
            amount = int(rng.integers(g.min_amount, g.max_amount + 1))
            self.loop.at(t, self.nodes[sender].create_transaction, receiver, amount)
            k += 1

    def _consensus_start(self, height: int) -> None:
        for node in self.nodes:
            node.start_consensus(height)

    def _open_round(self, rnd: int) -> None:
        for node in self.nodes:
            node.open_round(rnd)

    def _consensus_finish(self) -> None:
        for node in self.nodes:
            node.finish_consensus()

    def run(self) -> SimulationReport:
        self._schedule()
        self.loop.run(until=self.scenario.horizon_ms)
        return self._report()

    # ---- reporting

    def _report(self) -> SimulationReport:
        sc = self.scenario
        name = sc.name_of
        honest = [self.nodes[i] for i in sc.honest]
        window_s = sc.horizon_ms / 1000
        heights = range(1, sc.blocks + 1)

        labels = {}
        counts = Counter()
        for txn, sender, peer in self.created:
            base = f"txn_{name(sender)}"
            if peer is None:
                counts[base] += 1
                labels[txn.txid] = base if counts[base] == 1 else f"{base}{counts[base]}"
            else:
                labels[txn.txid] = f"{base}{name(peer).lower()}"

        def describe(t: Transaction) -> dict:
            return {
                "txid": t.txid.hex(),
                "label": labels.get(t.txid, ""),
                "sender": name(t.sender),
                "receiver": name(t.receiver),
                "amount": t.amount,
                "timestamp_ms": t.timestamp,
            }

        blocks = []
        identity = True
        vectors_agree = True
        for h in heights:
            hashes = {name(n.id): n.chain.blocks[h].block_hash.hex() if n.chain.height >= h else None for n in honest}
            same = len(set(hashes.values())) == 1 and None not in hashes.values()
            identity &= same
            digests = {name(n.id): hashlib.sha256(n.vectors[h].to_bytes()).hexdigest() for n in honest if h in n.vectors}
            vectors_agree &= len(set(digests.values())) == 1
            entry = {"height": h, "block_hash": hashes, "identical": same, "vector_digest": digests}
            if honest and honest[0].chain.height >= h:
                ref = honest[0]
                outcome = ref.outcomes[h]
                entry["txns"] = [describe(t) for t in ref.chain.blocks[h].txns]
                entry["rejected"] = [
                    dict(describe(_find(self.created, txid)), reason=reason) if _find(self.created, txid)
                    else {"txid": txid.hex(), "reason": reason}
                    for txid, reason in sorted(outcome.rejected.items())
                ]
                entry["equivocators"] = sorted(name(i) for i in outcome.equivocators)
                entry["inconsistent_slots"] = [name(i) for i in outcome.inconsistent_slots]
                entry["rounds"] = self.rounds_used[h]
                entry["consensus_bits"] = {
                    f"{name(s)}->{name(d)}": bits for (s, d), bits in sorted(self.consensus_bits[h].items())
                }
            blocks.append(entry)

        directions = []
        conservation = True
        audit = True
        total_consumed = 0
        for link in sc.links:
            a, b = link.link_id
            ch = self.channels[frozenset((a, b))]
            for s, d in ((a, b), (b, a)):
                tx, rx = ch.pools((s, d))
                sender = ch.senders[(s, d)]
                receiver = ch.receivers[(s, d)]
                conservation &= tx.check_conservation() and rx.check_conservation()
                audit &= tx.consumed_total == sender.frames_sent * sc.params.l_h
                total_consumed += tx.consumed_total
                rec = tx.consumption_report(window_s).to_dict()
                rec["link"] = [name(s), name(d)]
                rec["classical"] = link.classical
                rec["key_rate_bps"] = link.key_rate
                rec["frames"] = dict(sorted(self.frames[(s, d)].items()))
                rec["bits_by_kind"] = dict(sorted(self.key_use[(s, d)].items()))
                rec["receiver_copy"] = {"consumed_total": rx.consumed_total, "depth": rx.depth}
                rec["accepted"] = receiver.accepted
                rec["auth_failures"] = receiver.auth_failures
                rec["replays"] = receiver.replays
                directions.append(rec)
        n_links = len(sc.links)
        network_bps = total_consumed / window_s if window_s else 0.0
        keys = {
            "l_h": sc.params.l_h,
            "l_M": sc.params.l_M,
            "window_s": window_s,
            "directions": directions,
            "consumed_total": total_consumed,
            "averages": {
                "network_bps": network_bps,
                "per_link_bps": network_bps / n_links if n_links else 0.0,
                "per_node_bps": network_bps / sc.n,
            },
        }

        verify = {name(n.id): _violation(verify_chain(n.chain)) for n in honest}
        auth_failures = sum(d["auth_failures"] for d in directions)
        traffic = dict(sorted(self.stats.items()))
        traffic.update({
            "frames": sum(sum(c.values()) for c in self.frames.values()),
            "bytes_by_kind": dict(sorted(self.bytes_by_kind.items())),
            "key_bits_per_frame": {
                kind: {str(bits): count for bits, count in sorted(c.items())}
                for kind, c in sorted(self.frame_bits.items())
            },
            "auth_failures": auth_failures,
            "replays": sum(d["replays"] for d in directions),
            "events": self.loop.executed,
        })
        invariants = {
            "honest_chain_identity": bool(identity),
            "honest_vectors_agree": bool(vectors_agree),
            "chains_verify": all(v is None for v in verify.values()),
            "appends_succeeded": not any(n.append_errors for n in honest),
            "key_conservation": bool(conservation),
            "key_audit": bool(audit),
        }
        data = {
            "scenario": sc.name,
            "seed": sc.seed,
            "nodes": list(sc.node_names),
            "honest": [name(i) for i in sc.honest],
            "adversaries": {name(i): b.kind for i, b in sorted(sc.adversaries.items())},
            "m": sc.m,
            "rounds_per_block": sc.m + 1,
            "blocks": blocks,
            "chain_heads": {name(n.id): n.chain.tip_hash.hex() for n in self.nodes},
            "balances": {name(n.id): {name(j): n.chain.balance(j) for j in sc.nodes} for n in honest[:1]},
            "keys": keys,
            "traffic": traffic,
            "verify": verify,
            "invariants": invariants,
        }
        data["digest"] = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()
        return SimulationReport(data, {name(n.id): n.chain for n in self.nodes})


def _find(created, txid):
    for txn, _, _ in created:
        if txn.txid == txid:
            return txn
    return None


def _violation(v):
    return None if v is None else {"height": v.height, "reason": v.reason}


def run(scenario: Scenario) -> SimulationReport:
    """Execute ``scenario`` to its horizon and return the report."""
    return Simulation(scenario).run()
