"""Scenario files: declarative descriptions of a simulated network run.

A scenario is a JSON object. Times are seconds of simulated time; node
references use the names listed in ``nodes``. Minimal example::

    {
      "name": "two-txn",
      "nodes": ["A", "B", "C", "D"],
      "m": 1,
      "seed": 1,
      "genesis": {"A": 100, "B": 100, "C": 100, "D": 100},
      "link_defaults": {"key_rate": 100},
      "transactions": [{"time": 1.0, "sender": "A", "receiver": "B", "amount": 10}],
      "block_interval": 10,
      "blocks": 1
    }

See ``docs/scenario-schema.md`` for every field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .auth import ToeplitzParams
from .keypool import default_seed_bits
from .qkdsim import LinkConfig

ADVERSARY_KINDS = ("equivocate", "lie-in-relay", "silent", "tag-forge", "random")
RELAY_RULES = ("default", "corrupt", "own", "drop")


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending field or source line."""


@dataclass(frozen=True)
class AdversaryBehavior:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TxnEvent:
    time_ms: int
    sender: int
    receiver: int
    amount: int


@dataclass(frozen=True)
class EquivocationEvent:
    """``versions`` maps each recipient node to the (receiver, amount) it is told."""

    time_ms: int
    sender: int
    versions: dict


@dataclass(frozen=True)
class TxnGenerator:
    rate_per_min: float
    min_amount: int = 1
    max_amount: int = 1
    start_ms: int = 0
    end_ms: int | None = None
    senders: tuple = ()


@dataclass
class Scenario:
    name: str
    node_names: tuple
    m: int
    seed: int
    params: ToeplitzParams
    links: tuple
    genesis: dict
    transactions: tuple = ()
    equivocations: tuple = ()
    generator: TxnGenerator | None = None
    adversaries: dict = field(default_factory=dict)
    block_interval_ms: int = 10_000
    blocks: int = 1
    round_deadline_ms: int = 2_000
    latency_ms: int = 10
    refill_interval_ms: int = 1_000
    seed_bits: int | None = None
    s_mode: str = "per-direction"
    hash_bits: int = 256
    pinned_link_seeds: frozenset = frozenset()

    @property
    def n(self) -> int:
        return len(self.node_names)

    @property
    def nodes(self) -> tuple:
        return tuple(range(self.n))

    @property
    def honest(self) -> tuple:
        return tuple(i for i in self.nodes if i not in self.adversaries)

    @property
    def direction_seed_bits(self) -> int:
        return self.seed_bits if self.seed_bits is not None else default_seed_bits(self.params.l_h, self.params.l_M)

    @property
    def horizon_ms(self) -> int:
        return self.blocks * self.block_interval_ms + (self.m + 1) * self.round_deadline_ms

    def name_of(self, node: int) -> str:
        return self.node_names[node]

    def with_seed(self, seed: int) -> "Scenario":
        """Copy with a new master seed; link seeds not pinned in the file are re-derived."""
        import dataclasses

        links = []
        for link in self.links:
            if link.link_id not in self.pinned_link_seeds:
                link = dataclasses.replace(link, rng_seed=derive_seed(seed, "qkd", *link.link_id))
            links.append(link)
        return dataclasses.replace(self, seed=seed, links=tuple(links))


def derive_seed(master: int, label: str, *parts) -> int:
    text = ":".join([str(master), label, *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _ms(value, where: str) -> int:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
        raise ScenarioError(f"{where}: expected a non-negative number of seconds, got {value!r}")
    return int(round(value * 1000))


def _int(value, where: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ScenarioError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ScenarioError(f"{where}: missing required field '{key}'")
    return obj[key]


def parse_scenario(data: dict, source: str = "<scenario>") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a JSON object")
    names = _require(data, "nodes", "nodes")
    if not isinstance(names, list) or len(names) < 1 or not all(isinstance(x, str) for x in names):
        raise ScenarioError("nodes: expected a non-empty list of names")
    if len(set(names)) != len(names):
        raise ScenarioError("nodes: duplicate node names")
    if len(names) >= 0xFFFF:
        raise ScenarioError("nodes: too many nodes for 16-bit ids")
    index = {name: i for i, name in enumerate(names)}

    def node(ref, where):
        if ref not in index:
            raise ScenarioError(f"{where}: unknown node {ref!r}")
        return index[ref]

    n = len(names)
    m = _int(data.get("m", (n - 1) // 3), "m", 0)
    if n < 3 * m + 1:
        raise ScenarioError(f"m: n = {n} nodes cannot tolerate m = {m} (need n >= 3m + 1)")
    seed = _int(data.get("seed", 0), "seed", 0)
    if seed >= 2**64:
        raise ScenarioError("seed: must fit in 64 bits")

    auth = data.get("auth", {})
    try:
        params = ToeplitzParams(_int(auth.get("l_h", 40), "auth.l_h", 1), _int(auth.get("l_M", 2**16), "auth.l_M", 1))
    except ValueError as exc:
        raise ScenarioError(f"auth: {exc}") from None
    s_mode = auth.get("s_mode", "per-direction")
    if s_mode not in ("per-direction", "per-link"):
        raise ScenarioError(f"auth.s_mode: expected 'per-direction' or 'per-link', got {s_mode!r}")
    seed_bits = auth.get("seed_bits")
    if seed_bits is not None:
        seed_bits = _int(seed_bits, "auth.seed_bits", params.generator_bits)

    hash_bits = data.get("hash_bits", 256)
    if hash_bits not in (256, 512):
        raise ScenarioError(f"hash_bits: expected 256 or 512, got {hash_bits!r}")

    # links: explicit entries override defaults; the union must be a full mesh
    defaults = data.get("link_defaults")
    explicit = {}
    for k, entry in enumerate(data.get("links", [])):
        where = f"links[{k}]"
        pair = _require(entry, "nodes", where)
        if not isinstance(pair, list) or len(pair) != 2:
            raise ScenarioError(f"{where}.nodes: expected two node names")
        a, b = sorted((node(pair[0], f"{where}.nodes"), node(pair[1], f"{where}.nodes")))
        if a == b:
            raise ScenarioError(f"{where}.nodes: a link needs two distinct nodes")
        if (a, b) in explicit:
            raise ScenarioError(f"{where}: duplicate link {pair}")
        explicit[(a, b)] = (entry, where)
    links = []
    pinned = set()
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) in explicit:
                entry, where = explicit[(a, b)]
            elif defaults is not None:
                entry, where = defaults, "link_defaults"
            else:
                raise ScenarioError(f"links: no entry for {names[a]}-{names[b]} and no link_defaults")
            rate = _require(entry, "key_rate", where)
            if not isinstance(rate, (int, float)) or rate <= 0:
                raise ScenarioError(f"{where}.key_rate: must be a positive number of bits/s")
            metadata = dict(entry.get("metadata", {}))
            if "rng_seed" in entry and (a, b) in explicit:
                rng_seed = _int(entry["rng_seed"], f"{where}.rng_seed", 0)
                pinned.add((a, b))
            else:
                rng_seed = derive_seed(seed, "qkd", a, b)
            links.append(LinkConfig((a, b), rate, rng_seed, bool(entry.get("classical", False)), metadata))
    seeds = [l.rng_seed for l in links]
    if len(set(seeds)) != len(seeds):
        raise ScenarioError("links: rng_seed values must differ between links")

    genesis = {}
    for name, amt in _require(data, "genesis", "genesis").items():
        where = f"genesis.{name}"
        i = node(name, where)
        amounts = amt if isinstance(amt, list) else [amt]
        genesis[i] = [_int(a, where, 1) for a in amounts]

    txns = []
    for k, t in enumerate(data.get("transactions", [])):
        where = f"transactions[{k}]"
        txns.append(TxnEvent(
            _ms(_require(t, "time", where), f"{where}.time"),
            node(_require(t, "sender", where), f"{where}.sender"),
            node(_require(t, "receiver", where), f"{where}.receiver"),
            _int(_require(t, "amount", where), f"{where}.amount", 1),
        ))

    equivs = []
    for k, e in enumerate(data.get("equivocations", [])):
        where = f"equivocations[{k}]"
        sender = node(_require(e, "sender", where), f"{where}.sender")
        versions = {}
        for peer, v in _require(e, "versions", where).items():
            vw = f"{where}.versions.{peer}"
            versions[node(peer, vw)] = (node(_require(v, "receiver", vw), f"{vw}.receiver"),
                                        _int(_require(v, "amount", vw), f"{vw}.amount", 1))
        equivs.append(EquivocationEvent(_ms(_require(e, "time", where), f"{where}.time"), sender, versions))

    generator = None
    if "generator" in data:
        g = data["generator"]
        rate = _require(g, "rate_per_min", "generator")
        if not isinstance(rate, (int, float)) or rate <= 0:
            raise ScenarioError("generator.rate_per_min: must be positive")
        lo = _int(g.get("min_amount", 1), "generator.min_amount", 1)
        hi = _int(g.get("max_amount", lo), "generator.max_amount", lo)
        end = g.get("end")
        generator = TxnGenerator(
            float(rate), lo, hi, _ms(g.get("start", 0), "generator.start"),
            None if end is None else _ms(end, "generator.end"),
            tuple(node(s, "generator.senders") for s in g.get("senders", [])),
        )

    adversaries = {}
    for k, adv in enumerate(data.get("adversaries", [])):
        where = f"adversaries[{k}]"
        i = node(_require(adv, "node", where), f"{where}.node")
        if i in adversaries:
            raise ScenarioError(f"{where}.node: {names[i]} listed twice")
        behavior = dict(_require(adv, "behavior", where))
        kind = behavior.pop("kind", None)
        if kind not in ADVERSARY_KINDS:
            raise ScenarioError(f"{where}.behavior.kind: expected one of {ADVERSARY_KINDS}, got {kind!r}")
        _check_behavior(kind, behavior, f"{where}.behavior")
        adversaries[i] = AdversaryBehavior(kind, behavior)
    if len(adversaries) > m:
        raise ScenarioError(f"adversaries: {len(adversaries)} listed but m = {m}")
    for k, e in enumerate(equivs):
        if e.sender not in adversaries or adversaries[e.sender].kind != "equivocate":
            raise ScenarioError(f"equivocations[{k}].sender: node must be an 'equivocate' adversary")

    interval = _ms(data.get("block_interval", 10), "block_interval")
    deadline = _ms(data.get("round_deadline", 2), "round_deadline")
    latency = _ms(data.get("latency", 0.010), "latency")
    refill = _ms(data.get("refill_interval", 1), "refill_interval")
    if interval <= 0 or deadline <= 0 or refill <= 0:
        raise ScenarioError("block_interval, round_deadline and refill_interval must be positive")
    if latency >= deadline:
        raise ScenarioError("latency: must be below round_deadline")
    if (m + 1) * deadline >= interval:
        raise ScenarioError("round_deadline: all m + 1 rounds must finish within one block_interval")

    return Scenario(
        name=str(data.get("name", Path(source).stem)),
        node_names=tuple(names),
        m=m,
        seed=seed,
        params=params,
        links=tuple(links),
        genesis=genesis,
        transactions=tuple(txns),
        equivocations=tuple(equivs),
        generator=generator,
        adversaries=adversaries,
        block_interval_ms=interval,
        blocks=_int(data.get("blocks", 1), "blocks", 1),
        round_deadline_ms=deadline,
        latency_ms=latency,
        refill_interval_ms=refill,
        seed_bits=seed_bits,
        s_mode=s_mode,
        hash_bits=hash_bits,
        pinned_link_seeds=frozenset(pinned),
    )


def _check_behavior(kind: str, params: dict, where: str) -> None:
    if kind == "equivocate":
        mode = params.setdefault("consensus", "split")
        if mode not in ("split", "honest"):
            raise ScenarioError(f"{where}.consensus: expected 'split' or 'honest', got {mode!r}")
    elif kind == "lie-in-relay":
        rule = params.setdefault("rule", "corrupt")
        if rule not in RELAY_RULES:
            raise ScenarioError(f"{where}.rule: expected one of {RELAY_RULES}, got {rule!r}")
    elif kind == "tag-forge":
        rate = params.setdefault("rate_per_s", 1.0)
        if not isinstance(rate, (int, float)) or rate <= 0:
            raise ScenarioError(f"{where}.rate_per_s: must be positive")
    elif kind == "silent":
        _ms(params.setdefault("from", 0), f"{where}.from")


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a shipped scenario by name (``fig2``, ``fig2.json``)."""
    path = Path(path)
    if not path.exists():
        name = path.name if path.suffix == ".json" else path.name + ".json"
        shipped = resources.files("qsb") / "scenarios" / name
        if not shipped.is_file():
            raise ScenarioError(f"{path}: no such file or shipped scenario")
        text, source = shipped.read_text(), f"scenarios/{name}"
    else:
        text, source = path.read_text(), str(path)
    return loads_scenario(text, source)


def loads_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_scenario(data, source)


def shipped_scenarios() -> list[str]:
    folder = resources.files("qsb") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))
