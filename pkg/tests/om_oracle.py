"""Reference oral-messages algorithm by direct recursion.

Shares nothing with ``qsb.consensus`` except the DEFAULT/SILENT sentinels
and the strategy signature ``(round, chronological path, dst, value)``.
"""

import hashlib
from collections import Counter

import numpy as np

from qsb.consensus import DEFAULT, SILENT


def strict_majority(values):
    value, count = Counter(values).most_common(1)[0]
    return value if 2 * count > len(values) else DEFAULT


def om(m, path, lieutenants, value, traitors):
    """Value each lieutenant settles on when ``path[-1]`` commands ``value``.

    ``path`` is the chronological chain of commanders so far; ``traitors`` maps
    node -> strategy.
    """
    commander = path[-1]
    rnd = len(path)
    received = {}
    for i in lieutenants:
        v = value
        if commander in traitors:
            v = traitors[commander](rnd, path, i, value)
        received[i] = DEFAULT if v is SILENT else v
    if m == 0:
        return received
    sub = {j: om(m - 1, path + (j,), [k for k in lieutenants if k != j], received[j], traitors)
           for j in lieutenants}
    return {
        i: strict_majority([received[i]] + [sub[j][i] for j in lieutenants if j != i])
        for i in lieutenants
    }


def oracle_broadcast(commander, value, m, nodes, traitors):
    out = om(m, (commander,), [i for i in nodes if i != commander], value, traitors)
    out[commander] = value
    return out


def oracle_vectors(nodes, values, m, traitors):
    per = {c: oracle_broadcast(c, values[c], m, nodes, traitors) for c in nodes}
    return {i: tuple(per[c][i] for c in nodes) for i in nodes}


def table_strategy(table):
    """Strategy from an explicit ``{(rnd, path, dst): value}`` table; honest elsewhere."""
    return lambda rnd, path, dst, value: table.get((rnd, path, dst), value)


def hashed_strategy(seed, domain):
    """Deterministic pseudo-random Byzantine behaviour keyed on each message."""

    def strategy(rnd, path, dst, value):
        key = repr((seed, rnd, path, dst)).encode()
        rng = np.random.default_rng(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))
        choice = int(rng.integers(5))
        if choice == 0:
            return value
        if choice == 1:
            return DEFAULT
        if choice == 2:
            return SILENT
        if choice == 3:
            return b"\xffgarbage"
        return domain[int(rng.integers(len(domain)))]

    return strategy
