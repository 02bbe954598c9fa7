"""Greedy equivalence search over binary variables with a BIC score.

The search state is a CPDAG stored as a PDAG matrix (``m[a, b] = 1`` and
``m[b, a] = 0`` for a -> b, both set for a - b).  Each step picks the best
valid insert (forward phase) or delete (backward phase), applies it, then
re-completes the graph by extending to a DAG and taking its CPDAG.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ._validation import check_binary_data
from .exceptions import SearchError
from .graph import Cpdag, LatentDag, dag_to_cpdag

__all__ = ["BicScore", "ges", "pdag_to_dag"]


class BicScore:
    """Decomposable BIC for binary data, cached per (node, parent set).

    ``score(y, pa) = sum N_{pa,y} log(N_{pa,y} / N_pa) - 0.5 log(N) 2^{|pa|}``
    (one free parameter per parent configuration).
    """

    def __init__(self, data):
        self.data = check_binary_data(data, "data").astype(np.int64)
        self.n = self.data.shape[0]
        self.n_vars = self.data.shape[1]
        self._cache = {}

    def local(self, node, parents):
        key = (node, frozenset(parents))
        if key in self._cache:
            return self._cache[key]
        pa = sorted(parents)
        idx = np.zeros(self.n, dtype=np.int64)
        for i, p in enumerate(pa):
            idx |= self.data[:, p] << i
        cells = 2 ** len(pa)
        counts = np.bincount(idx * 2 + self.data[:, node], minlength=2 * cells).reshape(cells, 2)
        tot = counts.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = np.where(counts > 0, counts * np.log(counts / np.maximum(tot, 1)), 0.0).sum()
        val = float(ll) - 0.5 * math.log(max(self.n, 1)) * cells
        self._cache[key] = val
        return val


def _neighbors(m, y):
    return {int(z) for z in np.flatnonzero(m[y] & m[:, y])}


def _parents(m, y):
    return {int(z) for z in np.flatnonzero(m[:, y] & (1 - m[y]))}


def _adjacent(m, a, b):
    return bool(m[a, b] or m[b, a])


def _is_clique(m, nodes):
    return all(_adjacent(m, a, b) for a, b in itertools.combinations(nodes, 2))


def _semi_directed_blocked(m, start, target, blocked):
    """True if every semi-directed path start ~> target meets ``blocked``."""
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(m[v]):
            w = int(w)
            if w == target:
                return False
            if w in seen or w in blocked:
                continue
            seen.add(w)
            stack.append(w)
    return True


def pdag_to_dag(m):
    """Consistent DAG extension of a PDAG matrix (Dor and Tarsi)."""
    m = np.array(m, dtype=np.int8)
    n = m.shape[0]
    out = np.where(m & (1 - m.T), 1, 0).astype(np.int8)
    alive = set(range(n))
    while alive:
        chosen = None
        for v in sorted(alive):
            # sink among remaining nodes: no outgoing directed edge
            if any(m[v, w] and not m[w, v] for w in alive if w != v):
                continue
            nb = [w for w in alive if w != v and m[v, w] and m[w, v]]
            adj = [w for w in alive if w != v and (m[v, w] or m[w, v])]
            if all(_adjacent(m, u, x) for u in nb for x in adj if x != u):
                chosen = v
                break
        if chosen is None:
            raise SearchError("partially directed graph admits no consistent extension")
        for w in alive:
            if w != chosen and m[chosen, w] and m[w, chosen]:
                out[w, chosen] = 1
        alive.remove(chosen)
    return out


def _complete(m):
    return dag_to_cpdag(LatentDag(pdag_to_dag(m))).to_matrix()


def _best_insert(m, score):
    n = m.shape[0]
    best = (0.0, None)
    for x, y in itertools.permutations(range(n), 2):
        if _adjacent(m, x, y):
            continue
        ne_y = _neighbors(m, y)
        pa_y = _parents(m, y)
        na = {z for z in ne_y if _adjacent(m, z, x)}
        t0 = sorted(z for z in ne_y if not _adjacent(m, z, x))
        for r in range(len(t0) + 1):
            for t in itertools.combinations(t0, r):
                cond = na | set(t)
                if not _is_clique(m, cond):
                    continue
                if not _semi_directed_blocked(m, y, x, cond):
                    continue
                base = cond | pa_y
                gain = score.local(y, base | {x}) - score.local(y, base)
                if gain > best[0] + 1e-12:
                    best = (gain, (x, y, t))
    return best


def _best_delete(m, score):
    n = m.shape[0]
    best = (0.0, None)
    for x, y in itertools.permutations(range(n), 2):
        # x -> y or x - y (undirected pairs are visited in both orders)
        if not m[x, y]:
            continue
        ne_y = _neighbors(m, y)
        pa_y = _parents(m, y)
        na = sorted(z for z in ne_y if _adjacent(m, z, x) and z != x)
        for r in range(len(na) + 1):
            for h in itertools.combinations(na, r):
                rest = set(na) - set(h)
                if not _is_clique(m, rest):
                    continue
                base = (rest | pa_y) - {x}
                gain = score.local(y, base) - score.local(y, base | {x})
                if gain > best[0] + 1e-12:
                    best = (gain, (x, y, h))
    return best


def ges(data, max_steps=1000):
    """Run forward then backward equivalence search on binary ``data``.

    Parameters
    ----------
    data : (N, K) binary array
    max_steps : safety cap on the number of moves per phase

    Returns
    -------
    Cpdag
    """
    score = BicScore(data)
    n = score.n_vars
    m = np.zeros((n, n), dtype=np.int8)
    for _ in range(max_steps):
        gain, op = _best_insert(m, score)
        if op is None:
            break
        x, y, t = op
        m[x, y], m[y, x] = 1, 0
        for z in t:
            m[z, y], m[y, z] = 1, 0
        m = _complete(m)
    for _ in range(max_steps):
        gain, op = _best_delete(m, score)
        if op is None:
            break
        x, y, h = op
        m[x, y] = m[y, x] = 0
        for z in h:
            m[y, z], m[z, y] = 1, 0
            if m[x, z] and m[z, x]:
                m[z, x] = 0
        m = _complete(m)
    return Cpdag.from_matrix(m)
