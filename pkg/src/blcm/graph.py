"""Graph types and structural checks for binary latent causal models.

The latent-to-observed graph is a J x K bit matrix (item ``j`` is a child
of latent ``k`` when entry ``(j, k)`` is 1).  The latent graph is a DAG on
K nodes, compared through its CPDAG.  All indices are 0-based.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import check_bits, check_same_shape, check_square
from .exceptions import DimensionError, ParseError, SearchError

__all__ = [
    "BipartiteGraph",
    "LatentDag",
    "Cpdag",
    "TriangularWitness",
    "SubsetCheck",
    "ThreeChildrenCheck",
    "IdentifiabilityReport",
    "is_triangular",
    "iter_double_triangular",
    "find_double_triangular",
    "check_subset_condition",
    "check_three_children",
    "check_theorem2_conditions",
    "dag_to_cpdag",
    "shd_gamma",
    "shd_cpdag",
    "align_columns",
]


# ---------------------------------------------------------------------------
# CSV helpers shared by both graph types

def _matrix_to_csv(entries, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"k{i + 1}" for i in range(entries.shape[1])])
    for row in entries:
        w.writerow([int(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _matrix_from_csv(source):
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty graph CSV", row=1)
    header = [c.strip() for c in rows[0]]
    expected = [f"k{i + 1}" for i in range(len(header))]
    if header != expected:
        raise ParseError(f"header must be {','.join(expected)}", row=1)
    out = []
    for r, raw in enumerate(rows[1:], start=2):
        if len(raw) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(raw)}", row=r)
        vals = []
        for c, cell in enumerate(raw, start=1):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise ParseError(f"entry {cell!r} is not 0 or 1", row=r, column=c)
            vals.append(int(cell))
        out.append(vals)
    if not out:
        raise ParseError("graph CSV has no data rows", row=2)
    return np.array(out, dtype=np.int8)


# ---------------------------------------------------------------------------
# Types

@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Latent-to-observed adjacency (``entries[j, k] == 1`` means H_k -> X_j).

    All-zero columns are representable; nondegeneracy is checked elsewhere.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = check_bits(self.entries, "bipartite graph")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"bipartite graph needs J >= 1 and K >= 1, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n_items(self):
        return self.entries.shape[0]

    @property
    def n_latent(self):
        return self.entries.shape[1]

    J = n_items
    K = n_latent

    def parents(self, j):
        """Latent parents of item ``j``."""
        return tuple(int(k) for k in np.flatnonzero(self.entries[j]))

    def children(self, k):
        """Items measuring latent ``k``."""
        return tuple(int(j) for j in np.flatnonzero(self.entries[:, k]))

    def permute_columns(self, perm):
        return BipartiteGraph(self.entries[:, list(perm)])

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(
            np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash((self.entries.shape, self.entries.tobytes()))

    def __repr__(self):
        return f"BipartiteGraph(J={self.n_items}, K={self.n_latent})"

    def to_csv(self, path=None):
        return _matrix_to_csv(self.entries, path)

    @classmethod
    def from_csv(cls, source):
        return cls(_matrix_from_csv(source))


@dataclass(frozen=True, eq=False)
class LatentDag:
    """DAG among latents; ``adjacency[k, l] == 1`` is the edge k -> l."""

    adjacency: np.ndarray

    def __post_init__(self):
        arr = check_square(check_bits(self.adjacency, "latent DAG"), "latent DAG")
        if arr.shape[0] < 1:
            raise DimensionError("latent DAG needs at least one node")
        if np.diag(arr).any():
            raise ValueError("latent DAG must have a zero diagonal")
        arr.setflags(write=False)
        object.__setattr__(self, "adjacency", arr)
        if _topological_order(arr) is None:
            raise ValueError("latent graph contains a directed cycle")

    @classmethod
    def from_edges(cls, n_nodes, edges):
        adj = np.zeros((n_nodes, n_nodes), dtype=np.int8)
        for a, b in edges:
            adj[a, b] = 1
        return cls(adj)

    @classmethod
    def empty(cls, n_nodes):
        return cls(np.zeros((n_nodes, n_nodes), dtype=np.int8))

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def edges(self):
        return tuple((int(a), int(b)) for a, b in zip(*np.nonzero(self.adjacency)))

    def parents(self, k):
        return tuple(int(a) for a in np.flatnonzero(self.adjacency[:, k]))

    def topological_order(self):
        return _topological_order(self.adjacency)

    def __eq__(self, other):
        if not isinstance(other, LatentDag):
            return NotImplemented
        return bool(np.array_equal(self.adjacency, other.adjacency))

    def __hash__(self):
        return hash(self.adjacency.tobytes())

    def __repr__(self):
        return f"LatentDag(n_nodes={self.n_nodes}, edges={list(self.edges)})"

    def to_csv(self, path=None):
        return _matrix_to_csv(self.adjacency, path)

    @classmethod
    def from_csv(cls, source):
        return cls(_matrix_from_csv(source))


def _topological_order(adj):
    k = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = [i for i in range(k) if indeg[i] == 0]
    order = []
    while ready:
        ready.sort()
        v = ready.pop(0)
        order.append(v)
        for w in np.flatnonzero(adj[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(int(w))
    return tuple(order) if len(order) == k else None


@dataclass(frozen=True)
class Cpdag:
    """Partially directed graph: directed pairs ``(a, b)`` for a -> b and
    undirected pairs stored as ``frozenset({a, b})``."""

    n_nodes: int
    directed_edges: frozenset = field(default_factory=frozenset)
    undirected_edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        d = frozenset((int(a), int(b)) for a, b in self.directed_edges)
        u = frozenset(frozenset(int(v) for v in e) for e in self.undirected_edges)
        object.__setattr__(self, "directed_edges", d)
        object.__setattr__(self, "undirected_edges", u)
        for e in u:
            if len(e) != 2:
                raise ValueError(f"undirected edge {set(e)} must join two distinct nodes")
        dpairs = {frozenset(e) for e in d}
        if len(dpairs) != len(d):
            raise ValueError("a vertex pair carries edges in both directions")
        if dpairs & u:
            raise ValueError("directed and undirected edges overlap on a vertex pair")
        for e in list(d) + [tuple(e) for e in u]:
            if any(not 0 <= v < self.n_nodes for v in e) or e[0] == e[1]:
                raise ValueError(f"edge {e} is out of range for {self.n_nodes} nodes")

    @classmethod
    def from_matrix(cls, mat):
        """Build from a PDAG matrix: ``m[a,b]=1, m[b,a]=0`` is a -> b, both 1 is a - b."""
        m = np.asarray(mat)
        check_square(m, "PDAG matrix")
        n = m.shape[0]
        d, u = set(), set()
        for a in range(n):
            for b in range(n):
                if a != b and m[a, b]:
                    if m[b, a]:
                        u.add(frozenset((a, b)))
                    else:
                        d.add((a, b))
        return cls(n, frozenset(d), frozenset(u))

    def to_matrix(self):
        m = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int8)
        for a, b in self.directed_edges:
            m[a, b] = 1
        for e in self.undirected_edges:
            a, b = tuple(e)
            m[a, b] = m[b, a] = 1
        return m

    def to_dict(self):
        return {
            "n_nodes": self.n_nodes,
            "directed": sorted([list(e) for e in self.directed_edges]),
            "undirected": sorted(sorted(e) for e in self.undirected_edges),
        }


@dataclass(frozen=True)
class TriangularWitness:
    """Two disjoint triangular row blocks of a bipartite graph.

    ``g.entries[np.ix_(rows1, cols1)]`` is unit lower-triangular, and the
    same holds for block 2.  ``rows3`` holds the remaining rows.
    """

    rows1: tuple
    cols1: tuple
    rows2: tuple
    cols2: tuple
    rows3: tuple

    def to_dict(self):
        return {
            "rows1": list(self.rows1),
            "cols1": list(self.cols1),
            "rows2": list(self.rows2),
            "cols2": list(self.cols2),
            "rows3": list(self.rows3),
        }


# ---------------------------------------------------------------------------
# Triangular search

def _row_masks(entries):
    return [int(sum(1 << int(c) for c in np.flatnonzero(row))) for row in entries]


def _peel_orders(masks, rows, n_cols):
    """Yield every set of rows that peels to a triangular block, once each.

    Depth-first, lowest row index first.  Yields ``(rows, cols)`` in peel
    order, where ``cols[i]`` is the column the ``i``-th row pins down.
    """
    full = (1 << n_cols) - 1
    seen = set()
    rows = sorted(rows)

    def dfs(chosen, chosen_set, cols, remaining):
        if remaining == 0:
            yield tuple(chosen), tuple(cols)
            return
        for r in rows:
            if r in chosen_set:
                continue
            hit = masks[r] & remaining
            if hit == 0 or hit & (hit - 1):
                continue
            nxt = chosen_set | {r}
            if nxt in seen:
                continue
            seen.add(nxt)
            c = hit.bit_length() - 1
            chosen.append(r)
            cols.append(c)
            yield from dfs(chosen, nxt, cols, remaining & ~hit)
            chosen.pop()
            cols.pop()

    yield from dfs([], frozenset(), [], full)


def is_triangular(block):
    """Permutations making a square bit matrix unit lower-triangular.

    Returns ``(row_perm, col_perm)`` such that
    ``block[np.ix_(row_perm, col_perm)]`` has ones on the diagonal and zeros
    above it, or ``None`` when no such permutations exist.
    """
    arr = check_square(check_bits(block, "block"), "block")
    n = arr.shape[0]
    masks = _row_masks(arr)
    remaining = (1 << n) - 1
    left = list(range(n))
    rows, cols = [], []
    while remaining:
        for r in left:
            hit = masks[r] & remaining
            if hit and not hit & (hit - 1):
                break
        else:
            return None
        left.remove(r)
        rows.append(r)
        cols.append(hit.bit_length() - 1)
        remaining &= ~hit
    return tuple(rows), tuple(cols)


def iter_double_triangular(g):
    """Yield every double-triangular witness of ``g`` (unordered block pairs once).

    Raises
    ------
    DimensionError
        If ``g`` has fewer than ``2 K`` rows.
    """
    if not isinstance(g, BipartiteGraph):
        g = BipartiteGraph(g)
    J, K = g.entries.shape
    if J < 2 * K:
        raise DimensionError(f"double triangularity needs J >= 2K, got J={J}, K={K}")
    masks = _row_masks(g.entries)
    all_rows = range(J)
    seen_pairs = set()
    for rows1, cols1 in _peel_orders(masks, all_rows, K):
        rest = [r for r in all_rows if r not in rows1]
        for rows2, cols2 in _peel_orders(masks, rest, K):
            key = frozenset((frozenset(rows1), frozenset(rows2)))
            if key in seen_pairs:
                continue
            seen_pairs.add(key)
            used = set(rows1) | set(rows2)
            rows3 = tuple(r for r in all_rows if r not in used)
            yield TriangularWitness(rows1, cols1, rows2, cols2, rows3)


def find_double_triangular(g):
    """First double-triangular witness in lowest-row-first order, or ``None``."""
    return next(iter_double_triangular(g), None)


def require_double_triangular(g):
    """Like :func:`find_double_triangular` but raises ``SearchError`` on absence."""
    w = find_double_triangular(g)
    if w is None:
        raise SearchError("no double-triangular decomposition exists")
    return w


def _gamma3_covers(g, w):
    if not w.rows3:
        return False
    return bool(g.entries[list(w.rows3)].any(axis=0).all())


# ---------------------------------------------------------------------------
# Necessary and sufficient conditions

class SubsetCheck(NamedTuple):
    holds: bool
    pair: tuple | None


class ThreeChildrenCheck(NamedTuple):
    holds: bool
    deficient: tuple


def check_subset_condition(g):
    """Check that no column is elementwise dominated by another.

    Returns ``SubsetCheck(holds, pair)`` where ``pair`` is the first ordered
    pair ``(k, l)`` with column ``k <= column l`` entrywise (lexicographic).
    """
    if not isinstance(g, BipartiteGraph):
        g = BipartiteGraph(g)
    e = g.entries
    K = e.shape[1]
    for k in range(K):
        for l in range(K):
            if k != l and (e[:, k] <= e[:, l]).all():
                return SubsetCheck(False, (k, l))
    return SubsetCheck(True, None)


def check_three_children(g):
    """Check that every latent has at least three observed children."""
    if not isinstance(g, BipartiteGraph):
        g = BipartiteGraph(g)
    sums = g.entries.sum(axis=0)
    bad = tuple(int(k) for k in np.flatnonzero(sums < 3))
    return ThreeChildrenCheck(not bad, bad)


@dataclass(frozen=True)
class IdentifiabilityReport:
    """Outcome of the sufficient and necessary graphical checks.

    ``gamma3_columns_nonempty`` holds when some witness leaves every column
    of the remaining rows nonzero; ``gamma3_columns_nonempty_all`` when every
    witness does.  ``witness`` is the preferred (covering if possible) one.
    """

    double_triangular: bool
    witness: TriangularWitness | None
    gamma3_columns_nonempty: bool
    gamma3_columns_nonempty_all: bool
    subset_condition: bool
    subset_violation: tuple | None
    three_children: bool
    deficient_columns: tuple
    enough_rows: bool = True

    @property
    def sufficient(self):
        return self.double_triangular and self.gamma3_columns_nonempty and self.subset_condition

    @property
    def necessary_violated(self):
        return not self.subset_condition or not self.three_children

    def to_dict(self):
        return {
            "double_triangular": self.double_triangular,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "gamma3_columns_nonempty": self.gamma3_columns_nonempty,
            "gamma3_columns_nonempty_all_witnesses": self.gamma3_columns_nonempty_all,
            "subset_condition": self.subset_condition,
            "subset_violation": None if self.subset_violation is None else list(self.subset_violation),
            "three_children": self.three_children,
            "deficient_columns": list(self.deficient_columns),
            "enough_rows": self.enough_rows,
            "sufficient": self.sufficient,
            "necessary_violated": self.necessary_violated,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def check_theorem2_conditions(g):
    """Run all graphical identifiability checks on ``g``.

    Witnesses are enumerated until one with a covering remainder is found
    and until one without is found, so both quantifiers are exact.
    """
    if not isinstance(g, BipartiteGraph):
        g = BipartiteGraph(g)
    sub = check_subset_condition(g)
    three = check_three_children(g)
    J, K = g.entries.shape
    if J < 2 * K:
        return IdentifiabilityReport(False, None, False, False, sub.holds, sub.pair,
                              three.holds, three.deficient, enough_rows=False)
    first = covering = None
    all_cover = True
    for w in iter_double_triangular(g):
        if first is None:
            first = w
        if _gamma3_covers(g, w):
            if covering is None:
                covering = w
        else:
            all_cover = False
        if covering is not None and not all_cover:
            break
    found = first is not None
    return IdentifiabilityReport(
        double_triangular=found,
        witness=covering if covering is not None else first,
        gamma3_columns_nonempty=covering is not None,
        gamma3_columns_nonempty_all=found and all_cover,
        subset_condition=sub.holds,
        subset_violation=sub.pair,
        three_children=three.holds,
        deficient_columns=three.deficient,
    )


# ---------------------------------------------------------------------------
# CPDAG

def _adjacent(m, a, b):
    return bool(m[a, b] or m[b, a])


def _meek_close(m):
    """Apply Meek rules R1-R4 to a PDAG matrix in place until nothing changes."""
    n = m.shape[0]

    def undirected(a, b):
        return m[a, b] and m[b, a]

    def directed(a, b):
        return m[a, b] and not m[b, a]

    changed = True
    while changed:
        changed = False
        for a in range(n):
            for b in range(n):
                if a == b or not undirected(a, b):
                    continue
                orient = False
                # R1: c -> a - b, c and b nonadjacent
                for c in range(n):
                    if c not in (a, b) and directed(c, a) and not _adjacent(m, c, b):
                        orient = True
                        break
                # R2: a -> c -> b
                if not orient:
                    for c in range(n):
                        if c not in (a, b) and directed(a, c) and directed(c, b):
                            orient = True
                            break
                # R3: a - c -> b, a - d -> b, c and d nonadjacent
                if not orient:
                    cs = [c for c in range(n) if c not in (a, b) and undirected(a, c) and directed(c, b)]
                    for c, d in itertools.combinations(cs, 2):
                        if not _adjacent(m, c, d):
                            orient = True
                            break
                # R4: a - c -> d -> b, c and b nonadjacent, a adjacent to d
                if not orient:
                    for c in range(n):
                        if c in (a, b) or not _adjacent(m, a, c) or _adjacent(m, c, b):
                            continue
                        for d in range(n):
                            if d in (a, b, c):
                                continue
                            if directed(c, d) and directed(d, b) and _adjacent(m, a, d):
                                orient = True
                                break
                        if orient:
                            break
                if orient:
                    m[b, a] = 0
                    changed = True
    return m


def dag_to_cpdag(d):
    """Markov-equivalence representative of a DAG (skeleton, v-structures, Meek closure)."""
    if not isinstance(d, LatentDag):
        d = LatentDag(d)
    a = d.adjacency.astype(np.int8)
    n = a.shape[0]
    m = ((a + a.T) > 0).astype(np.int8)
    for child in range(n):
        pa = np.flatnonzero(a[:, child])
        for p, q in itertools.combinations(pa, 2):
            if not (a[p, q] or a[q, p]):
                m[child, p] = 0
                m[child, q] = 0
    return Cpdag.from_matrix(_meek_close(m))


# ---------------------------------------------------------------------------
# Metrics

def _entries(g):
    return g.entries if isinstance(g, BipartiteGraph) else check_bits(g, "graph")


def shd_gamma(est, truth):
    """Number of differing entries between two bipartite graphs."""
    a, b = _entries(est), _entries(truth)
    check_same_shape(a, b, "bipartite graphs")
    return int((a != b).sum())


def _edge_class(m, a, b):
    if m[a, b] and m[b, a]:
        return "-"
    if m[a, b]:
        return ">"
    if m[b, a]:
        return "<"
    return None


def shd_cpdag(est, truth):
    """Structural Hamming distance between two CPDAGs.

    Each vertex pair costs 1 if adjacency differs, or 1 if both have the edge
    but its type (a -> b, b -> a, undirected) differs.
    """
    if est.n_nodes != truth.n_nodes:
        raise DimensionError(f"CPDAGs have {est.n_nodes} and {truth.n_nodes} nodes")
    me, mt = est.to_matrix(), truth.to_matrix()
    total = 0
    for a, b in itertools.combinations(range(est.n_nodes), 2):
        if _edge_class(me, a, b) != _edge_class(mt, a, b):
            total += 1
    return total


def align_columns(est, truth):
    """Column permutation of ``est`` minimizing :func:`shd_gamma` against ``truth``.

    Returns ``perm`` such that ``est.entries[:, perm]`` is best aligned;
    ties go to the lexicographically smallest permutation.
    """
    a, b = _entries(est), _entries(truth)
    check_same_shape(a, b, "bipartite graphs")
    K = a.shape[1]
    # cost[i, k]: mismatches if est column i is placed at truth column k
    cost = (a[:, :, None] != b[:, None, :]).sum(axis=0)
    best, best_perm = None, None
    for perm in itertools.permutations(range(K)):
        c = int(cost[list(perm), range(K)].sum())
        if best is None or c < best:
            best, best_perm = c, perm
    return tuple(best_perm)
