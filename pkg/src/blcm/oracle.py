"""Population-level identification procedures.

These functions operate on exact conditional tables rather than samples:
rank checks on triangular blocks, Kruskal ranks, recovery of the
measurement graph from column-scrambled tables, and resolution of the
configuration labels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._indexing import configurations
from .exceptions import (
    DimensionError,
    MonotoneViolation,
    PreconditionError,
    SearchError,
    StructureError,
    SubsetViolation,
)
from .graph import BipartiteGraph, find_double_triangular
from .model import conditional_table, response_matrix

__all__ = [
    "RANK_RTOL",
    "KRUSKAL_RTOL",
    "COLUMN_TOL",
    "BlockRankCheck",
    "KruskalCheck",
    "ScrambledTables",
    "GammaRecovery",
    "SignResolution",
    "Budget",
    "lemma1_table",
    "lemma1_rank_check",
    "numerical_rank",
    "kruskal_rank",
    "kruskal_condition",
    "rank_of_observed_margin",
    "estimate_k_population",
    "scramble",
    "partition_family",
    "recover_gamma_population",
    "resolve_signs_subset",
    "resolve_signs_monotone",
    "identifiability_budget",
]

RANK_RTOL = 1e-8
KRUSKAL_RTOL = 1e-10
COLUMN_TOL = 1e-9


# ---------------------------------------------------------------------------
# Rank of a triangular block

class BlockRankCheck(NamedTuple):
    rank: int
    full: bool
    min_sv: float
    det: float
    det_factorized: float
    det_identity_holds: bool

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in self._asdict().items()}


def _check_lower_block(gamma_block, theta):
    g = np.asarray(gamma_block)
    th = np.asarray(theta, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError("gamma_block must be square")
    k = g.shape[0]
    if not (np.all(np.diag(g) == 1) and not np.triu(g, 1).any()):
        raise PreconditionError("gamma_block is not unit lower-triangular in the given order")
    if th.shape != (k, 1 << k):
        raise DimensionError(f"theta must be {k} x {1 << k}, got {th.shape}")
    h = configurations(k)
    for i in range(k):
        # row i may not vary with any h_l, l > i
        for l in range(i + 1, k):
            lo = h[:, l] == 0
            if not np.allclose(th[i, lo], th[i, ~lo], rtol=0, atol=0):
                raise PreconditionError(f"theta row {i} depends on latent {l} outside the block")
    return g, th


def lemma1_table(gamma_block, theta):
    """Survival table ``T[x, h] = P(X >= x | H = h)`` of a triangular block.

    Rows and columns follow the configuration index order.  ``T`` differs
    from ``P(X = x | H = h)`` by elementary row operations.
    """
    _, th = _check_lower_block(gamma_block, theta)
    k = th.shape[0]
    x = configurations(k).astype(bool)
    out = np.ones((1 << k, 1 << k))
    for i in range(k):
        out[x[:, i]] *= th[i]
    return out


def numerical_rank(a, rtol=RANK_RTOL):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0
    return int((s > rtol * s[0]).sum())


def lemma1_rank_check(gamma_block, theta, rtol=RANK_RTOL):
    """Numerical rank of ``P(X_block | H)`` and the determinant identity.

    The identity is ``det(T) = det(T_00)^2 * prod(eta)`` where ``T_00`` is
    the table of the first K-1 items over ``h_K = 0`` and
    ``eta = theta_K(., 1) - theta_K(., 0)``.
    """
    _, th = _check_lower_block(gamma_block, theta)
    k = th.shape[0]
    p = response_matrix(th)
    s = np.linalg.svd(p, compute_uv=False)
    rank = int((s > rtol * s[0]).sum()) if s[0] > 0 else 0
    t = lemma1_table(np.tril(np.ones((k, k))), th)
    det = float(np.linalg.det(t))
    half = 1 << (k - 1)
    t00 = t[:half, :half]
    eta = th[k - 1, half:] - th[k - 1, :half]
    det_f = float(np.linalg.det(t00) ** 2 * np.prod(eta))
    scale = max(abs(det), abs(det_f))
    holds = abs(det - det_f) <= 1e-8 * scale or scale < 1e-300
    return BlockRankCheck(rank, rank == 1 << k, float(s[-1]), det, det_f, bool(holds))


# ---------------------------------------------------------------------------
# Kruskal rank

def kruskal_rank(m, rtol=KRUSKAL_RTOL):
    """Largest R such that every R columns of ``m`` are linearly independent.

    Column subsets are enumerated by increasing size and the search stops
    at the first dependent subset.  Independence means the smallest
    singular value of the submatrix exceeds ``rtol`` times the largest
    singular value of ``m``.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DimensionError("kruskal_rank needs a matrix")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")
    n_rows, r = a.shape
    if r == 0 or a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0:
        return 0
    tol = rtol * sv[0]
    if r <= n_rows and sv[r - 1] > tol:
        return r
    for size in range(1, min(r, n_rows) + 1):
        for cols in itertools.combinations(range(r), size):
            sv = np.linalg.svd(a[:, cols], compute_uv=False)
            if sv[-1] <= tol:
                return size - 1
    return min(r, n_rows)


class KruskalCheck(NamedTuple):
    ranks: tuple
    total: int
    holds: bool
    slack: int

    def to_dict(self):
        return {"ranks": list(self.ranks), "total": self.total, "holds": self.holds, "slack": self.slack}


def kruskal_condition(t1, t2, t3, r=None):
    """Check ``krank(T1) + krank(T2) + krank(T3) >= 2 r + 2``."""
    mats = [np.asarray(t, dtype=float) for t in (t1, t2, t3)]
    if r is None:
        r = mats[0].shape[1]
    for t in mats:
        if t.ndim != 2 or t.shape[1] != r:
            raise DimensionError(f"every matrix must have {r} columns")
    ranks = tuple(kruskal_rank(t) for t in mats)
    total = sum(ranks)
    return KruskalCheck(ranks, total, total >= 2 * r + 2, total - (2 * r + 2))


# ---------------------------------------------------------------------------
# Observed margins and K

def rank_of_observed_margin(m, s1, s2, cuts=None, rtol=RANK_RTOL):
    """Numerical rank of the joint pmf matrix of the discretized item sets."""
    s1, s2 = list(s1), list(s2)
    if set(s1) & set(s2):
        raise ValueError("item sets must be disjoint")
    theta = conditional_table(m, cuts).theta
    a = response_matrix(theta[s1])
    b = response_matrix(theta[s2])
    joint = (a * m.proportions.values) @ b.T
    return numerical_rank(joint, rtol)


def estimate_k_population(m, max_k=None, cuts=None):
    """Number of latents read off the rank of a witness-split margin."""
    try:
        w = find_double_triangular(m.gamma)
    except DimensionError as exc:
        raise SearchError(str(exc)) from exc
    if w is None:
        raise SearchError("no double-triangular decomposition exists")
    r = rank_of_observed_margin(m, w.rows1, w.rows2, cuts)
    k = r.bit_length() - 1
    if (1 << k) != r:
        raise StructureError(f"margin rank {r} is not a power of two")
    if max_k is not None and k > max_k:
        raise StructureError(f"margin rank implies K={k} > max_k={max_k}")
    return k


# ---------------------------------------------------------------------------
# Scrambled tables

@dataclass(frozen=True, eq=False)
class ScrambledTables:
    """Per-item tables ``M_j`` (cut probabilities plus an all-ones row)
    whose columns share one unknown permutation.

    Observed column ``c`` holds the true configuration ``perm[c]``.  The
    permutation is kept for verification in tests only; recovery
    functions never read it.
    """

    tables: tuple
    proportions: np.ndarray
    _hidden_perm: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        tabs = tuple(np.array(t, dtype=float) for t in self.tables)
        if not tabs:
            raise DimensionError("need at least one table")
        n_cols = tabs[0].shape[1]
        for j, t in enumerate(tabs):
            if t.ndim != 2 or t.shape[1] != n_cols:
                raise DimensionError(f"table {j} has shape {t.shape}")
            if not np.allclose(t[-1], 1.0):
                raise ValueError(f"last row of table {j} must be all ones")
            if (t < 0).any() or (t > 1).any():
                raise ValueError(f"table {j} entries must lie in [0, 1]")
            t.setflags(write=False)
        object.__setattr__(self, "tables", tabs)

    @property
    def kappa(self):
        return tuple(t.shape[0] for t in self.tables)

    @property
    def n_latent(self):
        return self.tables[0].shape[1].bit_length() - 1

    def hidden_permutation(self):
        """Testing hook: the column permutation applied by :func:`scramble`."""
        return None if self._hidden_perm is None else self._hidden_perm.copy()


def scramble(m, seed=None, cuts=None, identity=False):
    """Build ``M_j`` for every item and permute columns uniformly at random.

    ``cuts[j]`` may be a single threshold, a list of thresholds (giving
    more rows), or None for the default cut.
    """
    if cuts is None:
        cuts = [None] * m.n_items
    tables = []
    for item, c in zip(m.items, cuts):
        cs = c if isinstance(c, (list, tuple, np.ndarray)) else [c]
        rows = [item.exceed_probability(x) for x in cs]
        tables.append(np.vstack(rows + [np.ones(1 << m.n_latent)]))
    n_cols = 1 << m.n_latent
    if identity:
        perm = np.arange(n_cols)
    else:
        perm = np.random.default_rng(seed).permutation(n_cols)
    return ScrambledTables(tuple(t[:, perm] for t in tables), m.proportions.values[perm], perm)


def _column_clusters(table, cols, tol=COLUMN_TOL):
    """Group column indices whose columns agree within ``tol``."""
    reps, groups = [], []
    for c in cols:
        v = table[:, c]
        for i, r in enumerate(reps):
            if np.max(np.abs(v - r)) <= tol:
                groups[i].append(c)
                break
        else:
            reps.append(v)
            groups.append([c])
    return [frozenset(g) for g in groups]


def _intersect(q, p):
    out = []
    for a in q:
        for b in p:
            c = a & b
            if c:
                out.append(c)
    return sorted(out, key=min)


def partition_family(st, witness, tol=COLUMN_TOL):
    """Running intersections ``Q_1, ..., Q_K`` along the second block's rows.

    Raises
    ------
    StructureError
        If some ``Q_k`` does not have exactly ``2^k`` blocks.
    """
    n_cols = st.tables[0].shape[1]
    q = [frozenset(range(n_cols))]
    family = []
    for k, j in enumerate(witness.rows2, start=1):
        p = _column_clusters(st.tables[j], range(n_cols), tol)
        q = _intersect(q, p)
        if len(q) != 1 << k:
            raise StructureError(f"level {k}: expected {1 << k} blocks, found {len(q)}")
        family.append(q)
    return family


class GammaRecovery(NamedTuple):
    gamma: BipartiteGraph  # columns ordered by the second block's peel order
    tau: tuple             # gamma column i corresponds to latent tau[i]


def recover_gamma_population(st, witness, k=None, tol=COLUMN_TOL):
    """Recover the measurement graph from scrambled population tables.

    Column ``i`` of the result refers to the latent pinned by the ``i``-th
    row of the second triangular block (``tau = witness.cols2``).  Row
    ``j`` is found by backward induction: the number of distinct columns
    of ``M_j`` inside any block of ``Q_{i-1}`` is ``2^(number of parents
    among latents i..K)``.
    """
    K = len(witness.rows2)
    if k is not None and k != K:
        raise DimensionError(f"witness has {K} rows per block but k={k}")
    if st.tables[0].shape[1] != 1 << K:
        raise DimensionError("tables do not have 2^K columns")
    family = partition_family(st, witness, tol)
    n_cols = 1 << K
    levels = [[frozenset(range(n_cols))]] + family
    gamma = np.zeros((len(st.tables), K), dtype=np.int8)
    for j, table in enumerate(st.tables):
        above = 0
        for i in range(K - 1, -1, -1):
            block = levels[i][0]
            n_distinct = len(_column_clusters(table, sorted(block), tol))
            d = n_distinct.bit_length() - 1
            if (1 << d) != n_distinct:
                raise StructureError(f"item {j}: {n_distinct} distinct columns is not a power of two")
            bit = d - above
            if bit not in (0, 1):
                raise StructureError(f"item {j}: inconsistent distinct-column counts at level {i}")
            gamma[j, i] = bit
            above = d
    return GammaRecovery(BipartiteGraph(gamma), tuple(witness.cols2))


class SignResolution(NamedTuple):
    splits: tuple   # per latent: (columns with h_k = 0, columns with h_k = 1) up to a swap
    labels: np.ndarray  # configuration index assigned to each observed column


def _union_find_components(n, groups):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for g in groups:
        g = sorted(g)
        for x in g[1:]:
            ra, rb = find(g[0]), find(x)
            if ra != rb:
                parent[rb] = ra
    comps = {}
    for x in range(n):
        comps.setdefault(find(x), set()).add(x)
    return sorted((frozenset(c) for c in comps.values()), key=min)


def resolve_signs_subset(st, gamma, tol=COLUMN_TOL):
    """Split the observed columns by each latent using its children.

    For latent ``k`` the equal-column clusters of every child are merged
    whenever they share a column.  Under the subset condition exactly two
    merged groups remain, which are ``{h_k = 0}`` and ``{h_k = 1}`` up to
    a swap.  Labels put the group holding column 0 at bit value 0.
    """
    g = gamma.entries if isinstance(gamma, BipartiteGraph) else np.asarray(gamma)
    n_cols = st.tables[0].shape[1]
    K = g.shape[1]
    if n_cols != 1 << K:
        raise DimensionError("tables do not have 2^K columns")
    splits = []
    labels = np.zeros(n_cols, dtype=np.int64)
    for k in range(K):
        groups = []
        for j in np.flatnonzero(g[:, k]):
            groups.extend(_column_clusters(st.tables[j], range(n_cols), tol))
        comps = _union_find_components(n_cols, groups)
        if len(comps) != 2:
            raise SubsetViolation(f"latent {k}: merging children's clusters left {len(comps)} groups")
        splits.append((comps[0], comps[1]))
        labels[list(comps[1])] |= 1 << k
    if len(set(labels.tolist())) != n_cols:
        raise StructureError("latent splits do not separate every configuration")
    return SignResolution(tuple(splits), labels)


def resolve_signs_monotone(st, witness, baseline_row=0, tol=COLUMN_TOL):
    """Exact configuration labels when items increase in their parents.

    Walking down the second block's rows, each block of ``Q_{k-1}`` splits
    into two halves; the half with the larger ``M_j(baseline_row, .)`` is
    assigned ``h = 1`` for the latent that row pins.  Labels are returned
    in the original latent order (via ``witness.cols2``).

    Raises
    ------
    MonotoneViolation
        When the two halves of some block tie within ``tol``.
    """
    K = len(witness.rows2)
    n_cols = st.tables[0].shape[1]
    if n_cols != 1 << K:
        raise DimensionError("tables do not have 2^K columns")
    family = partition_family(st, witness, tol)
    prev = [frozenset(range(n_cols))]
    labels = np.zeros(n_cols, dtype=np.int64)
    for k, (j, latent) in enumerate(zip(witness.rows2, witness.cols2)):
        row = st.tables[j][baseline_row]
        for block in prev:
            halves = [q for q in family[k] if q <= block]
            if len(halves) != 2:
                raise StructureError(f"level {k + 1}: block splits into {len(halves)} parts")
            v0 = row[min(halves[0])]
            v1 = row[min(halves[1])]
            if abs(v0 - v1) <= tol:
                raise MonotoneViolation(f"item {j}: both halves have value {v0:.6g}")
            high = halves[0] if v0 > v1 else halves[1]
            labels[list(high)] |= 1 << latent
        prev = family[k]
    return labels


# ---------------------------------------------------------------------------
# Parameter budget

class Budget(NamedTuple):
    n_params: int
    n_equations: int
    deficit: int
    n_params_sparse: int

    def to_dict(self):
        return dict(self._asdict())


def identifiability_budget(gamma, n_latent=None):
    """Count free parameters against the equations of the observed pmf.

    ``n_params`` counts ``2^K - 1`` proportions plus ``2^K`` success
    probabilities per binary item.  ``n_params_sparse`` instead counts
    only ``2^|pa(j)|`` per item, the number left after the graph's zero
    pattern is imposed.
    """
    g = gamma.entries if isinstance(gamma, BipartiteGraph) else np.asarray(gamma, dtype=np.int8)
    if g.ndim != 2:
        g = g.reshape(0, n_latent or 0)
    J, K = g.shape
    if n_latent is not None and K != n_latent:
        raise DimensionError(f"graph has {K} columns, expected {n_latent}")
    base = (1 << K) - 1
    n_params = base + J * (1 << K)
    sparse = base + int(sum(1 << int(r.sum()) for r in g))
    n_eq = (1 << J) - 1
    return Budget(n_params, n_eq, n_params - n_eq, sparse)
