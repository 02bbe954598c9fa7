"""BLCM parameter containers, validation, exact pmfs and counterexamples.

Latent configurations are indexed by ``sum_k h_k 2^k`` (see ``_indexing``).
Observed outcomes ``x in {0,1}^J`` use the same convention over items.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from ._indexing import (
    broadcast_parent_table,
    compress_to_parents,
    config_index,
    configurations,
)
from ._validation import check_probability_vector, n_latent_from_length
from .exceptions import (
    DimensionError,
    ParamError,
    PreconditionError,
    SchemaError,
    UnsupportedItemKind,
)
from .graph import BipartiteGraph, LatentDag, check_subset_condition

__all__ = [
    "ITEM_KINDS",
    "LatentProportions",
    "ItemDistribution",
    "Blcm",
    "CondTable",
    "NondegeneracyReport",
    "DegenerateExample",
    "validate_nondegeneracy",
    "response_matrix",
    "table_marginal_pmf",
    "marginal_pmf",
    "conditional_table",
    "subset_counterexample",
    "subset_violation_example",
    "degenerate_example",
    "check_monotonicity",
    "complete_dag",
]

ITEM_KINDS = ("bernoulli", "normal", "cauchy")
DISTINCT_TOL = 1e-9


# ---------------------------------------------------------------------------
# Containers

@dataclass(frozen=True, eq=False)
class LatentProportions:
    """Probability vector over the 2^K latent configurations.

    Zero entries are allowed here so that boundary cases stay
    representable; :func:`validate_nondegeneracy` reports them.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = check_probability_vector(self.values, "latent proportions").copy()
        n_latent_from_length(arr.size, "latent proportions")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_latent(self):
        return n_latent_from_length(self.values.size)

    @classmethod
    def independent(cls, probs):
        """Product distribution with ``P(H_k = 1) = probs[k]``."""
        p = np.asarray(probs, dtype=float)
        h = configurations(p.size)
        return cls(np.prod(np.where(h == 1, p, 1 - p), axis=1))

    def marginals(self):
        """``P(H_k = 1)`` for each latent."""
        return configurations(self.n_latent).T @ self.values

    def __eq__(self, other):
        if not isinstance(other, LatentProportions):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    __hash__ = None

    def __repr__(self):
        return f"LatentProportions({np.array2string(self.values, precision=4)})"


@dataclass(frozen=True, eq=False)
class ItemDistribution:
    """Conditional law of one item given the full latent configuration.

    ``mu`` has one entry per configuration in {0,1}^K.  Bernoulli items use
    it as the success probability; ``normal`` and ``cauchy`` items as the
    location, with unit scale.
    """

    kind: str
    mu: np.ndarray

    def __post_init__(self):
        if self.kind not in ITEM_KINDS:
            raise UnsupportedItemKind(f"unknown item kind {self.kind!r}; expected one of {ITEM_KINDS}")
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 1:
            raise DimensionError("item parameters must be a vector over configurations")
        n_latent_from_length(mu.size, "item parameters")
        if not np.isfinite(mu).all():
            raise ValueError("item parameters must be finite")
        if self.kind == "bernoulli" and ((mu <= 0) | (mu >= 1)).any():
            raise ValueError("Bernoulli success probabilities must lie in (0, 1)")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def n_latent(self):
        return n_latent_from_length(self.mu.size)

    @property
    def is_binary(self):
        return self.kind == "bernoulli"

    def exceed_probability(self, cut=None):
        """``P(X > cut | H = h)`` for every configuration.

        ``cut=None`` means the default: 0 for continuous items and the
        identity map for Bernoulli items.
        """
        if self.kind == "bernoulli":
            if cut is None or 0 <= cut < 1:
                return self.mu.copy()
            return np.full(self.mu.shape, 1.0 if cut < 0 else 0.0)
        c = 0.0 if cut is None else float(cut)
        if self.kind == "normal":
            return ndtr(self.mu - c)
        return 0.5 + np.arctan(self.mu - c) / np.pi

    def depends_only_on(self, parents):
        k = self.n_latent
        compact = compress_to_parents(self.mu, k, parents)
        return bool(np.array_equal(broadcast_parent_table(compact, k, parents), self.mu))

    def __eq__(self, other):
        if not isinstance(other, ItemDistribution):
            return NotImplemented
        return self.kind == other.kind and bool(np.array_equal(self.mu, other.mu))

    __hash__ = None

    def __repr__(self):
        return f"ItemDistribution({self.kind!r}, mu={np.array2string(self.mu, precision=3)})"


def complete_dag(k):
    """DAG with every edge a -> b for a < b."""
    return LatentDag(np.triu(np.ones((k, k), dtype=np.int8), 1))


@dataclass(frozen=True, eq=False)
class Blcm:
    """A binary latent causal model with a measurement structure."""

    gamma: BipartiteGraph
    lam: LatentDag
    proportions: LatentProportions
    items: tuple

    def __post_init__(self):
        gamma = self.gamma if isinstance(self.gamma, BipartiteGraph) else BipartiteGraph(self.gamma)
        lam = self.lam if isinstance(self.lam, LatentDag) else LatentDag(self.lam)
        props = (self.proportions if isinstance(self.proportions, LatentProportions)
                 else LatentProportions(self.proportions))
        items = tuple(self.items)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "proportions", props)
        object.__setattr__(self, "items", items)
        k = gamma.n_latent
        if lam.n_nodes != k or props.n_latent != k:
            raise DimensionError(
                f"latent count mismatch: gamma K={k}, DAG {lam.n_nodes}, proportions {props.n_latent}"
            )
        if len(items) != gamma.n_items:
            raise DimensionError(f"gamma has {gamma.n_items} rows but {len(items)} items given")
        for j, item in enumerate(items):
            if not isinstance(item, ItemDistribution):
                raise TypeError(f"item {j} is not an ItemDistribution")
            if item.n_latent != k:
                raise DimensionError(f"item {j} is defined over K={item.n_latent}, expected {k}")
            if not item.depends_only_on(gamma.parents(j)):
                raise ValueError(f"item {j} depends on latents outside its parents {gamma.parents(j)}")

    @property
    def n_items(self):
        return self.gamma.n_items

    @property
    def n_latent(self):
        return self.gamma.n_latent

    @property
    def kinds(self):
        return tuple(it.kind for it in self.items)

    @classmethod
    def from_parent_tables(cls, gamma, lam, proportions, kinds, tables):
        """Build from per-item tables over parent configurations only."""
        gamma = gamma if isinstance(gamma, BipartiteGraph) else BipartiteGraph(gamma)
        k = gamma.n_latent
        items = []
        for j, (kind, tab) in enumerate(zip(kinds, tables)):
            pa = gamma.parents(j)
            tab = np.asarray(tab, dtype=float).ravel()
            if tab.size != 1 << len(pa):
                raise DimensionError(f"item {j} needs {1 << len(pa)} parameters, got {tab.size}")
            items.append(ItemDistribution(kind, broadcast_parent_table(tab, k, pa)))
        return cls(gamma, lam, proportions, tuple(items))

    def parent_tables(self):
        return [compress_to_parents(it.mu, self.n_latent, self.gamma.parents(j))
                for j, it in enumerate(self.items)]

    def with_items(self, items):
        return Blcm(self.gamma, self.lam, self.proportions, tuple(items))

    def to_dict(self):
        return {
            "gamma": self.gamma.entries.tolist(),
            "lambda": self.lam.adjacency.tolist(),
            "proportions": self.proportions.values.tolist(),
            "items": [{"kind": it.kind, "mu": tab.tolist()}
                      for it, tab in zip(self.items, self.parent_tables())],
        }

    def to_json(self, path=None, **kwargs):
        text = json.dumps(self.to_dict(), **kwargs)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        try:
            items = d["items"]
            return cls.from_parent_tables(
                np.array(d["gamma"]), LatentDag(np.array(d["lambda"])),
                LatentProportions(np.array(d["proportions"], dtype=float)),
                [it["kind"] for it in items], [it["mu"] for it in items],
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed model description: {exc}") from exc

    @classmethod
    def from_json(cls, source):
        if hasattr(source, "read"):
            return cls.from_dict(json.load(source))
        with open(source, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class CondTable:
    """J x 2^K table of success probabilities of the binary(ized) items."""

    theta: np.ndarray
    gamma: BipartiteGraph | None = None

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        if th.ndim != 2:
            raise DimensionError("theta must be a J x 2^K matrix")
        n_latent_from_length(th.shape[1], "theta columns")
        if not np.isfinite(th).all() or (th < 0).any() or (th > 1).any():
            raise ValueError("theta entries must lie in [0, 1]")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        if self.gamma is not None:
            g = self.gamma if isinstance(self.gamma, BipartiteGraph) else BipartiteGraph(self.gamma)
            object.__setattr__(self, "gamma", g)
            if g.entries.shape != (th.shape[0], n_latent_from_length(th.shape[1])):
                raise DimensionError("attached graph does not match theta's shape")
            k = g.n_latent
            for j in range(th.shape[0]):
                pa = g.parents(j)
                if not np.array_equal(broadcast_parent_table(compress_to_parents(th[j], k, pa), k, pa), th[j]):
                    raise ValueError(f"theta row {j} varies outside its parents {pa}")

    @property
    def n_items(self):
        return self.theta.shape[0]

    @property
    def n_latent(self):
        return n_latent_from_length(self.theta.shape[1])

    def __repr__(self):
        return f"CondTable(J={self.n_items}, K={self.n_latent})"


# ---------------------------------------------------------------------------
# Validation

class NondegeneracyReport(NamedTuple):
    positive_proportions: bool
    zero_configurations: tuple
    distinct_conditionals: bool
    degenerate_items: tuple  # (item, (config_a, config_b)) first coinciding pair
    children_present: bool
    empty_columns: tuple

    @property
    def ok(self):
        return self.positive_proportions and self.distinct_conditionals and self.children_present

    def to_dict(self):
        return {
            "positive_proportions": self.positive_proportions,
            "zero_configurations": list(self.zero_configurations),
            "distinct_conditionals": self.distinct_conditionals,
            "degenerate_items": [[j, list(p)] for j, p in self.degenerate_items],
            "children_present": self.children_present,
            "empty_columns": list(self.empty_columns),
            "ok": self.ok,
        }


def _first_close_pair(values, tol):
    order = np.argsort(values, kind="stable")
    gaps = np.diff(values[order])
    hit = np.flatnonzero(gaps <= tol)
    if hit.size == 0:
        return None
    a, b = sorted((int(order[hit[0]]), int(order[hit[0] + 1])))
    return a, b


def validate_nondegeneracy(m, tol=DISTINCT_TOL):
    """Check positivity of proportions, distinct item laws and nonempty columns.

    Item laws are compared through their parameter per parent configuration
    (success probability or location); pairs within ``tol`` count as equal.
    """
    zero = tuple(int(i) for i in np.flatnonzero(m.proportions.values <= 0))
    bad = []
    for j, tab in enumerate(m.parent_tables()):
        pair = _first_close_pair(np.asarray(tab), tol)
        if pair is not None:
            bad.append((j, pair))
    empty = tuple(int(k) for k in np.flatnonzero(m.gamma.entries.sum(axis=0) == 0))
    return NondegeneracyReport(not zero, zero, not bad, tuple(bad), not empty, empty)


def check_monotonicity(m, cuts=None):
    """True iff every item's ``P(X > cut | h)`` strictly increases along the
    partial order of its parent configurations."""
    theta = conditional_table(m, cuts).theta
    k = m.n_latent
    for j in range(m.n_items):
        pa = m.gamma.parents(j)
        tab = compress_to_parents(theta[j], k, pa)
        hp = configurations(len(pa))
        for a, b in itertools.permutations(range(tab.size), 2):
            if (hp[a] >= hp[b]).all() and not tab[a] > tab[b]:
                return False
    return True


# ---------------------------------------------------------------------------
# Exact distributions

def response_matrix(theta_rows):
    """``P(Y_S = y | H = h)`` for a set of binary items with rows ``theta_rows``.

    Returns a (2^|S|, 2^K) matrix; outcome ``y`` is indexed by
    ``sum_i y_i 2^i`` in the order the rows are given.
    """
    th = np.atleast_2d(np.asarray(theta_rows, dtype=float))
    out = np.ones((1, th.shape[1]))
    for row in th:
        out = np.vstack([out * (1.0 - row), out * row])
    return out


def table_marginal_pmf(proportions, theta):
    """Mixture pmf over {0,1}^J from proportions and a success table."""
    pi = np.asarray(getattr(proportions, "values", proportions), dtype=float)
    th = np.asarray(getattr(theta, "theta", theta), dtype=float)
    J = th.shape[0]
    if J > 24:
        raise DimensionError(f"exact pmf enumeration supports J <= 24, got {J}")
    lo = J // 2
    a = response_matrix(th[:lo]) if lo else np.ones((1, th.shape[1]))
    b = response_matrix(th[lo:]) * pi
    # x = x_low + 2^lo * x_high
    return (a @ b.T).T.ravel()


def marginal_pmf(m):
    """Exact pmf of a BLCM whose items are all Bernoulli."""
    if any(not it.is_binary for it in m.items):
        raise UnsupportedItemKind("marginal_pmf needs Bernoulli items; discretize with conditional_table first")
    return table_marginal_pmf(m.proportions, np.vstack([it.mu for it in m.items]))


def conditional_table(m, cuts=None):
    """Success probabilities of the items after thresholding at ``cuts``.

    ``cuts`` is None or one entry per item; an entry of None keeps the
    default (Bernoulli passthrough, ``x > 0`` for continuous items).
    """
    if cuts is None:
        cuts = [None] * m.n_items
    if len(cuts) != m.n_items:
        raise DimensionError(f"need one cut per item ({m.n_items}), got {len(cuts)}")
    theta = np.vstack([it.exceed_probability(c) for it, c in zip(m.items, cuts)])
    return CondTable(theta, m.gamma)


# ---------------------------------------------------------------------------
# Counterexamples

def _swap_within_slice(k, dominant, dominated):
    """Configuration permutation flipping ``h_dominated`` where ``h_dominant = 1``."""
    h = configurations(k).copy()
    sel = h[:, dominant] == 1
    h[sel, dominated] ^= 1
    return config_index(h)


def subset_counterexample(m, k=None, l=None):
    """Observationally equivalent BLCM obtained from a column dominance.

    When the children of latent ``k`` include those of latent ``l``, flipping
    ``h_l`` inside the slice ``h_k = 1`` permutes proportions and item tables
    while preserving the graph and the marginal law of X.  The alternative
    latent graph is set to the complete DAG, since the new proportions
    generally carry no independences.

    Parameters
    ----------
    m : Blcm
    k, l : int, optional
        Dominating and dominated latent.  Found automatically if omitted.
    """
    e = m.gamma.entries
    if k is None or l is None:
        # check_subset_condition returns (a, b) with column a <= column b
        res = check_subset_condition(m.gamma)
        if res.holds:
            raise PreconditionError("no column of the graph dominates another")
        l, k = res.pair
    if k == l or not (e[:, l] <= e[:, k]).all():
        raise PreconditionError(f"column {k} does not dominate column {l}")
    perm = _swap_within_slice(m.n_latent, k, l)
    pi = m.proportions.values[perm]
    items = tuple(ItemDistribution(it.kind, it.mu[perm]) for it in m.items)
    return Blcm(m.gamma, complete_dag(m.n_latent), LatentProportions(pi), items)


def subset_violation_example(p=0.4, theta_single=(0.2, 0.8), theta_pair=(0.1, 0.4, 0.6, 0.9)):
    """K=2 model with three stacked copies of the block [[1,0],[1,1]] and
    independent latents with ``P(H_k = 1) = p``."""
    gamma = np.array([[1, 0], [1, 1]] * 3)
    return Blcm.from_parent_tables(
        gamma, LatentDag.empty(2), LatentProportions.independent([p, p]),
        ["bernoulli"] * 6, [theta_single, theta_pair] * 3,
    )


class DegenerateExample(NamedTuple):
    model: Blcm
    relabel: np.ndarray  # relabel[i]: index of the alternative configuration of config i
    alternative: Blcm


def degenerate_example(k=3, a=0.3, b=0.7, proportions=None):
    """Parity model where all items share two success probabilities.

    Item ``j`` has parents ``0..j`` and success probability ``a`` when
    ``h_0 + ... + h_j`` is even, ``b`` otherwise.  Relabeling each
    configuration by its prefix parities gives an equivalent model whose
    graph is the identity.
    """
    if k < 2:
        raise ParamError("degenerate example needs K >= 2")
    if not (0 < a < 1 and 0 < b < 1):
        raise ParamError("a and b must lie in (0, 1)")
    if a == b:
        raise ParamError("a and b must differ")
    if proportions is None:
        proportions = np.full(1 << k, 1.0 / (1 << k))
    props = LatentProportions(proportions)
    h = configurations(k)
    prefix = np.cumsum(h, axis=1) % 2
    relabel = np.asarray(config_index(prefix))
    uniform = np.allclose(props.values, props.values[0])
    lam = LatentDag.empty(k) if uniform else complete_dag(k)

    gamma = np.tril(np.ones((k, k), dtype=np.int8))
    items = tuple(ItemDistribution("bernoulli", np.where(prefix[:, j] == 0, a, b)) for j in range(k))
    model = Blcm(gamma, lam, props, items)

    alt_pi = np.empty_like(props.values)
    alt_pi[relabel] = props.values
    alt_h = configurations(k)
    alt_items = tuple(ItemDistribution("bernoulli", np.where(alt_h[:, j] == 0, a, b)) for j in range(k))
    alt = Blcm(np.eye(k, dtype=np.int8), lam, LatentProportions(alt_pi), alt_items)
    return DegenerateExample(model, relabel, alt)
