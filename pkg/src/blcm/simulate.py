"""Benchmark scenarios and seeded data generation.

Three latent structures (chain, collider, dependent) are combined with three
measurement graphs (``DT``, ``dense``, ``sparse``).  Items 1-4 are Bernoulli,
5-6 Normal with unit scale, 7-8 Cauchy with unit scale.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._indexing import configurations
from .exceptions import DimensionError, ParseError, SchemaError
from .graph import BipartiteGraph, LatentDag
from .model import Blcm, ItemDistribution, LatentProportions

__all__ = [
    "LAMBDA_KINDS",
    "GAMMA_KINDS",
    "GAMMA_DT",
    "GAMMA_DENSE",
    "GAMMA_SPARSE",
    "ITEM_KINDS_DEFAULT",
    "RNG_ALGORITHM",
    "ScenarioSpec",
    "Dataset",
    "latent_proportions",
    "latent_dag",
    "build_scenario",
    "scenario_manifest",
    "monotone_benchmark_model",
    "sample_dataset",
    "load_dataset",
]

LAMBDA_KINDS = ("chain", "collider", "dependent")
GAMMA_KINDS = ("DT", "dense", "sparse")
RNG_ALGORITHM = "numpy Philox4x64 via SeedSequence.spawn (stream 0: latents, stream j+1: item j)"

GAMMA_DT = np.array([
    [1, 0, 0], [1, 1, 0], [1, 0, 1], [1, 1, 1],
    [1, 0, 1], [0, 1, 0], [0, 1, 1], [0, 0, 0],
], dtype=np.int8)
GAMMA_DENSE = GAMMA_DT.copy()
GAMMA_DENSE[[1, 5], 2] = 1
GAMMA_SPARSE = GAMMA_DT.copy()
GAMMA_SPARSE[[2, 4], 2] = 0
for _g in (GAMMA_DT, GAMMA_DENSE, GAMMA_SPARSE):
    _g.setflags(write=False)

ITEM_KINDS_DEFAULT = ("bernoulli",) * 4 + ("normal",) * 2 + ("cauchy",) * 2

# Location/probability table, one row per item, columns listed with h3
# varying fastest: (0,0,0), (0,0,1), (0,1,0), ..., (1,1,1).
_MU_H3_FASTEST = np.array([
    [0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9],
    [0.05, 0.05, 0.4, 0.4, 0.7, 0.7, 0.95, 0.95],
    [0.05, 0.7, 0.05, 0.7, 0.4, 0.95, 0.4, 0.95],
    [0.985, 0.857, 0.714, 0.571, 0.429, 0.285, 0.143, 0.014],
    [-2, -0.5, -2, -0.5, 2, 0.5, 2, 0.5],
    [-1.5, -1.5, 1.5, 1.5, -1.5, -1.5, 1.5, 1.5],
    [0.5, -0.5, 2, -2, 0.5, -0.5, 2, -2],
    [0.5] * 8,
])


def _base_mu():
    h = configurations(3)
    col = 4 * h[:, 0] + 2 * h[:, 1] + h[:, 2]
    return _MU_H3_FASTEST[:, col]


BASE_MU = _base_mu()
BASE_MU.setflags(write=False)


# ---------------------------------------------------------------------------
# Latent structures

def latent_proportions(kind):
    """Proportions over (H1, H2, H3) for a latent structure."""
    h = configurations(3).astype(bool)
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    two, one = 2 / 3, 1 / 3
    if kind == "chain":
        p = np.where(h1, two, one) * np.where(h2 == h1, two, one) * np.where(h3 == h2, two, one)
    elif kind == "collider":
        p2 = np.select([h1 & h3, h1 & ~h3, ~h1 & h3], [0.2, 0.4, 0.6], 0.8)
        p = np.where(h1, two, one) * np.where(h3, two, one) * np.where(h2, p2, 1 - p2)
    elif kind == "dependent":
        p = np.zeros(8)
        for h0, w in ((1, two), (0, one)):
            agree = np.where(h == h0, two, one)
            p += w * agree.prod(axis=1)
    else:
        raise ValueError(f"unknown latent structure {kind!r}; expected one of {LAMBDA_KINDS}")
    return LatentProportions(p / p.sum())


def latent_dag(kind):
    edges = {
        "chain": [(0, 1), (1, 2)],
        "collider": [(0, 1), (2, 1)],
        "dependent": [(0, 1), (1, 2), (0, 2)],
    }
    if kind not in edges:
        raise ValueError(f"unknown latent structure {kind!r}; expected one of {LAMBDA_KINDS}")
    return LatentDag.from_edges(3, edges[kind])


# ---------------------------------------------------------------------------
# Measurement graphs and their parameters

def _add_parent(mu, new_parent):
    """Spread the existing levels over twice as many evenly spaced levels.

    Existing level of rank r maps to grid points 2r (new parent 0) and
    2r+1 (new parent 1), so the ordering of old levels is preserved.
    """
    h = configurations(3)
    levels = np.unique(mu)
    grid = np.linspace(levels.min(), levels.max(), 2 * levels.size)
    rank = np.searchsorted(levels, mu)
    return grid[2 * rank + h[:, new_parent]]


def _drop_parent(mu, parent):
    """Average the two values that differ only in ``parent``."""
    partner = np.bitwise_xor(np.arange(8), 1 << parent)
    return 0.5 * (mu + mu[partner])


def _mu_for_gamma(kind):
    mu = BASE_MU.copy()
    if kind == "DT":
        return mu, []
    notes = []
    if kind == "dense":
        for j in (1, 5):
            mu[j] = _add_parent(mu[j], 2)
            notes.append({"item": j + 1, "change": "added parent H3",
                          "rule": "existing levels spread to evenly spaced grid of twice the size"})
    elif kind == "sparse":
        for j in (2, 4):
            mu[j] = _drop_parent(mu[j], 2)
            notes.append({"item": j + 1, "change": "removed parent H3",
                          "rule": "unweighted mean over the removed parent"})
    else:
        raise ValueError(f"unknown measurement graph {kind!r}; expected one of {GAMMA_KINDS}")
    return mu, notes


_GAMMAS = {"DT": GAMMA_DT, "dense": GAMMA_DENSE, "sparse": GAMMA_SPARSE}


@dataclass(frozen=True)
class ScenarioSpec:
    lambda_kind: str = "chain"
    gamma_kind: str = "DT"
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.lambda_kind not in LAMBDA_KINDS:
            raise ValueError(f"lambda_kind must be one of {LAMBDA_KINDS}")
        if self.gamma_kind not in GAMMA_KINDS:
            raise ValueError(f"gamma_kind must be one of {GAMMA_KINDS}")
        if int(self.n) < 0:
            raise ValueError("n must be non-negative")

    @property
    def label(self):
        return f"{self.lambda_kind}/{self.gamma_kind}"

    @classmethod
    def parse(cls, text, n=1000, seed=0):
        """Parse ``"chain/DT"`` style labels."""
        lam, _, gam = text.partition("/")
        return cls(lam, gam or "DT", n, seed)


def build_scenario(spec):
    """Model for a scenario (``n`` and ``seed`` are ignored here)."""
    if isinstance(spec, str):
        spec = ScenarioSpec.parse(spec)
    mu, _ = _mu_for_gamma(spec.gamma_kind)
    items = tuple(ItemDistribution(kind, mu[j]) for j, kind in enumerate(ITEM_KINDS_DEFAULT))
    return Blcm(BipartiteGraph(_GAMMAS[spec.gamma_kind]), latent_dag(spec.lambda_kind),
                latent_proportions(spec.lambda_kind), items)


def scenario_manifest(spec):
    """JSON-ready description of a scenario, including modified parameters."""
    if isinstance(spec, str):
        spec = ScenarioSpec.parse(spec)
    model = build_scenario(spec)
    _, notes = _mu_for_gamma(spec.gamma_kind)
    out = {"scenario": spec.label, "n": int(spec.n), "seed": int(spec.seed),
           "rng": RNG_ALGORITHM, "configuration_index": "sum_k h_k 2^(k-1)"}
    out.update(model.to_dict())
    out["parameter_changes"] = notes
    return out


def monotone_benchmark_model(proportions=None):
    """Bernoulli model on the DT graph with success probabilities increasing
    in every parent (parent weights 1, 2, 4 keep levels distinct)."""
    props = latent_proportions("chain") if proportions is None else proportions
    h = configurations(3)
    weights = np.array([1.0, 2.0, 4.0])
    items = []
    for j in range(GAMMA_DT.shape[0]):
        pa = GAMMA_DT[j].astype(bool)
        if not pa.any():
            items.append(ItemDistribution("bernoulli", np.full(8, 0.5)))
            continue
        score = h[:, pa] @ weights[pa] / weights[pa].sum()
        items.append(ItemDistribution("bernoulli", 0.15 + 0.7 * score))
    return Blcm(BipartiteGraph(GAMMA_DT), latent_dag("chain"), props, tuple(items))


# ---------------------------------------------------------------------------
# Datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    """N records of J items; ``kinds[j]`` is ``"binary"`` or ``"real"``.

    ``latent`` optionally holds the configuration index of each record.
    """

    values: np.ndarray
    kinds: tuple
    latent: np.ndarray | None = field(default=None)
    names: tuple | None = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("dataset values must be an N x J matrix")
        kinds = tuple(self.kinds)
        if len(kinds) != v.shape[1]:
            raise DimensionError(f"{v.shape[1]} columns but {len(kinds)} kinds")
        for j, k in enumerate(kinds):
            if k not in ("binary", "real"):
                raise SchemaError(f"column {j + 1}: kind must be 'binary' or 'real', got {k!r}")
            if k == "binary" and v.shape[0] and not np.isin(v[:, j], (0.0, 1.0)).all():
                raise SchemaError(f"column {j + 1} is declared binary but has values other than 0/1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kinds", kinds)
        names = tuple(self.names) if self.names is not None else tuple(f"x{j + 1}" for j in range(v.shape[1]))
        object.__setattr__(self, "names", names)
        if self.latent is not None:
            lat = np.asarray(self.latent, dtype=np.int64)
            lat.setflags(write=False)
            object.__setattr__(self, "latent", lat)

    @property
    def n_records(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]

    def __len__(self):
        return self.n_records

    def permute_items(self, perm):
        perm = list(perm)
        return Dataset(self.values[:, perm], [self.kinds[p] for p in perm], self.latent,
                       [self.names[p] for p in perm])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(self.n_items)])
        binary = [k == "binary" for k in self.kinds]
        for row in self.values:
            w.writerow([str(int(v)) if b else format(v, ".17g") for v, b in zip(row, binary)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _item_kind_to_column(kind):
    return "binary" if kind == "bernoulli" else "real"


def sample_dataset(m, n, seed):
    """Draw ``n`` i.i.d. records from a model.

    Each latent draw and each item use their own Philox substream spawned
    from ``SeedSequence(seed)``, so output is reproducible bit for bit.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(m.n_items + 1)]
    pi = m.proportions.values
    latent = streams[0].choice(pi.size, size=n, p=pi)
    cols = []
    for item, rng in zip(m.items, streams[1:]):
        loc = item.mu[latent]
        if item.kind == "bernoulli":
            cols.append((rng.random(n) < loc).astype(float))
        elif item.kind == "normal":
            cols.append(loc + rng.standard_normal(n))
        else:
            cols.append(loc + rng.standard_cauchy(n))
    values = np.column_stack(cols) if cols else np.zeros((n, 0))
    return Dataset(values.reshape(n, m.n_items), [_item_kind_to_column(k) for k in m.kinds], latent)


_NA = {"", "na", "nan", "null", "none"}


def load_dataset(path, schema=None):
    """Read a dataset CSV with a header row.

    Parameters
    ----------
    path : str or path-like or file object
    schema : sequence of {"binary", "real"}, dict, or None
        Column kinds, positional or keyed by header name.  With ``None``,
        columns holding only 0/1 are binary and the rest real.

    Raises
    ------
    ParseError
        Empty file, ragged rows, missing or non-numeric values.
    SchemaError
        A declared binary column holds another value, or the schema does
        not match the header.
    """
    if hasattr(path, "read"):
        text = path.read()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise ParseError("dataset file is empty", row=1)
    header = [c.strip() for c in rows[0]]
    if not header or any(not c for c in header):
        raise ParseError("header has empty column names", row=1)
    J = len(header)
    data = np.empty((len(rows) - 1, J))
    for i, raw in enumerate(rows[1:]):
        r = i + 2
        if len(raw) != J:
            raise ParseError(f"expected {J} fields, got {len(raw)}", row=r)
        for j, cell in enumerate(raw):
            cell = cell.strip()
            if cell.lower() in _NA:
                raise ParseError("missing value", row=r, column=j + 1)
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=r, column=j + 1) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {cell!r}", row=r, column=j + 1)
            data[i, j] = val
    if schema is None:
        kinds = ["binary" if np.isin(data[:, j], (0.0, 1.0)).all() else "real" for j in range(J)]
    elif isinstance(schema, dict):
        missing = [h for h in header if h not in schema]
        if missing:
            raise SchemaError(f"schema has no entry for columns {missing}")
        kinds = [schema[h] for h in header]
    else:
        kinds = list(schema)
        if len(kinds) != J:
            raise SchemaError(f"schema lists {len(kinds)} kinds for {J} columns")
    for j, k in enumerate(kinds):
        if k not in ("binary", "real"):
            raise SchemaError(f"column {j + 1}: unknown kind {k!r}")
        if k == "binary":
            bad = np.flatnonzero(~np.isin(data[:, j], (0.0, 1.0)))
            if bad.size:
                raise SchemaError(
                    f"binary column {header[j]!r} has value {data[bad[0], j]:g} at row {bad[0] + 2}"
                )
    return Dataset(data, kinds, names=header)
