"""Penalized-EM estimation of a BLCM from data.

Pipeline: threshold the items to binary, fit a 2^K-class latent class model
by EM with a grouped truncated-lasso penalty on each item's success
probabilities, choose the penalty by BIC, read the bipartite graph off the
fitted table, then learn the latent CPDAG by GES on pseudo-samples drawn
from the fitted proportions.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._indexing import configurations
from ._mstep import LOWER, UPPER, solve_item, truncated_penalty
from ._validation import check_binary_data
from .exceptions import DegenerateInput, DegenerateInputWarning, DimensionError, ParamError
from .ges import ges
from .graph import BipartiteGraph, Cpdag
from .model import Blcm, CondTable, LatentProportions, conditional_table

__all__ = [
    "EmConfig",
    "EmResult",
    "FitResult",
    "discretize",
    "posterior",
    "log_likelihood",
    "penalized_objective",
    "count_levels",
    "bic_dof",
    "penalized_em",
    "random_init",
    "oracle_blend_init",
    "extract_gamma",
    "fit_lambda_ges",
    "fit",
    "select_k",
    "BlcmEstimator",
]


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class EmConfig:
    """Tuning grid and stopping rules of the estimator.

    ``init_blend`` weights the reference parameters and uniform noise in
    :func:`oracle_blend_init`.  The ``n_restarts``, ``restart_*`` fields
    control the random-start EM used when no reference is available.
    """

    lambda2_grid: tuple = (1.0, 10.0, 100.0, 1000.0)
    tau_grid: tuple = (0.05, 0.1)
    eps_gamma: float = 0.125
    n_pseudo: int = 2000
    max_iters: int = 10
    tol_pi: float = 0.005
    init_blend: tuple = (0.7, 0.3)
    seed: int = 0
    n_restarts: int = 20
    restart_max_iters: int = 200
    restart_tol: float = 1e-6
    cd_max_sweeps: int = 50
    cd_tol: float = 1e-7
    dc_passes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "lambda2_grid", tuple(float(v) for v in self.lambda2_grid))
        object.__setattr__(self, "tau_grid", tuple(float(v) for v in self.tau_grid))
        object.__setattr__(self, "init_blend", tuple(float(v) for v in self.init_blend))
        if not self.lambda2_grid or any(not v > 0 for v in self.lambda2_grid):
            raise ParamError("lambda2_grid must be a non-empty list of positive values")
        if not self.tau_grid or any(not v > 0 for v in self.tau_grid):
            raise ParamError("tau_grid must be a non-empty list of positive values")
        for name in ("eps_gamma", "tol_pi", "restart_tol", "cd_tol"):
            if not getattr(self, name) > 0:
                raise ParamError(f"{name} must be positive")
        for name in ("n_pseudo", "max_iters", "n_restarts", "restart_max_iters", "cd_max_sweeps", "dc_passes"):
            if int(getattr(self, name)) < 1:
                raise ParamError(f"{name} must be at least 1")
        if len(self.init_blend) != 2 or min(self.init_blend) < 0 or abs(sum(self.init_blend) - 1) > 1e-12:
            raise ParamError("init_blend must be two non-negative weights summing to 1")
        if int(self.seed) < 0:
            raise ParamError("seed must be non-negative")

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParamError(f"unknown EmConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, source):
        if hasattr(source, "read"):
            return cls.from_dict(json.load(source))
        with open(source, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Data handling

def discretize(data, cuts=None):
    """Threshold items to binary: ``y = 1`` iff ``x > cut`` (strict).

    Parameters
    ----------
    data : Dataset or (N, J) array
    cuts : None (0 for every real item), a scalar, one value per item
        (None entries mean 0), or ``"mean"`` for the column sample mean.
        Binary columns of a :class:`Dataset` always pass through.
    """
    values = np.asarray(getattr(data, "values", data), dtype=float)
    if values.ndim != 2:
        raise DimensionError("data must be an N x J matrix")
    J = values.shape[1]
    kinds = getattr(data, "kinds", ("real",) * J)
    if cuts is None:
        cut = np.zeros(J)
    elif isinstance(cuts, str):
        if cuts != "mean":
            raise ParamError(f"unknown cut rule {cuts!r}")
        cut = values.mean(axis=0) if values.shape[0] else np.zeros(J)
    elif np.ndim(cuts) == 0:
        cut = np.full(J, float(cuts))
    else:
        if len(cuts) != J:
            raise DimensionError(f"need one cut per item ({J}), got {len(cuts)}")
        cut = np.array([0.0 if c is None else float(c) for c in cuts])
    out = (values > cut).astype(np.int8)
    for j, kind in enumerate(kinds):
        if kind == "binary":
            out[:, j] = values[:, j].astype(np.int8)
    return out


def _compress(y):
    patterns, counts = np.unique(y, axis=0, return_counts=True)
    return patterns.astype(float), counts.astype(float)


def _log_joint(patterns, pi, theta):
    """log P(y, h) for each pattern (rows) and configuration (columns)."""
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return patterns @ np.log(theta) + (1.0 - patterns) @ np.log1p(-theta) + log_pi


def posterior(y, pi, theta):
    """Posterior ``P(H = h | y)`` for each record, shape (N, 2^K)."""
    y = check_binary_data(y).astype(float)
    lj = _log_joint(y, np.asarray(pi, float), np.clip(np.asarray(theta, float), LOWER, UPPER))
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def log_likelihood(y, pi, theta):
    """Observed-data log-likelihood of binary records."""
    patterns, counts = _compress(check_binary_data(y))
    lj = _log_joint(patterns, np.asarray(pi, float), np.asarray(theta, float))
    return float(counts @ logsumexp(lj, axis=1))


def penalized_objective(loglik, theta, lam2, tau):
    """``loglik - lam2 * sum_j sum_{h != h'} min(|theta_jh - theta_jh'|, tau)``."""
    if lam2 == 0:
        return float(loglik)
    pen = sum(truncated_penalty(np.ascontiguousarray(row, dtype=float), float(lam2), float(tau)) for row in theta)
    return float(loglik) - pen


def count_levels(row, tau):
    """Number of distinct values in ``row`` after merging gaps of at most ``tau / 2``."""
    v = np.sort(np.asarray(row, dtype=float))
    return 1 + int((np.diff(v) > tau / 2).sum())


def bic_dof(theta, tau):
    """Effective parameter count: fused levels per row plus 2^K - 1 proportions."""
    theta = np.asarray(theta)
    return sum(count_levels(row, tau) for row in theta) + theta.shape[1] - 1


# ---------------------------------------------------------------------------
# EM

class EmResult(NamedTuple):
    pi: np.ndarray
    theta: np.ndarray
    loglik: float
    diagnostics: dict


def random_init(k, n_items, rng):
    """Dirichlet(1) proportions and Uniform(0.2, 0.8) success probabilities."""
    pi = rng.dirichlet(np.ones(1 << k))
    theta = rng.uniform(0.2, 0.8, (n_items, 1 << k))
    return pi, theta


def _constant_columns(y):
    if y.shape[0] == 0:
        return np.ones(y.shape[1], dtype=bool), np.zeros(y.shape[1])
    lo, hi = y.min(axis=0), y.max(axis=0)
    return lo == hi, lo.astype(float)


def penalized_em(y, k, cfg=None, init=None, lam2=None, tau=None, max_iters=None, tol=None, rng=None):
    """EM for the penalized latent class log-likelihood.

    Parameters
    ----------
    y : (N, J) binary array
    k : number of binary latents (2^k classes), ``k >= 1``
    cfg : EmConfig
    init : optional ``(pi, theta)``; a random start is drawn otherwise
    lam2, tau : penalty weight and truncation; default to the first grid
        entries.  ``lam2 = 0`` gives plain EM.
    max_iters, tol : override ``cfg.max_iters`` and ``cfg.tol_pi``
    rng : generator for the random start

    Returns
    -------
    EmResult
        ``diagnostics`` holds the objective trace (entry 0 is the start),
        the proportion change per iteration, ``iters``, ``converged``,
        ``penalty`` and ``pinned_items``.
    """
    cfg = cfg or EmConfig()
    k = int(k)
    if k < 1:
        raise DimensionError("k must be at least 1")
    y = check_binary_data(y)
    n, J = y.shape
    if n == 0 or J == 0:
        raise DegenerateInput("cannot fit an empty dataset")
    constant, level = _constant_columns(y)
    if constant.all():
        raise DegenerateInput("every item column is constant; the latent classes are unidentifiable")
    if constant.any():
        warnings.warn(
            f"items {np.flatnonzero(constant).tolist()} are constant; their success probabilities are pinned",
            DegenerateInputWarning,
            stacklevel=2,
        )
    lam2 = cfg.lambda2_grid[0] if lam2 is None else float(lam2)
    tau = cfg.tau_grid[0] if tau is None else float(tau)
    max_iters = cfg.max_iters if max_iters is None else int(max_iters)
    tol = cfg.tol_pi if tol is None else float(tol)
    C = 1 << k
    if init is None:
        pi, theta = random_init(k, J, rng if rng is not None else _rng(cfg.seed))
    else:
        pi, theta = (np.array(a, dtype=float) for a in init)
        if pi.shape != (C,) or theta.shape != (J, C):
            raise DimensionError(f"init shapes {pi.shape}, {theta.shape} do not match k={k}, J={J}")
    pi = pi / pi.sum()
    theta = np.clip(theta, LOWER, UPPER)
    pinned = np.clip(level, LOWER, UPPER)
    theta[constant] = pinned[constant, None]

    patterns, counts = _compress(y)

    def estep(pi, theta):
        lj = _log_joint(patterns, pi, theta)
        norm = logsumexp(lj, axis=1, keepdims=True)
        return float(counts @ norm[:, 0]), np.exp(lj - norm) * counts[:, None]

    loglik, weights = estep(pi, theta)
    trace = [penalized_objective(loglik, theta, lam2, tau)]
    changes = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new_pi = weights.sum(axis=0) / n
        ones = patterns.T @ weights
        zeros = weights.sum(axis=0)[None, :] - ones
        new_theta = theta.copy()
        for j in range(J):
            if constant[j]:
                continue
            if lam2 == 0:
                with np.errstate(invalid="ignore", divide="ignore"):
                    row = np.where(zeros[j] + ones[j] > 0, ones[j] / (ones[j] + zeros[j]), theta[j])
                new_theta[j] = np.clip(row, LOWER, UPPER)
            else:
                new_theta[j] = solve_item(
                    np.ascontiguousarray(theta[j]), np.ascontiguousarray(ones[j]),
                    np.ascontiguousarray(zeros[j]), lam2, tau,
                    int(cfg.cd_max_sweeps), float(cfg.cd_tol), int(cfg.dc_passes),
                )
        change = float(np.linalg.norm(new_pi - pi))
        pi, theta = new_pi, new_theta
        loglik, weights = estep(pi, theta)
        trace.append(penalized_objective(loglik, theta, lam2, tau))
        changes.append(change)
        if change < tol:
            converged = True
            break
    diag = {
        "objective_trace": trace,
        "pi_change": changes,
        "iters": it,
        "converged": converged,
        "penalty": loglik - trace[-1],
        "pinned_items": np.flatnonzero(constant).tolist(),
        "lam2": lam2,
        "tau": tau,
    }
    return EmResult(pi, theta, loglik, diag)


def _truth_arrays(truth, cuts=None):
    if isinstance(truth, Blcm):
        return truth.proportions.values, conditional_table(truth, cuts).theta
    pi, theta = truth
    pi = getattr(pi, "values", pi)
    theta = getattr(theta, "theta", theta)
    return np.asarray(pi, dtype=float), np.asarray(theta, dtype=float)


def oracle_blend_init(truth, cfg=None, rng=None):
    """Start near the truth: a convex blend of the true parameters and noise.

    Parameters
    ----------
    truth : Blcm or ``(pi, theta)``
    cfg : EmConfig (``init_blend`` gives the weights)
    rng : generator; defaults to one seeded from ``cfg.seed``

    Returns
    -------
    (pi0, theta0)
        ``pi0`` blends with a Dirichlet(1) draw, ``theta0`` with
        entrywise Uniform(0, 1) draws.
    """
    cfg = cfg or EmConfig()
    rng = rng if rng is not None else _rng(cfg.seed)
    pi, theta = _truth_arrays(truth)
    w_ref, w_noise = cfg.init_blend
    noise_pi = rng.dirichlet(np.ones(pi.size))
    noise_theta = rng.uniform(0.0, 1.0, theta.shape)
    pi0 = w_ref * pi + w_noise * noise_pi
    pi0 = pi0 / pi0.sum()
    theta0 = np.clip(w_ref * theta + w_noise * noise_theta, LOWER, UPPER)
    return pi0, theta0


# ---------------------------------------------------------------------------
# Structure read-out

def extract_gamma(theta_hat, eps=0.125):
    """Bipartite graph from a fitted success table.

    ``gamma[j, k] = 1`` iff the lower median over the other latents of
    ``|theta[j, (h_-k, 1)] - theta[j, (h_-k, 0)]|`` exceeds ``eps``.
    """
    theta = np.asarray(getattr(theta_hat, "theta", theta_hat), dtype=float)
    C = theta.shape[1]
    K = int(C).bit_length() - 1
    h = configurations(K)
    out = np.zeros((theta.shape[0], K), dtype=np.int8)
    for k in range(K):
        off = np.flatnonzero(h[:, k] == 0)
        diffs = np.sort(np.abs(theta[:, off + (1 << k)] - theta[:, off]), axis=1)
        med = diffs[:, (diffs.shape[1] - 1) // 2]
        out[:, k] = med > eps
    return BipartiteGraph(out)


def fit_lambda_ges(pi_hat, n_pseudo=2000, seed=0):
    """Latent CPDAG learned by GES on configurations sampled from ``pi_hat``."""
    pi = np.asarray(getattr(pi_hat, "values", pi_hat), dtype=float)
    pi = pi / pi.sum()
    k = int(pi.size).bit_length() - 1
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed)
    draws = rng.choice(pi.size, size=int(n_pseudo), p=pi)
    return ges(configurations(k)[draws])


# ---------------------------------------------------------------------------
# Full pipeline

@dataclass(frozen=True, eq=False)
class FitResult:
    """Output of :func:`fit`; ``grid`` lists every tuning point tried."""

    pi_hat: LatentProportions
    theta_hat: CondTable
    gamma_hat: BipartiteGraph
    lambda_hat: Cpdag
    loglik: float
    bic: float
    penalty_value: float
    iters_used: int
    converged_flag: bool
    selected_tuning: tuple
    grid: tuple = field(default=())

    @property
    def n_latent(self):
        return self.gamma_hat.n_latent

    def to_dict(self):
        return {
            "pi_hat": self.pi_hat.values.tolist(),
            "theta_hat": self.theta_hat.theta.tolist(),
            "gamma_hat": self.gamma_hat.entries.tolist(),
            "lambda_hat": self.lambda_hat.to_dict(),
            "loglik": self.loglik,
            "bic": self.bic,
            "penalty_value": self.penalty_value,
            "iters_used": self.iters_used,
            "converged": self.converged_flag,
            "selected_tuning": {"lambda2": self.selected_tuning[0], "tau": self.selected_tuning[1]},
            "grid": list(self.grid),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text + "\n")
        return text


def _random_starts(y, k, cfg, rng):
    """Unpenalized EM from ``cfg.n_restarts`` random starts."""
    starts = []
    for _ in range(cfg.n_restarts):
        init = random_init(k, y.shape[1], rng)
        res = penalized_em(y, k, cfg, init, lam2=0.0, max_iters=cfg.restart_max_iters, tol=cfg.restart_tol)
        starts.append((res.pi, res.theta, res.loglik))
    return starts


def fit(data, k, cfg=None, init_mode="random", truth=None, cuts=None):
    """Estimate ``(pi, Theta, Gamma, Lambda)`` for ``k`` latents.

    Parameters
    ----------
    data : Dataset or (N, J) array
    k : number of latents
    cfg : EmConfig
    init_mode : ``"random"`` (restarts) or ``"oracle"`` (needs ``truth``)
    truth : Blcm or ``(pi, theta)`` for the oracle start
    cuts : discretization thresholds, see :func:`discretize`

    Returns
    -------
    FitResult
    """
    cfg = cfg or EmConfig()
    y = discretize(data, cuts)
    n = y.shape[0]
    if n == 0:
        raise DegenerateInput("cannot fit an empty dataset")
    init_ss, ges_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = _rng(init_ss)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        if init_mode == "oracle":
            if truth is None:
                raise ParamError("oracle initialization needs the true parameters")
            starts = [oracle_blend_init(truth, cfg, init_rng)]
        elif init_mode == "random":
            starts = [(p, t) for p, t, _ in _random_starts(y, k, cfg, init_rng)]
        else:
            raise ParamError(f"unknown init_mode {init_mode!r}")
        grid = []
        best = None
        for lam2 in cfg.lambda2_grid:
            for tau in cfg.tau_grid:
                if len(starts) == 1:
                    start = starts[0]
                else:
                    scores = [penalized_objective(log_likelihood(y, p, t), t, lam2, tau) for p, t in starts]
                    start = starts[int(np.argmax(scores))]
                res = penalized_em(y, k, cfg, start, lam2=lam2, tau=tau)
                dof = bic_dof(res.theta, tau)
                bic = -2.0 * res.loglik + dof * math.log(n)
                row = {
                    "lambda2": lam2, "tau": tau, "loglik": res.loglik, "bic": bic, "dof": dof,
                    "iters": res.diagnostics["iters"], "converged": res.diagnostics["converged"],
                }
                grid.append(row)
                if best is None or bic < best[0]:
                    best = (bic, res, row)
    bic, res, row = best
    gamma = extract_gamma(res.theta, cfg.eps_gamma)
    lam = fit_lambda_ges(res.pi, cfg.n_pseudo, _rng(ges_ss))
    pi = np.clip(res.pi, 0.0, None)
    return FitResult(
        pi_hat=LatentProportions(pi / pi.sum()),
        theta_hat=CondTable(res.theta),
        gamma_hat=gamma,
        lambda_hat=lam,
        loglik=res.loglik,
        bic=bic,
        penalty_value=res.diagnostics["penalty"],
        iters_used=res.diagnostics["iters"],
        converged_flag=res.diagnostics["converged"],
        selected_tuning=(row["lambda2"], row["tau"]),
        grid=tuple(grid),
    )


def select_k(data, k_candidates=(2, 3, 4), cfg=None, cuts=None):
    """Fit each candidate ``k`` from random starts and keep the lowest BIC.

    Returns
    -------
    (k_best, table, fits)
        ``table`` is a list of ``{"k", "bic", "loglik"}`` rows; ties go to
        the smaller ``k``.  ``fits`` maps each ``k`` to its FitResult.
    """
    ks = sorted({int(k) for k in k_candidates})
    if not ks:
        raise ParamError("need at least one candidate k")
    fits = {k: fit(data, k, cfg, "random", cuts=cuts) for k in ks}
    table = [{"k": k, "bic": fits[k].bic, "loglik": fits[k].loglik} for k in ks]
    k_best = min(ks, key=lambda k: (fits[k].bic, k))
    return k_best, table, fits


# ---------------------------------------------------------------------------
# scikit-learn wrapper

class BlcmEstimator(BaseEstimator, TransformerMixin):
    """Estimator interface around :func:`fit`.

    ``transform`` returns posterior class probabilities (N x 2^K);
    ``predict`` returns the most probable configuration index per record.

    Parameters
    ----------
    n_latent : int or None
        Number of latents; ``None`` selects it from ``k_candidates`` by BIC.
    k_candidates : candidates used when ``n_latent`` is None
    init_mode : ``"random"``, or ``"oracle"`` together with ``truth``
    truth : Blcm or ``(pi, theta)``, only for the oracle start
    cuts : discretization thresholds, see :func:`discretize`
    Remaining parameters mirror :class:`EmConfig`.
    """

    def __init__(self, n_latent=3, k_candidates=(2, 3, 4), lambda2_grid=(1.0, 10.0, 100.0, 1000.0),
                 tau_grid=(0.05, 0.1), eps_gamma=0.125, n_pseudo=2000, max_iters=10, tol_pi=0.005,
                 n_restarts=20, seed=0, init_mode="random", truth=None, cuts=None):
        self.n_latent = n_latent
        self.k_candidates = k_candidates
        self.lambda2_grid = lambda2_grid
        self.tau_grid = tau_grid
        self.eps_gamma = eps_gamma
        self.n_pseudo = n_pseudo
        self.max_iters = max_iters
        self.tol_pi = tol_pi
        self.n_restarts = n_restarts
        self.seed = seed
        self.init_mode = init_mode
        self.truth = truth
        self.cuts = cuts

    def _config(self):
        return EmConfig(lambda2_grid=self.lambda2_grid, tau_grid=self.tau_grid, eps_gamma=self.eps_gamma,
                        n_pseudo=self.n_pseudo, max_iters=self.max_iters, tol_pi=self.tol_pi,
                        n_restarts=self.n_restarts, seed=self.seed)

    def fit(self, X, y=None):
        cfg = self._config()
        if self.n_latent is None:
            k, table, fits = select_k(X, self.k_candidates, cfg, self.cuts)
            self.bic_table_ = table
            self.result_ = fits[k]
        else:
            self.result_ = fit(X, self.n_latent, cfg, self.init_mode, self.truth, self.cuts)
        self.pi_ = self.result_.pi_hat.values
        self.theta_ = self.result_.theta_hat.theta
        self.gamma_ = self.result_.gamma_hat.entries
        self.cpdag_ = self.result_.lambda_hat
        self.n_latent_ = self.result_.n_latent
        self.n_features_in_ = self.theta_.shape[0]
        return self

    def _binary(self, X):
        check_is_fitted(self, "result_")
        y = discretize(X, self.cuts)
        if y.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} items, got {y.shape[1]}")
        return y

    def transform(self, X):
        return posterior(self._binary(X), self.pi_, self.theta_)

    def predict(self, X):
        return self.transform(X).argmax(axis=1)

    def score(self, X, y=None):
        """Average log-likelihood per record."""
        yb = self._binary(X)
        return log_likelihood(yb, self.pi_, self.theta_) / max(yb.shape[0], 1)
