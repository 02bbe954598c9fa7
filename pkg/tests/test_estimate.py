import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from blcm._mstep import maximize_1d, solve_item
from blcm.estimate import (
    BlcmEstimator,
    EmConfig,
    discretize,
    extract_gamma,
    fit,
    log_likelihood,
    oracle_blend_init,
    penalized_em,
    penalized_objective,
    select_k,
)
from blcm.exceptions import DegenerateInput, DegenerateInputWarning, ParamError
from blcm.model import conditional_table
from blcm.simulate import GAMMA_DT, Dataset, build_scenario, sample_dataset


def reference_em(y, pi, theta, n_iter):
    """Plain EM written record by record, no pattern compression."""
    y = np.asarray(y, dtype=float)
    pi, theta = pi.copy(), theta.copy()
    n = y.shape[0]
    for _ in range(n_iter):
        like = np.ones((n, pi.size))
        for j in range(y.shape[1]):
            like *= np.where(y[:, [j]] == 1, theta[j], 1 - theta[j])
        resp = like * pi
        resp /= resp.sum(axis=1, keepdims=True)
        pi = resp.mean(axis=0)
        theta = (y.T @ resp) / resp.sum(axis=0)
        theta = np.clip(theta, 1e-6, 1 - 1e-6)
    like = np.ones((n, pi.size))
    for j in range(y.shape[1]):
        like *= np.where(y[:, [j]] == 1, theta[j], 1 - theta[j])
    return pi, theta, float(np.log(like @ pi).sum())


def reference_median_gamma(theta, eps):
    """Loop-based lower-median rule."""
    J, C = theta.shape
    K = C.bit_length() - 1
    out = np.zeros((J, K), dtype=int)
    for j in range(J):
        for k in range(K):
            diffs = []
            for h in range(C):
                if not (h >> k) & 1:
                    diffs.append(abs(theta[j, h | (1 << k)] - theta[j, h]))
            diffs.sort()
            out[j, k] = int(diffs[(len(diffs) - 1) // 2] > eps)
    return out


def obj1d(t, a, b, pts, wts):
    return a * np.log(t) + b * np.log1p(-t) - np.sum(wts[:, None] * np.abs(t - pts[:, None]), axis=0)


def planted_binary(rng, n, pi, theta):
    h = rng.choice(pi.size, n, p=pi)
    return (rng.random((n, theta.shape[0])) < theta[:, h].T).astype(int)


class TestConfig:
    def test_defaults(self):
        cfg = EmConfig()
        assert cfg.lambda2_grid == (1, 10, 100, 1000) and cfg.tau_grid == (0.05, 0.1)
        assert cfg.eps_gamma == 0.125 and cfg.n_pseudo == 2000 and cfg.max_iters == 10

    def test_roundtrip(self):
        cfg = EmConfig(seed=5, tau_grid=(0.2,))
        assert EmConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [{"lambda2_grid": (0.0,)}, {"init_blend": (0.5, 0.6)}, {"max_iters": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ParamError):
            EmConfig(**bad)

    def test_unknown_field(self):
        with pytest.raises(ParamError):
            EmConfig.from_dict({"lambda": 1})


class TestDiscretize:
    def test_strict_zero(self):
        assert discretize(np.array([[0.0, 1e-12, -1.0]])).tolist() == [[0, 1, 0]]

    def test_binary_passthrough(self):
        d = Dataset(np.array([[1.0, -0.5], [0.0, 0.3]]), ["binary", "real"])
        assert discretize(d, cuts=5.0).tolist() == [[1, 0], [0, 0]]

    def test_mean_cut(self):
        x = np.random.default_rng(0).normal(size=(50, 3))
        ref = np.array([[int(x[i, j] > x[:, j].sum() / 50) for j in range(3)] for i in range(50)])
        assert np.array_equal(discretize(x, "mean"), ref)


class TestOneDimensionalSolver:
    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 6))
    def test_matches_grid_search(self, seed, n_pts):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(0, 50, 2)
        pts = rng.uniform(0, 1, n_pts)
        wts = rng.uniform(0, 40, n_pts)
        t = maximize_1d(a, b, pts, wts, n_pts, 1e-6, 1 - 1e-6)
        grid = np.concatenate([np.linspace(1e-6, 1 - 1e-6, 20001), pts])
        best = obj1d(grid, a, b, pts, wts).max()
        assert obj1d(np.array([t]), a, b, pts, wts)[0] >= best - 1e-9

    def test_no_penalty_is_ratio(self):
        assert maximize_1d(3.0, 1.0, np.empty(0), np.empty(0), 0, 1e-6, 1 - 1e-6) == pytest.approx(0.75)

    def test_all_zero_counts_side(self):
        assert maximize_1d(0.0, 5.0, np.empty(0), np.empty(0), 0, 1e-6, 1 - 1e-6) == 1e-6

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 10.0, 100.0]), st.sampled_from([0.05, 0.1, 0.3]))
    def test_item_update_increases_objective(self, seed, lam, tau):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(0, 30, (2, 8))
        theta0 = rng.uniform(0.05, 0.95, 8)
        new = solve_item(theta0, a, b, lam, tau, 50, 1e-7, 3)

        def f(t):
            return penalized_objective(float(a @ np.log(t) + b @ np.log1p(-t)), [t], lam, tau)

        assert f(new) >= f(theta0) - 1e-8

    def test_large_penalty_fuses(self):
        a = np.array([10.0, 12, 11, 9])
        b = np.array([10.0, 8, 9, 11])
        new = solve_item(np.array([0.4, 0.6, 0.5, 0.45]), a, b, 1000.0, 0.5, 50, 1e-9, 3)
        assert np.ptp(new) < 1e-9
        assert new[0] == pytest.approx(a.sum() / (a.sum() + b.sum()), abs=1e-6)


class TestPenalizedEm:
    def test_plain_em_matches_reference(self):
        rng = np.random.default_rng(3)
        pi = rng.dirichlet(np.ones(4))
        theta = rng.uniform(0.1, 0.9, (5, 4))
        y = planted_binary(rng, 400, pi, theta)
        pi0, th0 = rng.dirichlet(np.ones(4)), rng.uniform(0.2, 0.8, (5, 4))
        for t in range(1, 6):
            res = penalized_em(y, 2, EmConfig(), (pi0, th0), lam2=0.0, max_iters=t, tol=1e-300)
            rpi, rth, rll = reference_em(y, pi0, th0, t)
            np.testing.assert_allclose(res.pi, rpi, atol=1e-6)
            np.testing.assert_allclose(res.theta, rth, atol=1e-6)
            assert abs(res.loglik - rll) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 10.0, 100.0, 1000.0]), st.sampled_from([0.05, 0.1]))
    def test_objective_monotone(self, seed, lam, tau):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(4))
        theta = rng.uniform(0.05, 0.95, (6, 4))
        y = planted_binary(rng, 300, pi, theta)
        res = penalized_em(y, 2, EmConfig(), lam2=lam, tau=tau, max_iters=15, tol=1e-300, rng=rng)
        tr = np.array(res.diagnostics["objective_trace"])
        assert np.all(np.diff(tr) >= -1e-8 * np.maximum(1, np.abs(tr[:-1])))
        assert res.diagnostics["iters"] == 15

    def test_two_clusters(self):
        rng = np.random.default_rng(1)
        pi = np.array([0.3, 0.7])
        theta = np.array([[0.1, 0.9]] * 6)
        y = planted_binary(rng, 4000, pi, theta)
        res = penalized_em(y, 1, EmConfig(), (np.array([0.5, 0.5]), np.array([[0.3, 0.7]] * 6)),
                           lam2=1.0, tau=0.05, max_iters=200, tol=1e-8)
        np.testing.assert_allclose(res.pi, pi, atol=0.03)
        np.testing.assert_allclose(res.theta, theta, atol=0.03)

    def test_fixed_point(self):
        rng = np.random.default_rng(2)
        y = planted_binary(rng, 500, np.array([0.4, 0.6]), np.array([[0.2, 0.8]] * 4))
        first = penalized_em(y, 1, EmConfig(), lam2=10.0, tau=0.1, max_iters=500, tol=1e-12, rng=rng)
        again = penalized_em(y, 1, EmConfig(), (first.pi, first.theta), lam2=10.0, tau=0.1)
        assert again.diagnostics["iters"] == 1 and again.diagnostics["converged"]
        assert again.diagnostics["pi_change"][0] < 0.005

    def test_loglik_consistent(self):
        rng = np.random.default_rng(4)
        y = planted_binary(rng, 200, np.array([0.5, 0.5]), np.array([[0.2, 0.8]] * 3))
        res = penalized_em(y, 1, EmConfig(), lam2=1.0, rng=rng)
        assert res.loglik == pytest.approx(log_likelihood(y, res.pi, res.theta))

    def test_theta_clamped(self):
        y = np.array([[1, 0], [1, 1], [0, 0], [1, 0]] * 10)
        res = penalized_em(y, 1, EmConfig(), lam2=1.0, max_iters=50, rng=np.random.default_rng(0))
        assert res.theta.min() >= 1e-6 and res.theta.max() <= 1 - 1e-6
        assert abs(res.pi.sum() - 1) < 1e-12

    def test_constant_column_pinned(self):
        y = np.array([[1, 0, 1], [1, 1, 0], [1, 0, 0], [1, 1, 1]] * 5)
        with pytest.warns(DegenerateInputWarning):
            res = penalized_em(y, 1, EmConfig(), lam2=1.0, rng=np.random.default_rng(0))
        assert np.all(res.theta[0] == 1 - 1e-6) and res.diagnostics["pinned_items"] == [0]

    def test_single_record(self):
        with pytest.raises(DegenerateInput):
            penalized_em(np.array([[1, 0, 1]]), 1, EmConfig())

    def test_k_zero(self):
        with pytest.raises(ValueError):
            penalized_em(np.array([[1, 0], [0, 1]]), 0, EmConfig())


class TestInit:
    def test_noise_weight_zero(self):
        m = build_scenario("chain/DT")
        pi0, th0 = oracle_blend_init(m, EmConfig(init_blend=(1.0, 0.0)))
        np.testing.assert_allclose(pi0, m.proportions.values)
        np.testing.assert_allclose(th0, conditional_table(m).theta)

    def test_valid_and_reproducible(self):
        m = build_scenario("collider/DT")
        a = oracle_blend_init(m, EmConfig(seed=9))
        b = oracle_blend_init(m, EmConfig(seed=9))
        assert abs(a[0].sum() - 1) < 1e-12 and (a[0] > 0).all()
        assert (a[1] > 0).all() and (a[1] < 1).all()
        np.testing.assert_array_equal(a[1], b[1])


class TestExtractGamma:
    def test_exact_chain_table(self):
        th = conditional_table(build_scenario("chain/DT")).theta
        assert np.array_equal(extract_gamma(th, 0.125).entries, GAMMA_DT)
        assert np.array_equal(reference_median_gamma(th, 0.125), GAMMA_DT)

    def test_constant_rows(self):
        assert extract_gamma(np.full((3, 8), 0.3)).entries.sum() == 0

    def test_eps_zero_noisy(self):
        th = np.random.default_rng(0).uniform(0.1, 0.9, (4, 8))
        assert extract_gamma(th, 0.0).entries.all()

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.floats(0, 0.5), st.floats(0, 0.5))
    def test_reference_and_monotone(self, seed, k, e1, e2):
        th = np.random.default_rng(seed).uniform(0, 1, (5, 1 << k))
        lo, hi = min(e1, e2), max(e1, e2)
        g_lo, g_hi = extract_gamma(th, lo).entries, extract_gamma(th, hi).entries
        assert np.array_equal(g_lo, reference_median_gamma(th, lo))
        assert np.all(g_hi <= g_lo)


SMALL = EmConfig(lambda2_grid=(1.0, 100.0), tau_grid=(0.1,), n_restarts=3, restart_max_iters=50)


class TestFit:
    def test_oracle_chain(self):
        m = build_scenario("chain/DT")
        res = fit(sample_dataset(m, 10000, 3), 3, EmConfig(seed=1), "oracle", truth=m)
        assert res.gamma_hat.entries.shape == (8, 3)
        assert (res.gamma_hat.entries != GAMMA_DT).sum() <= 4
        assert len(res.grid) == 8
        assert res.theta_hat.theta.min() >= 1e-6 and res.theta_hat.theta.max() <= 1 - 1e-6
        chosen = [g for g in res.grid if (g["lambda2"], g["tau"]) == res.selected_tuning][0]
        assert chosen["bic"] == min(g["bic"] for g in res.grid) == res.bic

    def test_deterministic(self):
        d = sample_dataset(build_scenario("chain/DT"), 500, 1)
        a, b = fit(d, 3, SMALL), fit(d, 3, SMALL)
        assert a.to_json() == b.to_json()

    def test_single_record(self):
        d = sample_dataset(build_scenario("chain/DT"), 1, 1)
        with pytest.raises(DegenerateInput):
            fit(d, 3, SMALL)

    def test_item_reordering(self):
        m = build_scenario("chain/DT")
        d = sample_dataset(m, 3000, 8)
        perm = np.random.default_rng(0).permutation(8)
        cfg = EmConfig(init_blend=(1.0, 0.0))
        th = conditional_table(m).theta
        a = fit(d, 3, cfg, "oracle", truth=(m.proportions, th))
        b = fit(d.permute_items(perm), 3, cfg, "oracle", truth=(m.proportions, th[perm]))
        assert np.array_equal(b.gamma_hat.entries, a.gamma_hat.entries[perm])

    def test_oracle_needs_truth(self):
        with pytest.raises(ParamError):
            fit(sample_dataset(build_scenario("chain/DT"), 50, 1), 3, SMALL, "oracle")


class TestSelectK:
    def test_single_candidate(self):
        d = sample_dataset(build_scenario("chain/DT"), 300, 2)
        k, table, _ = select_k(d, [2], SMALL)
        assert k == 2 and len(table) == 1

    def test_planted_k1(self):
        rng = np.random.default_rng(5)
        y = planted_binary(rng, 2000, np.array([0.4, 0.6]), np.array([[0.15, 0.85]] * 6))
        k, table, _ = select_k(y, [1, 2], SMALL)
        assert k == 1
        assert table[0]["bic"] < table[1]["bic"]

    @pytest.mark.slow
    def test_chain_selects_three(self):
        d = sample_dataset(build_scenario("chain/DT"), 10000, 11)
        k, _, _ = select_k(d, [2, 3, 4], EmConfig(n_restarts=5))
        assert k == 3


class TestEstimatorApi:
    def test_params_and_clone(self):
        est = BlcmEstimator(n_latent=2, seed=3)
        assert est.get_params()["n_latent"] == 2
        c = clone(est)
        assert c.get_params() == est.get_params()

    def test_fit_transform_predict(self):
        rng = np.random.default_rng(0)
        y = planted_binary(rng, 500, np.array([0.25] * 4), np.array([[0.1, 0.9, 0.1, 0.9], [0.1, 0.1, 0.9, 0.9]] * 3))
        est = BlcmEstimator(n_latent=2, lambda2_grid=(1.0,), tau_grid=(0.1,), n_restarts=3).fit(y)
        post = est.transform(y)
        assert post.shape == (500, 4)
        np.testing.assert_allclose(post.sum(axis=1), 1)
        assert np.array_equal(est.predict(y), post.argmax(axis=1))
        assert est.gamma_.shape == (6, 2)
        assert est.score(y) < 0

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            BlcmEstimator().transform(np.zeros((2, 3)))
