import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from blcm._indexing import configurations
from blcm.exceptions import ParamError, PreconditionError, UnsupportedItemKind
from blcm.graph import BipartiteGraph, LatentDag
from blcm.model import (
    Blcm,
    CondTable,
    ItemDistribution,
    LatentProportions,
    check_monotonicity,
    conditional_table,
    degenerate_example,
    marginal_pmf,
    subset_counterexample,
    subset_violation_example,
    validate_nondegeneracy,
)
from blcm.simulate import GAMMA_DT, build_scenario, sample_dataset


def brute_pmf(pi, theta):
    """Direct double loop over outcomes and configurations."""
    J, C = theta.shape
    out = np.zeros(2 ** J)
    for xi, x in enumerate(itertools.product((0, 1), repeat=J)):
        x = x[::-1]  # itertools varies the last position fastest
        idx = sum(b << j for j, b in enumerate(x))
        total = 0.0
        for h in range(C):
            p = pi[h]
            for j in range(J):
                p *= theta[j, h] if x[j] else 1 - theta[j, h]
            total += p
        out[idx] = total
    return out


def random_bernoulli_model(rng, gamma):
    gamma = np.asarray(gamma)
    J, K = gamma.shape
    pi = rng.dirichlet(np.ones(2 ** K))
    tables = [rng.uniform(0.05, 0.95, 2 ** int(gamma[j].sum())) for j in range(J)]
    return Blcm.from_parent_tables(gamma, LatentDag.empty(K), pi, ["bernoulli"] * J, tables)


class TestContainers:
    def test_proportions_sum(self):
        with pytest.raises(ValueError):
            LatentProportions([0.5, 0.6])

    def test_proportions_power_of_two(self):
        with pytest.raises(ValueError):
            LatentProportions([0.5, 0.25, 0.25])

    def test_independent_proportions(self):
        p = LatentProportions.independent([0.4, 0.4])
        np.testing.assert_allclose(p.values, [0.36, 0.24, 0.24, 0.16])
        np.testing.assert_allclose(p.marginals(), [0.4, 0.4])

    def test_item_kind(self):
        with pytest.raises(UnsupportedItemKind):
            ItemDistribution("poisson", [1.0, 2.0])

    def test_bernoulli_range(self):
        with pytest.raises(ValueError):
            ItemDistribution("bernoulli", [0.0, 0.5])

    def test_item_outside_parents_rejected(self):
        item = ItemDistribution("bernoulli", [0.2, 0.2, 0.8, 0.8])  # depends on h2
        with pytest.raises(ValueError):
            Blcm([[1, 0]], LatentDag.empty(2), [0.25] * 4, (item,))

    def test_json_roundtrip(self, tmp_path):
        m = build_scenario("collider/dense")
        p = tmp_path / "m.json"
        m.to_json(p)
        back = Blcm.from_json(p)
        assert back.gamma == m.gamma and back.lam == m.lam
        assert back.proportions == m.proportions
        assert all(a == b for a, b in zip(back.items, m.items))
        d = json.loads(p.read_text())
        assert len(d["items"][3]["mu"]) == 8 and len(d["items"][7]["mu"]) == 1

    def test_condtable_sparsity(self):
        with pytest.raises(ValueError):
            CondTable([[0.2, 0.2, 0.8, 0.8]], BipartiteGraph([[1, 0]]))


class TestNondegeneracy:
    def test_chain_passes(self):
        r = validate_nondegeneracy(build_scenario("chain/DT"))
        assert r.ok

    def test_degenerate_items(self):
        r = validate_nondegeneracy(degenerate_example(3, 0.3, 0.7).model)
        assert not r.distinct_conditionals
        # the single-parent item only takes the values a, b and stays distinct;
        # every item with two or more parents repeats a value
        assert [j for j, _ in r.degenerate_items] == [1, 2]

    def test_zero_proportion(self):
        m = subset_violation_example()
        pi = np.array([0.5, 0.5, 0.0, 0.0])
        r = validate_nondegeneracy(Blcm(m.gamma, m.lam, pi, m.items))
        assert not r.positive_proportions and r.zero_configurations == (2, 3)

    def test_empty_column(self):
        item = ItemDistribution("bernoulli", [0.2, 0.8, 0.2, 0.8])
        m = Blcm([[1, 0]], LatentDag.empty(2), [0.25] * 4, (item,))
        r = validate_nondegeneracy(m)
        assert not r.children_present and r.empty_columns == (1,)


class TestPmf:
    def test_single_item(self):
        m = Blcm([[1]], LatentDag.empty(1), [0.5, 0.5], (ItemDistribution("bernoulli", [0.2, 0.8]),))
        np.testing.assert_allclose(marginal_pmf(m), [0.5, 0.5])

    def test_continuous_rejected(self):
        with pytest.raises(UnsupportedItemKind):
            marginal_pmf(build_scenario("chain/DT"))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 6))
    def test_matches_bruteforce_and_sums_to_one(self, seed, k, j):
        rng = np.random.default_rng(seed)
        gamma = rng.integers(0, 2, (j, k))
        m = random_bernoulli_model(rng, gamma)
        p = marginal_pmf(m)
        theta = np.vstack([it.mu for it in m.items])
        np.testing.assert_allclose(p, brute_pmf(m.proportions.values, theta), atol=1e-14)
        assert abs(p.sum() - 1) < 1e-12

    def test_monte_carlo_chain_items(self):
        m = build_scenario("chain/DT")
        sub = Blcm(m.gamma.entries[:4], m.lam, m.proportions, m.items[:4])
        p = marginal_pmf(sub)
        n = 10 ** 6
        data = sample_dataset(sub, n, seed=11).values.astype(int)
        idx = data @ (1 << np.arange(4))
        freq = np.bincount(idx, minlength=16) / n
        sd = np.sqrt(p * (1 - p) / n)
        assert (np.abs(freq - p) <= 3 * sd + 1e-12).sum() >= 15


class TestConditionalTable:
    def test_examples(self):
        assert ItemDistribution("normal", [0.0, 1.0]).exceed_probability()[0] == 0.5
        c = ItemDistribution("cauchy", [2.0, 0.0]).exceed_probability()[0]
        assert abs(c - (0.5 + np.arctan(2) / np.pi)) < 1e-15
        assert abs(c - 0.8524) < 1e-4
        assert ItemDistribution("bernoulli", [0.9, 0.1]).exceed_probability()[0] == 0.9

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-4, 4), st.floats(-2, 2))
    def test_quadrature_oracle(self, mu, cut):
        for kind, dist in (("normal", stats.norm(mu, 1)), ("cauchy", stats.cauchy(mu, 1))):
            val = ItemDistribution(kind, [mu, mu]).exceed_probability(cut)[0]
            left, _ = integrate.quad(dist.pdf, -np.inf, cut, epsabs=1e-13, epsrel=1e-13)
            assert abs(val - (1 - left)) < 1e-10

    def test_table_respects_graph(self):
        t = conditional_table(build_scenario("chain/DT"))
        assert t.theta.shape == (8, 8)
        np.testing.assert_allclose(t.theta[7], 0.5 + np.arctan(0.5) / np.pi)


class TestSubsetCounterexample:
    def test_table_one(self):
        m = subset_violation_example()
        alt = subset_counterexample(m)
        # printed order (h1, h2): (0,0), (0,1), (1,0), (1,1)
        printed = [0, 2, 1, 3]
        np.testing.assert_allclose(m.proportions.values[printed], [0.36, 0.24, 0.24, 0.16])
        np.testing.assert_allclose(alt.proportions.values[printed], [0.36, 0.24, 0.16, 0.24])
        np.testing.assert_allclose(marginal_pmf(alt), marginal_pmf(m), atol=1e-12)
        assert alt.gamma == m.gamma

    def test_symmetric_slice_fixed_point(self):
        m = subset_violation_example()
        pi = np.array([0.3, 0.2, 0.3, 0.2])  # pi(1,0) == pi(1,1)
        m = Blcm(m.gamma, LatentDag.from_edges(2, [(0, 1)]), pi, m.items)
        alt = subset_counterexample(m)
        np.testing.assert_array_equal(alt.proportions.values, pi)

    def test_benchmark_precondition(self):
        with pytest.raises(PreconditionError):
            subset_counterexample(build_scenario("chain/DT"))

    def test_explicit_bad_pair(self):
        with pytest.raises(PreconditionError):
            subset_counterexample(subset_violation_example(), k=1, l=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(2, 8))
    def test_equivalence_random(self, seed, k, j):
        rng = np.random.default_rng(seed)
        gamma = rng.integers(0, 2, (j, k))
        gamma[:, 0] |= gamma[:, 1]  # column 0 dominates column 1
        m = random_bernoulli_model(rng, gamma)
        alt = subset_counterexample(m, 0, 1)
        np.testing.assert_allclose(marginal_pmf(alt), marginal_pmf(m), atol=1e-12)
        sl = configurations(k)[:, 0] == 1
        if not np.allclose(m.proportions.values[sl & (configurations(k)[:, 1] == 1)],
                           m.proportions.values[sl & (configurations(k)[:, 1] == 0)]):
            assert not np.array_equal(alt.proportions.values, m.proportions.values)


class TestDegenerateExample:
    def test_table_rows(self):
        ex = degenerate_example(3, 0.3, 0.7)
        a, b = 0.3, 0.7
        # printed columns (h1,h2,h3) with h1 fastest, which is the internal order
        rows = [[a, b, a, b, a, b, a, b], [a, b, b, a, a, b, b, a], [a, b, b, a, b, a, a, b]]
        theta = np.vstack([it.mu for it in ex.model.items])
        np.testing.assert_allclose(theta, rows)

    def test_relabel(self):
        ex = degenerate_example(3, 0.3, 0.7)
        h = configurations(3)
        assert tuple(h[ex.relabel[1]]) == (1, 1, 1)   # (1,0,0) -> (1,1,1)
        assert tuple(h[ex.relabel[5]]) == (1, 1, 0)   # (1,0,1) -> (1,1,0)
        assert tuple(h[ex.relabel[2]]) == (0, 1, 1)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_same_pmf(self, k):
        rng = np.random.default_rng(k)
        ex = degenerate_example(k, 0.2, 0.9, rng.dirichlet(np.ones(2 ** k)))
        np.testing.assert_allclose(marginal_pmf(ex.model), marginal_pmf(ex.alternative), atol=1e-12)
        assert np.array_equal(ex.alternative.gamma.entries, np.eye(k))
        cols = sorted(map(tuple, np.vstack([it.mu for it in ex.model.items]).T))
        alt_cols = sorted(map(tuple, np.vstack([it.mu for it in ex.alternative.items]).T))
        assert cols == alt_cols

    def test_equal_params(self):
        with pytest.raises(ParamError):
            degenerate_example(3, 0.5, 0.5)


class TestMonotonicity:
    def test_increasing(self):
        item = ItemDistribution("bernoulli", [0.1, 0.4, 0.5, 0.9])
        m = Blcm([[1, 1]], LatentDag.empty(2), [0.25] * 4, (item,))
        assert check_monotonicity(m)

    def test_item_four_decreasing(self):
        m = build_scenario("chain/DT")
        sub = Blcm(GAMMA_DT[3:4], m.lam, m.proportions, m.items[3:4])
        assert not check_monotonicity(sub)

    def test_single_latent(self):
        m = Blcm([[1]], LatentDag.empty(1), [0.5, 0.5], (ItemDistribution("bernoulli", [0.3, 0.6]),))
        assert check_monotonicity(m)
