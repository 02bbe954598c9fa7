import json
from fractions import Fraction
import io

import numpy as np
import pytest

from blcm._indexing import configurations
from blcm.exceptions import ParseError, SchemaError
from blcm.graph import check_subset_condition, check_theorem2_conditions, check_three_children
from blcm.model import validate_nondegeneracy
from blcm.simulate import (
    GAMMA_KINDS,
    LAMBDA_KINDS,
    Dataset,
    ScenarioSpec,
    build_scenario,
    latent_proportions,
    load_dataset,
    sample_dataset,
    scenario_manifest,
)


def chain_exact():
    """Chain proportions in exact rational arithmetic."""
    two, one = Fraction(2, 3), Fraction(1, 3)
    out = []
    for h1, h2, h3 in configurations(3):
        p = (two if h1 else one) * (two if h2 == h1 else one) * (two if h3 == h2 else one)
        out.append(p)
    return out


class TestScenarios:
    def test_chain_exact(self):
        pi = latent_proportions("chain").values
        for got, want in zip(pi, chain_exact()):
            assert abs(got - float(want)) < 1e-15
        assert abs(pi[7] - (2 / 3) ** 3) < 1e-15

    def test_collider_conditional(self):
        pi = latent_proportions("collider").values
        # P(H2=1 | H1=1, H3=1): configs (1,1,1)=7 and (1,0,1)=5
        assert pi[7] / (pi[7] + pi[5]) == pytest.approx(0.2)
        assert pi[2] / (pi[2] + pi[0]) == pytest.approx(0.8)

    def test_dependent(self):
        pi = latent_proportions("dependent").values
        assert abs(pi.sum() - 1) < 1e-12 and (pi > 0).all()
        # all-ones: 2/3 (2/3)^3 + 1/3 (1/3)^3
        assert pi[7] == pytest.approx(2 / 3 * 8 / 27 + 1 / 3 / 27)

    def test_mu_table_orientation(self):
        m = build_scenario("chain/DT")
        # item 3 at (h1,h2,h3) = (0,0,1) is 0.7 and item 5 at (1,0,0) is 2
        assert m.items[2].mu[4] == 0.7
        assert m.items[4].mu[1] == 2.0
        assert m.items[3].mu[7] == 0.014

    @pytest.mark.parametrize("lam", LAMBDA_KINDS)
    @pytest.mark.parametrize("gam", GAMMA_KINDS)
    def test_nondegenerate_and_conditions(self, lam, gam):
        m = build_scenario(ScenarioSpec(lam, gam))
        assert validate_nondegeneracy(m).ok
        r = check_theorem2_conditions(m.gamma)
        if gam == "DT":
            assert r.sufficient and not r.necessary_violated
        elif gam == "dense":
            assert not check_subset_condition(m.gamma).holds
        else:
            assert not check_three_children(m.gamma).holds

    def test_modified_parameters(self):
        dense = build_scenario("chain/dense").parent_tables()
        assert len(np.unique(dense[1])) == 8
        np.testing.assert_allclose(dense[5], [-1.5, 0.5, -0.5, 1.5])
        sparse = build_scenario("chain/sparse").parent_tables()
        np.testing.assert_allclose(sparse[2], [0.375, 0.675])
        np.testing.assert_allclose(sparse[4], [-1.25, 1.25])
        gaps = np.diff(np.sort(dense[1]))
        assert gaps.min() >= 0.1

    def test_manifest_json(self):
        d = json.loads(json.dumps(scenario_manifest(ScenarioSpec("chain", "sparse", 10, 3))))
        assert d["scenario"] == "chain/sparse" and len(d["parameter_changes"]) == 2
        assert "Philox" in d["rng"]


class TestSampling:
    def test_empty(self):
        d = sample_dataset(build_scenario("chain/DT"), 0, 1)
        assert d.values.shape == (0, 8)

    def test_deterministic(self):
        m = build_scenario("collider/DT")
        a = sample_dataset(m, 500, 42).to_csv()
        b = sample_dataset(m, 500, 42).to_csv()
        assert a == b
        assert a != sample_dataset(m, 500, 43).to_csv()

    def test_item_means(self):
        m = build_scenario("chain/DT")
        n = 10 ** 6
        d = sample_dataset(m, n, 5)
        pi = m.proportions.values
        for j in range(4):
            p = float(pi @ m.items[j].mu)
            sd = np.sqrt(p * (1 - p) / n)
            assert abs(d.values[:, j].mean() - p) < 3 * sd
        # latent frequencies
        freq = np.bincount(d.latent, minlength=8) / n
        assert np.all(np.abs(freq - pi) < 3 * np.sqrt(pi * (1 - pi) / n))

    def test_csv_roundtrip(self, tmp_path):
        d = sample_dataset(build_scenario("chain/DT"), 50, 7)
        p = tmp_path / "d.csv"
        d.to_csv(p)
        back = load_dataset(p, ["binary"] * 4 + ["real"] * 4)
        np.testing.assert_array_equal(back.values, d.values)
        assert p.read_text().splitlines()[0] == ",".join(f"x{j}" for j in range(1, 9))


class TestLoad:
    def test_binary_17(self):
        rng = np.random.default_rng(0)
        text = ",".join(f"i{j}" for j in range(17)) + "\n"
        text += "\n".join(",".join(map(str, row)) for row in rng.integers(0, 2, (20, 17)))
        d = load_dataset(io.StringIO(text))
        assert d.n_items == 17 and all(k == "binary" for k in d.kinds)

    def test_value_two(self):
        with pytest.raises(SchemaError):
            load_dataset(io.StringIO("a,b\n0,1\n2,0\n"), ["binary", "binary"])

    def test_empty(self):
        with pytest.raises(ParseError):
            load_dataset(io.StringIO(""))

    def test_missing_value_location(self):
        with pytest.raises(ParseError) as err:
            load_dataset(io.StringIO("a,b\n0,1\n1,NA\n"))
        assert err.value.row == 3 and err.value.column == 2

    def test_dict_schema(self):
        d = load_dataset(io.StringIO("a,b\n0,1.5\n1,2\n"), {"a": "binary", "b": "real"})
        assert d.kinds == ("binary", "real")

    def test_dataset_rejects_bad_binary(self):
        with pytest.raises(SchemaError):
            Dataset(np.array([[0.5]]), ["binary"])
