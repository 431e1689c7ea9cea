import io
import math

import numpy as np
import pytest

from erm_fdr.divergence import make_generator, parse_generator
from erm_fdr.generr import (
    ROUTE_TOL,
    AssumptionError,
    AssumptionWarning,
    fdr_algorithm,
    gap,
    gap_via_conjugate,
    generalization_error_direct,
    generalization_error_fdr,
    generalization_error_report,
    generalization_error_theorem5,
    gibbs_generalization_error,
    marginal_model_law,
    write_generr_csv,
)
from erm_fdr.learning import DataGeneratingLaw, StochasticAlgorithm
from erm_fdr.model_space import LossTable, ModelSupport
from erm_fdr.solver import feasibility, posterior

from conftest import SIGMA

REFERENCE_GE = 0.2310585786300049  # sigma - 1/2


def sigmoid_ge(lam):
    """Reference world, kl posterior: each dataset gains sigma_lam - 1/2."""
    return 1.0 / (1.0 + math.exp(-1.0 / lam)) - 0.5


def random_world(rng, n_atoms, n_data, gen):
    q = rng.dirichlet(np.ones(n_atoms))
    support = ModelSupport.finite(q)
    law = DataGeneratingLaw(tuple(f"z{i}" for i in range(n_data)), rng.dirichlet(np.ones(n_data)))
    tables = [LossTable(rng.uniform(0, 1, n_atoms)) for _ in range(n_data)]
    stars = [feasibility(1.0, gen, support, t).lambda_star for t in tables]
    lam = 1.7 * max(stars) if max(stars) > 0 else float(np.exp(rng.uniform(-1, 1)))
    return support, law, tables, lam


class TestGap:
    def test_by_hand(self):
        assert gap([0.0, 1.0, 2.0], [0, 0, 1], [1, 0, 0]) == 2.0

    def test_antisymmetric(self):
        rng = np.random.default_rng(3)
        L = rng.uniform(size=5)
        p1, p2 = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        assert gap(L, p1, p2) == pytest.approx(-gap(L, p2, p1), abs=1e-15)

    def test_linear_in_difference(self):
        rng = np.random.default_rng(4)
        L = rng.uniform(size=4)
        p1, p2, p3 = (rng.dirichlet(np.ones(4)) for _ in range(3))
        assert gap(L, p1, p3) == pytest.approx(gap(L, p1, p2) + gap(L, p2, p3), abs=1e-14)

    def test_unaligned(self):
        with pytest.raises(ValueError, match="unaligned"):
            gap([0.0, 1.0], [1.0], [0.5, 0.5])


class TestMarginal:
    def test_symmetric_world_gives_q(self, kl, reference_world):
        support, law, tables = reference_world
        alg = fdr_algorithm(1.0, kl, law, support, tables)
        np.testing.assert_allclose(alg["z1"], [SIGMA, 1 - SIGMA], atol=1e-14)
        m = marginal_model_law(alg, law)
        np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=1e-15)
        assert m.mutually_continuous

    def test_data_independent(self, reference_world):
        _, law, _ = reference_world
        alg = StochasticAlgorithm.data_independent(law, [0.2, 0.8])
        np.testing.assert_allclose(marginal_model_law(alg, law).weights, [0.2, 0.8], atol=1e-15)

    def test_single_dataset(self):
        law = DataGeneratingLaw(("only",), [1.0])
        alg = StochasticAlgorithm({"only": [0.1, 0.6, 0.3]})
        np.testing.assert_array_equal(marginal_model_law(alg, law).weights, [0.1, 0.6, 0.3])

    def test_missing_atom_warns(self, reference_world):
        _, law, _ = reference_world
        alg = StochasticAlgorithm({"z1": [1.0, 0.0], "z2": [1.0, 0.0]})
        with pytest.warns(AssumptionWarning):
            m = marginal_model_law(alg, law)
        assert m.missing == (1,)


class TestDirect:
    def test_reference_world(self, kl, reference_world):
        support, law, tables = reference_world
        alg = fdr_algorithm(1.0, kl, law, support, tables)
        ge, rows = generalization_error_direct(alg, law, support, tables)
        assert ge == pytest.approx(REFERENCE_GE, abs=1e-15)
        assert [r.gap for r in rows] == pytest.approx([REFERENCE_GE] * 2, abs=1e-15)

    def test_data_independent_is_exactly_zero(self):
        rng = np.random.default_rng(5)
        support = ModelSupport.finite(rng.dirichlet(np.ones(4)))
        law = DataGeneratingLaw(("a", "b", "c"), rng.dirichlet(np.ones(3)))
        tables = [LossTable(rng.uniform(size=4)) for _ in range(3)]
        alg = StochasticAlgorithm.data_independent(law, rng.dirichlet(np.ones(4)))
        ge, _ = generalization_error_direct(alg, law, support, tables)
        assert ge == 0.0

    def test_single_dataset_is_zero(self):
        law = DataGeneratingLaw(("only",), [1.0])
        alg = StochasticAlgorithm({"only": [0.3, 0.7]})
        ge, _ = generalization_error_direct(alg, law, ModelSupport.uniform(2), [LossTable([0.2, 0.9])])
        assert ge == 0.0

    def test_table_count_must_match_law(self, reference_world):
        support, law, tables = reference_world
        alg = StochasticAlgorithm.data_independent(law, [0.5, 0.5])
        with pytest.raises(ValueError, match="loss tables"):
            generalization_error_direct(alg, law, support, tables[:1])


class TestGapViaConjugate:
    def test_posterior_itself_is_zero(self, chi2, three_atoms):
        s, L = three_atoms
        post = posterior(1.0, chi2, s, L)
        assert gap_via_conjugate(post.weights, post, chi2, s, L) == pytest.approx(0.0, abs=1e-15)

    def test_chi2_reference_gap(self, chi2, three_atoms):
        s, L = three_atoms
        post = posterior(1.0, chi2, s, L)
        assert gap_via_conjugate(s.weights, post, chi2, s, L) == pytest.approx(1 / 3, abs=1e-12)

    @pytest.mark.parametrize("key", ["kl", "reverse_kl", "chi_squared", "hellinger_sq", "alpha:3"])
    def test_matches_gap_for_random_p(self, key):
        gen = parse_generator(key)
        rng = np.random.default_rng(11)
        for _ in range(5):
            support = ModelSupport.finite(rng.dirichlet(np.ones(6)))
            L = rng.uniform(0, 1, 6)
            star = feasibility(1.0, gen, support, L).lambda_star
            post = posterior(2.0 * star if star > 0 else 0.8, gen, support, L)
            p = rng.dirichlet(np.ones(6))
            assert gap_via_conjugate(p, post, gen, support, L) == pytest.approx(
                gap(L, p, post.weights), abs=1e-10)


class TestTheorem5Route:
    def test_reference_world(self, kl, reference_world):
        support, law, tables = reference_world
        alg = fdr_algorithm(1.0, kl, law, support, tables)
        v = generalization_error_theorem5(alg, law, kl, 1.0, support, tables)
        assert v == pytest.approx(REFERENCE_GE, abs=1e-12)

    def test_data_independent(self, kl, reference_world):
        support, law, tables = reference_world
        alg = StochasticAlgorithm.data_independent(law, [0.3, 0.7])
        v = generalization_error_theorem5(alg, law, kl, 1.0, support, tables)
        assert v == pytest.approx(0.0, abs=1e-15)

    def test_chi2_algorithm_on_three_atoms(self, chi2):
        support = ModelSupport.uniform(3)
        law = DataGeneratingLaw(("a", "b"), [0.4, 0.6])
        tables = [LossTable([0.0, 1.0, 2.0]), LossTable([2.0, 0.5, 0.0])]
        alg = fdr_algorithm(1.5, chi2, law, support, tables)
        direct, _ = generalization_error_direct(alg, law, support, tables)
        v = generalization_error_theorem5(alg, law, chi2, 1.5, support, tables)
        assert v == pytest.approx(direct, abs=1e-9)

    @pytest.mark.parametrize("pivot", [0.5, 1.0, 3.0, 20.0])
    def test_pivot_lambda_is_free(self, kl, pivot):
        # any admissible pivot gives the same value for a fixed algorithm
        rng = np.random.default_rng(8)
        support = ModelSupport.finite(rng.dirichlet(np.ones(3)))
        law = DataGeneratingLaw(("a", "b", "c"), rng.dirichlet(np.ones(3)))
        tables = [LossTable(rng.uniform(size=3)) for _ in range(3)]
        alg = StochasticAlgorithm({z: rng.dirichlet(np.ones(3)) for z in law.ids})
        direct, _ = generalization_error_direct(alg, law, support, tables)
        v = generalization_error_theorem5(alg, law, kl, pivot, support, tables)
        assert v == pytest.approx(direct, abs=1e-9)

    def test_missing_atom_is_an_error(self, kl, reference_world):
        support, law, tables = reference_world
        alg = StochasticAlgorithm({"z1": [1.0, 0.0], "z2": [1.0, 0.0]})
        with pytest.raises(AssumptionError, match="misses"):
            generalization_error_theorem5(alg, law, kl, 1.0, support, tables)


class TestPosteriorFamilyRoutes:
    def test_reference_world_theorem6(self, kl, reference_world):
        support, law, tables = reference_world
        assert generalization_error_fdr(1.0, kl, law, support, tables) == pytest.approx(
            REFERENCE_GE, abs=1e-12)

    def test_reference_world_gibbs(self, reference_world):
        support, law, tables = reference_world
        assert gibbs_generalization_error(1.0, law, support, tables) == pytest.approx(
            REFERENCE_GE, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.1, 1.0, 10.0, 1000.0])
    def test_gibbs_follows_sigmoid(self, reference_world, lam):
        support, law, tables = reference_world
        v = gibbs_generalization_error(lam, law, support, tables)
        assert v == pytest.approx(sigmoid_ge(lam), rel=1e-9, abs=1e-15)

    def test_gibbs_vanishes_for_large_lambda(self, reference_world):
        support, law, tables = reference_world
        assert 0 < gibbs_generalization_error(1000.0, law, support, tables) < 1e-3

    def test_gibbs_equals_theorem6_for_kl(self, kl):
        rng = np.random.default_rng(21)
        support, law, tables, lam = random_world(rng, 4, 3, kl)
        assert gibbs_generalization_error(lam, law, support, tables) == pytest.approx(
            generalization_error_fdr(lam, kl, law, support, tables), abs=1e-12)

    def test_gibbs_rejects_other_generators(self, chi2, reference_world):
        support, law, tables = reference_world
        with pytest.raises(ValueError, match="kl"):
            gibbs_generalization_error(1.0, law, support, tables, gen=chi2)

    @pytest.mark.parametrize("key", ["kl", "chi_squared", "hellinger_sq"])
    def test_constant_loss_is_zero(self, key):
        gen = parse_generator(key)
        support = ModelSupport.finite([0.2, 0.5, 0.3])
        law = DataGeneratingLaw(("a", "b"), [0.5, 0.5])
        tables = [LossTable([0.4] * 3), LossTable([0.9] * 3)]
        report = generalization_error_report(1.0, gen, law, support, tables)
        assert report.direct == 0.0
        assert report.via_theorem6 == pytest.approx(0.0, abs=1e-15)
        assert report.via_theorem5 == pytest.approx(0.0, abs=1e-15)

    def test_single_dataset_is_zero(self, kl):
        law = DataGeneratingLaw(("only",), [1.0])
        support = ModelSupport.finite([0.3, 0.7])
        tables = [LossTable([0.0, 1.0])]
        assert generalization_error_fdr(1.0, kl, law, support, tables) == 0.0
        assert gibbs_generalization_error(1.0, law, support, tables) == 0.0


class TestReport:
    def test_reference_world_all_routes(self, kl, reference_world):
        support, law, tables = reference_world
        report = generalization_error_report(1.0, kl, law, support, tables)
        for name, value in report.routes().items():
            assert value == pytest.approx(REFERENCE_GE, abs=1e-12), name
        assert report.consistent
        assert [r.N for r in report.rows] == pytest.approx([math.log(
            0.5 * (1 + math.exp(-1.0))) - 1.0] * 2, abs=1e-12)

    def test_non_kl_has_no_gibbs(self, chi2, reference_world):
        support, law, tables = reference_world
        report = generalization_error_report(2.0, chi2, law, support, tables)
        assert report.gibbs_form is None and math.isnan(report.routes()["gibbs"])
        assert report.consistent

    def test_extensional_algorithm_has_two_routes(self, kl, reference_world):
        support, law, tables = reference_world
        alg = StochasticAlgorithm({"z1": [0.9, 0.1], "z2": [0.2, 0.8]})
        report = generalization_error_report(1.0, kl, law, support, tables, alg)
        assert report.via_theorem6 is None and report.gibbs_form is None
        # marginal is (0.55, 0.45)
        expected = 0.5 * ((0.45 - 0.1) + (0.55 - 0.2))
        assert report.direct == pytest.approx(expected, abs=1e-15)
        assert report.via_theorem5 == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("key", ["kl", "chi_squared"])
    @pytest.mark.parametrize("seed", range(5))
    def test_random_worlds_agree(self, key, seed):
        gen = make_generator(key)
        rng = np.random.default_rng([seed, 99])
        support, law, tables, lam = random_world(
            rng, int(rng.integers(2, 5)), int(rng.integers(1, 5)), gen)
        report = generalization_error_report(lam, gen, law, support, tables)
        assert report.spread <= ROUTE_TOL

    def test_csv_layout(self, kl, reference_world):
        support, law, tables = reference_world
        buf = io.StringIO()
        write_generr_csv(generalization_error_report(1.0, kl, law, support, tables), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "route,value"
        assert [ln.split(",")[0] for ln in lines[1:5]] == ["direct", "theorem5", "theorem6", "gibbs"]
        assert lines[5] == "dataset_id,N,risk_train,risk_marginal,gap"
        assert [ln.split(",")[0] for ln in lines[6:]] == ["z1", "z2"]
        assert float(lines[1].split(",")[1]) == pytest.approx(REFERENCE_GE, abs=1e-15)

    def test_nan_routes_print_as_nan(self, chi2, reference_world):
        support, law, tables = reference_world
        buf = io.StringIO()
        write_generr_csv(generalization_error_report(2.0, chi2, law, support, tables), buf)
        assert "gibbs,nan" in buf.getvalue().splitlines()
