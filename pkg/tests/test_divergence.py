import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erm_fdr.divergence import (
    CATALOG,
    check_generator,
    classify_zero_limit,
    conjugate,
    make_generator,
    parse_generator,
)

from conftest import ALL_KEYS


def grid_sup(gen, t, xs=np.linspace(1e-9, 50.0, 500_001)):
    """Brute-force sup_x (t x - f(x)) over a dense grid."""
    with np.errstate(all="ignore"):
        return float(np.max(t * xs - gen.f(xs)))


def domain_grid(gen, lo=1e-6, hi=1e6, n=121):
    return np.geomspace(lo, hi, n)


class TestCatalog:
    def test_unknown_name(self):
        with pytest.raises(ValueError):
            make_generator("jensen_shannon")

    @pytest.mark.parametrize("alpha", [0, 1, 0.0, 1.0])
    def test_alpha_excludes_limits(self, alpha):
        with pytest.raises(ValueError):
            make_generator("alpha", alpha)

    def test_alpha_required_only_for_family(self):
        with pytest.raises(ValueError):
            make_generator("alpha")
        with pytest.raises(ValueError):
            make_generator("kl", 0.5)

    def test_parse_keys(self):
        assert parse_generator("kl").name == "kl"
        g = parse_generator('"alpha:0.5"')
        assert g.name == "alpha" and g.alpha == 0.5
        with pytest.raises(ValueError):
            parse_generator("alpha:abc")

    def test_catalog_names(self):
        assert set(CATALOG) == {"kl", "reverse_kl", "chi_squared", "hellinger_sq", "alpha"}


class TestClosedForms:
    def test_f_at_one_is_exactly_zero(self, any_gen):
        assert float(any_gen.f(1.0)) == 0.0

    def test_kl_inverse_at_one(self, kl):
        assert float(kl.fdot_inv(1.0)) == 1.0
        # Newton on fdot(x) = 1 as an independent check
        x = 1.5
        for _ in range(50):
            x -= (kl.fdot(x) - 1.0) / kl.fddot(x)
        assert abs(x - 1.0) < 1e-14

    def test_chi2_inverse_at_zero(self, chi2):
        assert float(chi2.fdot_inv(0.0)) == 1.0

    def test_hellinger_by_hand(self):
        g = make_generator("hellinger_sq")
        assert float(g.fdot(4.0)) == pytest.approx(0.5, abs=1e-15)
        assert float(g.fdot_inv(0.5)) == pytest.approx(4.0, abs=1e-14)

    def test_strict_convexity(self, any_gen):
        x = domain_grid(any_gen, 1e-3, 1e3, 60)
        for a, b in zip(x[:-2], x[2:]):
            mid = 0.5 * (a + b)
            chord = 0.5 * (float(any_gen.f(a)) + float(any_gen.f(b)))
            assert float(any_gen.f(mid)) < chord

    def test_second_derivative_positive(self, any_gen):
        assert np.all(any_gen.fddot(domain_grid(any_gen)) > 0)

    def test_inverse_round_trip(self, any_gen):
        # rounding in fdot(x) bounds the recoverable accuracy: |dx| ~ eps |fdot| / fddot
        x = domain_grid(any_gen)
        d = any_gen.fdot(x)
        back = any_gen.fdot_inv(d)
        bound = 1e-12 * x + 4 * np.finfo(float).eps * (np.abs(d) + 1.0) / any_gen.fddot(x)
        assert np.all(np.abs(back - x) <= bound)

    def test_inverse_round_trip_relative_on_well_conditioned_range(self, any_gen):
        x = np.geomspace(1e-2, 1e2, 41)
        back = any_gen.fdot_inv(any_gen.fdot(x))
        assert np.max(np.abs(back - x) / x) < 1e-12

    def test_inverse_monotone(self, any_gen):
        lo, hi = any_gen.interval
        lo = max(lo, -30.0)
        hi = min(hi, 30.0)
        t = np.linspace(lo, hi, 2002)[1:-1]
        y = any_gen.fdot_inv(t)
        assert np.all(np.diff(y) > 0)

    def test_kl_gibbs_kernel(self, kl):
        beta, lam = -0.3, 0.7
        L = np.array([0.0, 0.5, 2.0])
        t = -(beta + L) / lam
        assert np.array_equal(kl.fdot_inv(t), np.exp(-(beta + L) / lam - 1.0))


class TestConjugate:
    def test_kl_at_one(self, kl):
        assert conjugate(kl, 1.0) == 1.0
        assert abs(grid_sup(kl, 1.0) - 1.0) < 1e-6

    def test_chi2_clamp(self, chi2):
        assert conjugate(chi2, -3.0) == -1.0
        assert abs(grid_sup(chi2, -3.0) - (-1.0)) < 1e-6

    def test_chi2_at_zero(self, chi2):
        assert conjugate(chi2, 0.0) == 0.0

    @pytest.mark.parametrize("key,t", [("kl", -2.0), ("kl", 0.5), ("reverse_kl", -0.5), ("reverse_kl", -3.0),
                                       ("chi_squared", -1.0), ("chi_squared", 1.5), ("hellinger_sq", -2.0),
                                       ("hellinger_sq", 0.5), ("alpha:0.5", -1.0), ("alpha:0.5", 1.2),
                                       ("alpha:2", -2.0), ("alpha:2", 1.0), ("alpha:-1", -0.5),
                                       ("alpha:-1", 0.3)])
    def test_matches_grid_supremum(self, key, t):
        g = parse_generator(key)
        assert conjugate(g, t) == pytest.approx(grid_sup(g, t), abs=1e-5)

    @pytest.mark.parametrize("key,t", [("reverse_kl", 0.1), ("hellinger_sq", 1.0), ("alpha:0.5", 2.0),
                                       ("alpha:-1", 1.0)])
    def test_above_domain_is_infinite(self, key, t):
        assert conjugate(parse_generator(key), t) == math.inf

    def test_fenchel_equality(self, any_gen):
        x = domain_grid(any_gen, 1e-3, 1e3, 80)
        s = any_gen.fdot(x)
        lhs = any_gen.conjugate(s) + any_gen.f(x)
        assert np.max(np.abs(lhs - x * s) / np.maximum(1.0, np.abs(x * s))) < 1e-9

    def test_conjugate_derivative_is_inverse(self, any_gen):
        x = np.geomspace(0.05, 20.0, 25)
        t = any_gen.fdot(x)
        h = 1e-6 * np.maximum(1.0, np.abs(t))
        fd = (any_gen.conjugate(t + h) - any_gen.conjugate(t - h)) / (2 * h)
        assert np.max(np.abs(fd - x) / np.maximum(1.0, x)) < 1e-6

    @settings(max_examples=200, deadline=None)
    @given(key=st.sampled_from(ALL_KEYS), t=st.floats(-50, 50))
    def test_young_inequality(self, key, t):
        # f*(t) >= t x - f(x) for every x > 0
        g = parse_generator(key)
        fs = conjugate(g, t)
        xs = np.geomspace(1e-4, 1e2, 200)
        with np.errstate(all="ignore"):
            assert np.all(fs + 1e-9 * (1 + abs(fs)) >= t * xs - g.f(xs))


class TestZeroLimit:
    @pytest.mark.parametrize("key", ["kl", "reverse_kl", "hellinger_sq", "alpha:0.5", "alpha:-1"])
    def test_minus_infinity(self, key):
        z = classify_zero_limit(parse_generator(key))
        assert z.kind == "minus_infinity" and not z.finite

    def test_chi2_finite(self, chi2):
        assert classify_zero_limit(chi2) == ("finite", -2.0)

    def test_alpha_two(self):
        g = make_generator("alpha", 2.0)
        z = classify_zero_limit(g)
        assert z == ("finite", -1.0)
        assert abs(float(g.fdot(1e-9)) - z.value) < 1e-8

    def test_alpha_above_one(self):
        assert classify_zero_limit(make_generator("alpha", 3.0)).value == pytest.approx(-0.5)


class TestConformance:
    @pytest.mark.parametrize("key,grid", [("kl", [0.5, 1, 2]), ("chi_squared", [1]), ("hellinger_sq", [4])])
    def test_examples_pass(self, key, grid):
        assert check_generator(parse_generator(key), grid).passed

    def test_chi2_identity_exact_at_one(self, chi2):
        row = check_generator(chi2, [1.0]).rows[0]
        assert row.fenchel_err == 0.0 and row.inverse_err == 0.0

    def test_log_grid_passes(self, any_gen):
        report = check_generator(any_gen, np.logspace(-2, 2, 50))
        assert report.passed, str(report)

    def test_out_of_domain_flagged(self, kl):
        report = check_generator(kl, [-1.0, 0.0, 1.0])
        assert report.flagged == [-1.0, 0.0]
        assert not report.passed

    def test_report_renders(self, kl):
        assert str(check_generator(kl, [1.0])).startswith("kl: PASS")
