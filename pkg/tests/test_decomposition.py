import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sawlab import decomposition as dec
from sawlab import lace
from sawlab.enumeration import two_point
from sawlab.lattice import Box, LatticeField, delta, exact_moment, rw_kernel, xvee
from sawlab.rw_green import RwParams, green_series_table, m0_of_mu, mu_of_m0


class TestMatching:
    @given(st.fractions(Fraction(1, 100), Fraction(1, 6)), st.integers(1, 5))
    def test_random_walk_fixed_point(self, mu, d):
        mu = min(mu, Fraction(1, 2 * d))
        lam, m = dec.match_lambda_mu(lace.rw_kernel_table(d, mu))
        assert lam == 1 and m == mu
        E = dec.build_E(lace.rw_kernel_table(d, mu), lam, m)
        assert len(E) == 0

    def test_delta_kernel(self):
        lam, mu = dec.match_lambda_mu(delta(3))
        assert lam == 1 and mu == 0

    @pytest.mark.parametrize("d,n,z", [(2, 8, Fraction(1, 10)), (3, 6, Fraction(1, 20)),
                                       (5, 6, Fraction(1, 50)), (1, 10, Fraction(1, 3))])
    def test_exact_moment_cancellation(self, counts_cache, d, n, z):
        K = lace.invert_series(counts_cache(d, n)).at(z)
        res = dec.match(K)
        assert isinstance(res.lam, (int, Fraction)) and isinstance(res.mu, (int, Fraction))
        assert res.E.total() == 0 and exact_moment(res.E, 2) == 0

    def test_float_path_checks_moments(self, counts_cache):
        K = lace.invert_series(counts_cache(3, 6)).at(0.05)
        lam, mu = dec.match_lambda_mu(K)
        E = dec.build_E(K, lam, mu)
        assert abs(E.total()) < 1e-12
        with pytest.raises(dec.MomentCancellationError):
            dec.build_E(K, lam * 1.01, mu)

    def test_exact_mismatch_raises(self):
        K = lace.rw_kernel_table(2, Fraction(1, 8))
        with pytest.raises(dec.MomentCancellationError):
            dec.build_E(K, Fraction(1), Fraction(1, 9))

    def test_nonpositive_denominator(self):
        F = LatticeField({(1,): -1, (-1,): -1}, 1, symmetric=True)
        with pytest.raises(dec.MatchError):
            dec.match_lambda_mu(F)

    def test_uncertainty_interval(self, counts_cache):
        K = lace.invert_series(counts_cache(3, 6)).at(0.05)
        lam, mu, (lo, hi) = dec.match_lambda_mu(K, uncertainty=1e-4)
        assert lo < lam < hi

    def test_d5_lambda_range(self, counts_cache):
        sk = lace.invert_series(counts_cache(5, 8))
        for z in (0.01, 0.03, 0.05):
            lam, mu = dec.match_lambda_mu(sk.at(z))
            assert 0.5 < lam < 2
            assert 0 < mu * 10 < 1


class TestRemainder:
    def test_random_walk_remainder_vanishes(self):
        d, mu = 3, Fraction(1, 10)
        K = lace.rw_kernel_table(d, mu)
        lam, m = dec.match_lambda_mu(K)
        E = dec.build_E(K, lam, m)
        G = green_series_table(RwParams(d, float(mu)), 6, tol=1e-13).field()
        r = dec.remainder_f(G, lam, m, E, box=3, c_radius=6, F=K.F)
        assert len(r.f_conv) == 0
        assert r.f_sub.sup_norm() == 0.0
        assert not r.flagged

    @pytest.mark.parametrize("d,n,z", [(2, 10, 0.1), (3, 8, 0.05)])
    def test_routes_agree_within_certificate(self, counts_cache, d, n, z):
        c = counts_cache(d, n)
        K = lace.invert_series(c).at(z)
        res = dec.match(K)
        G = two_point(c, z).G
        r = dec.remainder_f(G, res.lam, res.mu, res.E, box=3, F=K.F)
        assert r.discrepancy <= r.certificate
        assert r.meta["c_radius"] == 5

    def test_needs_kernel_or_residual(self, counts_cache):
        c = counts_cache(2, 6)
        K = lace.invert_series(c).at(0.1)
        res = dec.match(K)
        with pytest.raises(ValueError):
            dec.remainder_f(two_point(c, 0.1), res.lam, res.mu, res.E, box=2)


class TestDecay:
    @pytest.mark.parametrize("d", [3, 5])
    def test_critical_profile_is_stable(self, d):
        f = LatticeField({x: xvee(x) ** (2 - d) for x in Box.cube(d, 4 if d == 3 else 3).points()}, d)
        sup, rep = dec.check_f_decay(f, 0.0, d, radii=[1, 2])
        assert sup == pytest.approx(1.0)
        assert rep.stable and rep.drift == pytest.approx(0.0, abs=1e-12)

    def test_slow_profile_drifts(self):
        d = 3
        f = LatticeField({x: xvee(x) ** -0.5 for x in Box.cube(d, 4).points()}, d)
        _, rep = dec.check_f_decay(f, 0.0, d, radii=[2, 4])
        assert not rep.stable and rep.drift > 0.05

    def test_zero_remainder(self):
        sup, rep = dec.check_f_decay(LatticeField({}, 3), 0.1, 3, radii=[1, 2])
        assert sup == 0 and rep.drift == 0

    def test_tilt_weight(self):
        f = LatticeField({(2, 0, 0): 1.0}, 3)
        assert dec.weighted_sup(f, 3, 2, m=0.5) == pytest.approx(2 * math.e)
        assert dec.weighted_sup(f, 3, 1, m=0.5) == 0.0

    def test_E_bound(self, counts_cache):
        ratio, meta = dec.check_E_bound(LatticeField({}, 3), 0.1, 8, 1.0)
        assert ratio == 0
        K = lace.invert_series(counts_cache(3, 6)).at(Fraction(1, 20))
        E = dec.match(K).E
        ratio, meta = dec.check_E_bound(E, 0.0, 16, 1.0)
        assert abs(meta["E_hat_m_0"]) < 1e-14
        assert math.isfinite(ratio)
        with pytest.raises(ValueError):
            dec.check_E_bound(E, 0.0, 16, 0.0)

    def test_empirical_constants(self, counts_cache):
        G = two_point(counts_cache(3, 6), 0.1)
        pairs = dec.empirical_constants(G, 1.0, 3, c1_grid=(0.0, 0.5))
        assert pairs[0][0] == 0.0 and pairs[0][1] >= 1.0
        assert pairs[1][1] >= pairs[0][1]

    def test_mass_ratio(self):
        d = 5
        mus = [mu_of_m0(d, m) for m in (0.5, 1.0, 2.0)]
        masses = [m0_of_mu(RwParams(d, mu)) for mu in mus]
        assert dec.mass_ratio(masses, mus, d) == pytest.approx([1.0, 1.0, 1.0])
        assert dec.mass_ratio([0.3], [1 / (2 * d)], d) == [math.inf]

    def test_match_result_json(self, counts_cache):
        res = dec.match(lace.invert_series(counts_cache(2, 6)).at(Fraction(1, 10)))
        js = res.to_json()
        assert js["sum_E"] == 0 and js["mu_omega"] == pytest.approx(4 * float(res.mu))
