import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sawlab.enumeration import (BudgetExceeded, InsufficientRange, SawCounts, bubble,
                                count_all_walks, count_saws, count_saws_reference, estimate_zc,
                                mass_estimate, susceptibility, susceptibility_lower_bound,
                                tail_bound, two_point)
from sawlab.lattice import symmetry_orbit


def brute_force_walks(d, n):
    """Every n-step walk as a tuple of sites (no pruning)."""
    import itertools
    steps = [tuple((1 if i == j else 0) * s for i in range(d)) for j in range(d) for s in (1, -1)]
    for seq in itertools.product(steps, repeat=n):
        x = (0,) * d
        sites = [x]
        for e in seq:
            x = tuple(a + b for a, b in zip(x, e))
            sites.append(x)
        yield sites


class TestCounts:
    def test_known_totals(self, counts_cache):
        assert counts_cache(2, 4).totals() == [1, 4, 12, 36, 100]
        assert counts_cache(3, 4).totals()[4] == 726

    def test_d1(self):
        c = count_saws(1, 7)
        for n in range(1, 8):
            assert c.tables[n] == {(n,): 1, (-n,): 1}

    @pytest.mark.parametrize("d,n", [(1, 9), (2, 7), (3, 5), (4, 4)])
    def test_dual_oracle(self, d, n):
        assert count_saws(d, n).tables == count_saws_reference(d, n).tables

    @pytest.mark.parametrize("d,n,r", [(1, 5, 3), (2, 8, 3), (2, 7, 4), (3, 5, 3), (2, 6, 5)])
    def test_dual_oracle_torus(self, d, n, r):
        assert count_saws(d, n, torus=r).tables == count_saws_reference(d, n, torus=r).tables

    def test_torus_depth_capped(self):
        c = count_saws(1, 10, torus=3)
        assert c.n_max == 2 and c.totals() == [1, 2, 2]

    def test_brute_force_d2(self):
        c = count_saws(2, 6)
        for n in range(7):
            table = {}
            for w in brute_force_walks(2, n):
                if len(set(w)) == len(w):
                    table[w[-1]] = table.get(w[-1], 0) + 1
            assert table == c.tables[n]

    def test_symmetry_and_walk_bound(self, counts_cache):
        c = counts_cache(3, 6)
        for n, t in enumerate(c.tables):
            assert sum(t.values()) <= (6 * 5 ** (n - 1) if n else 1)
            walks = count_all_walks(3, n)
            for x, v in t.items():
                assert v <= walks[x]
                assert all(t.get(y) == v for y in symmetry_orbit(x))

    def test_threads_do_not_change_result(self):
        assert count_saws(3, 6, threads=1).tables == count_saws(3, 6, threads=4).tables

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            count_saws(6, 20)

    def test_cache_roundtrip(self, tmp_path, counts_cache):
        c = counts_cache(2, 6)
        path = tmp_path / "c.txt"
        c.save(path)
        assert SawCounts.load(path) == c
        text = path.read_text().replace("\n1 1 0 1\n", "\n1 1 0 2\n")
        path.write_text(text)
        with pytest.raises(ValueError):
            SawCounts.load(path)

    def test_cache_accepts_leading_header(self, counts_cache):
        c = counts_cache(2, 4)
        assert SawCounts.loads("# produced by x\n" + c.dumps()) == c


class TestTwoPoint:
    def test_z_zero(self, counts_cache):
        s = two_point(counts_cache(2, 5), 0)
        assert dict(s.G.items()) == {(0, 0): 1}

    def test_d1_exact(self):
        s = two_point(count_saws(1, 8), Fraction(2, 7))
        for x in range(-8, 9):
            assert s.G[(x,)] == Fraction(2, 7) ** abs(x)

    def test_d2_listing(self):
        c = count_saws(2, 5)
        s = two_point(c, 0.1)
        assert s.G[(0, 0)] == 1
        direct = sum(0.1 ** n for n in range(6) for w in brute_force_walks(2, n)
                     if len(set(w)) == len(w) and w[-1] == (1, 0))
        assert s.G[(1, 0)] == pytest.approx(direct, rel=1e-14)

    def test_certificate(self, counts_cache):
        c = counts_cache(2, 10)
        assert two_point(c, 0.2).certified
        assert not two_point(c, 0.4).certified
        assert tail_bound(2, 10, 0.2) == pytest.approx(4 * 3 ** 10 * 0.2 ** 11 / 0.4)
        assert tail_bound(2, 10, 0) == 0
        with pytest.raises(ValueError):
            tail_bound(2, 10, 0.4)

    @pytest.mark.parametrize("d,n", [(2, 9), (3, 7)])
    def test_tail_dominates_next_term(self, d, n, counts_cache):
        nxt = counts_cache(d, n + 1).totals()[n + 1]
        for z in (0.05, 0.1, 0.15):
            if (2 * d - 1) * z < 1:
                assert tail_bound(d, n, z) >= nxt * z ** (n + 1)

    @given(st.floats(0.0, 0.3), st.floats(0.0, 0.3))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        c = count_saws(2, 6)
        g1, g2 = two_point(c, lo).G, two_point(c, hi).G
        g3 = two_point(c.truncate(4), hi).G
        assert all(g2[x] >= g1[x] and g2[x] >= g3[x] for x in g2.keys())


class TestObservables:
    def test_chi(self, counts_cache):
        assert susceptibility(two_point(counts_cache(2, 4), 0))[0] == 1
        s = two_point(count_saws(1, 60), 0.3)
        assert s.G.total() == pytest.approx(1.3 / 0.7, rel=1e-14)

    def test_chi_lower_bound(self, counts_cache):
        c = counts_cache(2, 12)
        zc, _ = estimate_zc(c.totals())
        chi, tail = susceptibility(two_point(c, 0.2))
        assert chi + tail >= susceptibility_lower_bound(0.2, zc)

    def test_zc_estimate(self, counts_cache):
        # connective constants: 2.63816 (d=2), 4.68404 (d=3)
        zc2, _ = estimate_zc(counts_cache(2, 12).totals())
        zc3, _ = estimate_zc(counts_cache(3, 9).totals())
        assert zc2 == pytest.approx(1 / 2.63816, rel=5e-3)
        assert zc3 == pytest.approx(1 / 4.68404, rel=5e-3)
        with pytest.raises(InsufficientRange):
            estimate_zc([1, 4, 12])

    def test_bubble(self, counts_cache):
        assert bubble(two_point(counts_cache(2, 5), 0)) == 0
        z = 0.4
        assert bubble(two_point(count_saws(1, 60), z)) == pytest.approx(2 * z * z / (1 - z * z), rel=1e-13)
        c5 = counts_cache(5, 8)
        assert bubble(two_point(c5, 0.11)) < (math.sqrt(5) - 1) / 2

    def test_bubble_monotone(self, counts_cache):
        c = counts_cache(3, 7)
        vals = [bubble(two_point(c.truncate(n), 0.15), 0.2) for n in range(8)]
        assert vals == sorted(vals)
        assert bubble(two_point(c, 0.15), 0.3) >= vals[-1]

    def test_mass(self, counts_cache):
        assert mass_estimate(two_point(count_saws(1, 12), 0.3), range(1, 8)) == pytest.approx(-math.log(0.3))
        c = counts_cache(2, 12)
        ms = [mass_estimate(two_point(c, z), range(1, 6)) for z in (0.05, 0.1, 0.15, 0.2)]
        assert ms == sorted(ms, reverse=True)

    def test_mass_insufficient(self, counts_cache):
        with pytest.raises(InsufficientRange):
            mass_estimate(two_point(counts_cache(2, 4), 0.1), range(1, 8))
