import itertools
import math
from fractions import Fraction

import pytest

from sawlab import torus as tr
from sawlab.enumeration import count_saws
from sawlab.lattice import Box, project_torus, unit_vectors


def torus_saws(d, r, n_max):
    """Self-avoiding torus walks from the origin, as projected site tuples."""
    steps = unit_vectors(d)
    out = []

    def rec(path):
        out.append(tuple(path))
        if len(path) > n_max:
            return
        for e in steps:
            y = project_torus(tuple(a + b for a, b in zip(path[-1], e)), r)
            if y not in path:
                rec(path + [y])
    rec([(0,) * d])
    return out


def all_walks(d, n):
    steps = unit_vectors(d)
    for seq in itertools.product(steps, repeat=n):
        sites = [(0,) * d]
        for e in seq:
            sites.append(tuple(a + b for a, b in zip(sites[-1], e)))
        yield tuple(sites)


def kplus_pairwise(sites, r):
    for a, b in itertools.combinations(sites, 2):
        diff = [p - q for p, q in zip(a, b)]
        if any(diff) and all(c % r == 0 for c in diff):
            return 0
    return 1


class TestUnfolding:
    def test_examples(self):
        w = tr.unfold([(0, 0), (1, 0), (-1, 0), (0, 0)], 3)
        assert w.sites == ((0, 0), (1, 0), (2, 0), (3, 0))
        assert tr.interaction_weights(w, 3) == (1, 0, 0)
        w = tr.unfold([(0,), (-1,), (1,)], 3)
        assert w.sites == ((0,), (-1,), (-2,))
        assert tr.interaction_weights(w, 3) == (1, 1, 1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            tr.unfold([(0, 0), (1, 1)], 4)
        with pytest.raises(ValueError):
            tr.unfold([(1, 0), (2, 0)], 4)
        with pytest.raises(ValueError):
            tr.unfold([(0,), (1,)], 2)
        with pytest.raises(ValueError):
            tr.WalkRecord(((0,), (2,)))

    @pytest.mark.parametrize("d,r,n", [(2, 3, 6), (2, 4, 6), (1, 3, 2), (3, 3, 4)])
    def test_round_trip_exhaustive(self, d, r, n):
        walks = torus_saws(d, r, n)
        seen = set()
        for t in walks:
            w = tr.unfold(t, r)
            assert w.project(r) == t
            K, KT, Kp = tr.interaction_weights(w, r)
            assert KT == 1 and K == 1 and Kp == 1
            seen.add(w.sites)
        assert len(seen) == len(walks)

    def test_torus_counts_match_listing(self):
        walks = torus_saws(2, 3, 6)
        c = count_saws(2, 6, torus=3)
        assert len(walks) == sum(c.totals())

    @pytest.mark.parametrize("d,r,n", [(2, 3, 7), (1, 3, 7), (2, 4, 6), (3, 3, 5)])
    def test_weight_factorisation_exhaustive(self, d, r, n):
        for k in range(n + 1):
            for sites in all_walks(d, k):
                w = tr.WalkRecord(sites)
                K, KT, Kp = tr.interaction_weights(w, r)
                assert K == int(len(set(sites)) == len(sites))
                assert KT == int(len(set(w.project(r))) == len(sites))
                assert Kp == kplus_pairwise(sites, r)
                assert KT == K * Kp


CASES = [(1, 3, n) for n in range(1, 7)] + [(2, r, n) for r in (3, 4) for n in range(1, 8)]


class TestPsi:
    @pytest.mark.parametrize("d,r,n", CASES)
    def test_discrepancy_identity(self, counts_cache, d, r, n):
        Z = counts_cache(d, n)
        T = counts_cache(d, n, r)
        for x in Box.cube(d, r // 2).points():
            if not all(-(r // 2) <= c <= (r + 1) // 2 - 1 for c in x):
                continue
            for z in (Fraction(1, 4), 0.3):
                pv = tr.psi_sums(Z, T, r, x, z)
                disc = tr.interaction_discrepancy(d, r, z, n, x)
                if isinstance(z, Fraction):
                    assert pv.difference == disc
                    assert pv.psi_T >= 0 and pv.difference >= 0
                else:
                    assert abs(pv.difference - disc) <= 1e-14
                if n < r:
                    assert disc == 0

    def test_d1_polynomial(self):
        # six rational points pin down a polynomial of degree <= 5
        for z in [Fraction(k, 7) for k in range(1, 7)]:
            assert tr.interaction_discrepancy(1, 3, z, 5, (1,)) == z ** 4 + z ** 5

    def test_complete_torus_table(self, counts_cache):
        Z = counts_cache(1, 6)
        T = counts_cache(1, 2, 3)
        pv = tr.psi_sums(Z, T, 3, (1,), Fraction(1, 5))
        z = Fraction(1, 5)
        # G^T(1) on the 3-cycle: one step forward or two steps backward
        assert pv.psi_T + (z + 0) == z + z ** 2

    def test_psi_validation(self, counts_cache):
        with pytest.raises(ValueError):
            tr.psi_sums(counts_cache(2, 4), counts_cache(2, 3, 3), 3, (0, 0), 0.1)
        with pytest.raises(ValueError):
            tr.psi_sums(counts_cache(2, 4), counts_cache(2, 4, 3), 3, (2, 0), 0.1)
        with pytest.raises(ValueError):
            tr.psi_sums(counts_cache(2, 4, 3), counts_cache(2, 4, 3), 3, (0, 0), 0.1)


class TestLatticeSums:
    def test_zero_amplitude(self):
        assert tr.lattice_tail_sum(0.0, 2.0, 0.5, 3, 4) == (0.0, 0.0)

    def test_heavy_mass(self):
        r = 4
        total, rem = tr.lattice_tail_sum(1.0, 2.0, 50 / r, 3, r)
        assert 0 < total < 1e-15 and rem <= 1e-10 * total

    @pytest.mark.parametrize("d,c", [(3, 0.3), (3, 1.7), (5, 2.0), (5, 3.0)])
    def test_scaling(self, d, c):
        vals = [tr.lattice_tail_sum(1.0, 2.0, c / r, d, r)[0] * r ** (d - 2) for r in (4, 6, 8)]
        assert vals[1] == pytest.approx(vals[0], rel=1e-8)
        assert vals[2] == pytest.approx(vals[0], rel=1e-8)

    def test_against_direct_sum(self):
        d, r, nu, x = 3, 5, 0.6, (1, -2, 0)
        total, rem = tr.lattice_tail_sum(2.0, 1.0, nu, d, r, x, rtol=1e-13)
        direct = 0.0
        for u in itertools.product(range(-12, 13), repeat=d):
            if any(u):
                y = [a + r * b for a, b in zip(x, u)]
                n = math.sqrt(sum(c * c for c in y))
                direct += 2.0 * max(n, 1.0) ** -(d - 1) * math.exp(-nu * n)
        assert total == pytest.approx(direct, rel=1e-11)
        assert abs(total - direct) <= rem + 1e-14 * direct

    def test_point_budget(self):
        total, rem = tr.lattice_tail_sum(1.0, 2.0, 0.01, 5, 4, max_points=10 ** 5)
        assert total > 0 and rem > 1e-10 * total

    def test_validation(self):
        with pytest.raises(ValueError):
            tr.lattice_tail_sum(1.0, 2.0, 0.0, 3, 4)
        with pytest.raises(ValueError):
            tr.lattice_tail_sum(1.0, 2.0, 1.0, 3, 4, x=(3, 0, 0))


class TestPlateau:
    def test_enumeration_report(self):
        rep = tr.plateau_report(2, 3, [0.1, 0.2], source="enum", n_max=8)
        assert rep.flags == {"unfold_inequality": True, "psiT_nonnegative": True}
        assert all(row.GT >= row.G for row in rep.rows)
        zc = rep.window["zc"]
        assert rep.window["window"] == pytest.approx([zc - 3 ** -2.0, zc - 3 ** -1.0])
        back = tr.PlateauReport.loads_csv(rep.dumps_csv())
        assert [b["x"] for b in back] == [row.x for row in rep.rows]
        assert [b["GT"] for b in back] == [row.GT for row in rep.rows]

    def test_sources_validated(self):
        with pytest.raises(ValueError):
            tr.plateau_report(2, 3, [0.1], source="enum")
        with pytest.raises(ValueError):
            tr.plateau_report(2, 3, [0.1], source="magic", n_max=3)

    def test_plot_data(self):
        assert tr.emit_plot_data(None) == "z,xinf,x,GT,reference\n"
        assert tr.load_plot_data(tr.emit_plot_data(None)) == []
        rep = tr.plateau_report(2, 4, [0.15], source="enum", n_max=6)
        rows = tr.load_plot_data("# header\n" + tr.emit_plot_data(rep))
        assert len(rows) == len(rep.rows)
        for a, b in zip(rows, rep.rows):
            assert a["x"] == b.x and a["GT"] == b.GT and a["reference"] == b.ref
            assert a["xinf"] == max(abs(c) for c in b.x)

    def test_default_points_in_domain(self):
        for d, r in [(2, 3), (3, 4), (5, 8)]:
            pts = tr.default_x_set(d, r)
            assert (0,) * d in pts
            assert len(pts) == len(set(pts))
            assert all(project_torus(p, r) == p for p in pts)
