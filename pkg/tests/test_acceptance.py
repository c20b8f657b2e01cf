"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion k] PASS|FAIL ...`` line before asserting.
"""

import filecmp
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from sawlab import cli, decomposition as dec, lace, torus as tr
from sawlab.enumeration import (bubble, count_saws, count_saws_reference, estimate_zc,
                                mass_estimate, susceptibility, two_point)
from sawlab.lattice import Box, LatticeField, convolve, delta, exact_moment, fourier_eval, rw_kernel
from sawlab.rw_green import (RwParams, green_quadrature_many, green_series_table, m0_of_mu)

D5_ZS = [0.01, 0.02, 0.03, 0.04, 0.05]


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def test_01_rw_oracles(report):
    t0 = time.perf_counter()
    worst = 0.0
    for mu in (0.05, 0.1, 0.15):
        p = RwParams(3, mu)
        t = green_series_table(p, 5)
        pts = list(Box.cube(3, 5).points())
        q = green_quadrature_many(p, pts, tol=1e-10)
        worst = max(worst, float(np.max(np.abs(np.array([t[x] for x in pts]) - q.values))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 60
    assert report(1, ok, f"max |series - quadrature| = {worst:.2e}, {dt:.1f}s"), (worst, dt)


def test_02_green_identities(report):
    d, mu = 3, 0.1
    p = RwParams(d, mu)
    t = green_series_table(p, 60, tol=1e-12)
    total = float(t.values.sum())
    sum_err = abs(total - 1 / (1 - p.q))

    small = green_series_table(p, 6, tol=1e-12)
    C = small.field()
    res = convolve(rw_kernel(d, mu), C, Box.cube(d, 5)) - delta(d, 1.0)
    resid = res.sup_norm()
    resid_ok = resid <= (1 + p.q) * small.tail + 1e-15

    crit = m0_of_mu(RwParams(d, 1 / (2 * d))) == 0.0
    pn = RwParams(d, (1 - 1e-3) / (2 * d))
    ratio = m0_of_mu(pn) ** 2 / (pn.omega * (1 - pn.q))
    ok = sum_err <= 1e-10 and resid_ok and crit and abs(ratio - 1) <= 0.01
    assert report(2, ok, f"|sum C - 1/(1-q)| = {sum_err:.1e}, residual {resid:.1e} "
                         f"(cert {small.tail:.1e}), m0(mu_c) = 0: {crit}, ratio {ratio:.5f}")


def test_03_enumeration_dual_oracle(report):
    t0 = time.perf_counter()
    agree = True
    for d, n in [(2, 10), (3, 8), (5, 6)]:
        agree &= count_saws(d, n).tables == count_saws_reference(d, n).tables
    totals = count_saws(2, 4).totals()[1:]
    dt = time.perf_counter() - t0
    ok = agree and totals == [4, 12, 36, 100] and dt < 600
    assert report(3, ok, f"oracles agree: {agree}, d=2 totals {totals}, {dt:.1f}s")


def test_04_one_dimension(report, counts_cache):
    c = counts_cache(1, 60)
    zq = Fraction(1, 3)
    G = two_point(c, zq).G
    exact_G = all(G[(x,)] == zq ** abs(x) for x in range(-60, 61))
    sk = lace.invert_series(c)
    exact_F = all(phi == ({(0,): 1} if n == 0 else {(0,): 2} if n % 2 == 0 else {(1,): -1, (-1,): -1})
                  for n, phi in enumerate(sk.coeffs))
    err = 0.0
    for z in (0.1, 0.3, 0.5):
        ser = two_point(c, z)
        chi, tail = susceptibility(ser)
        err = max(err, abs(chi - (1 + z) / (1 - z)) - tail)
        err = max(err, abs(bubble(ser) - 2 * z * z / (1 - z * z)) - 2 * tail)
        for K in (lace.invert_to_F(ser), sk.at(z)):
            pi = lace.recover_pi(K)
            err = max(err, abs(K.F[(0,)] - (1 + z * z) / (1 - z * z)), abs(K.F[(1,)] + z / (1 - z * z)),
                      abs(pi[(0,)] + 2 * z * z / (1 - z * z)), abs(pi[(1,)] - z ** 3 / (1 - z * z)))
    ok = exact_G and exact_F and err <= 1e-12
    assert report(4, ok, f"exact G {exact_G}, exact F coefficients {exact_F}, float error {err:.1e}")


def test_05_moment_cancellation(report, counts_cache):
    cases = [(1, 12, Fraction(1, 3)), (2, 10, Fraction(1, 10)), (2, 10, Fraction(1, 5)),
             (3, 8, Fraction(1, 20)), (5, 6, Fraction(1, 50))]
    exact = True
    for d, n, z in cases:
        for order in range(1, n + 1):
            E = dec.match(lace.invert_series(counts_cache(d, n), order).at(z)).E
            exact &= E.total() == 0 and exact_moment(E, 2) == 0
    d, mu = 3, Fraction(1, 10)
    K = lace.rw_kernel_table(d, mu)
    lam, m = dec.match_lambda_mu(K)
    E = dec.build_E(K, lam, m)
    C = green_series_table(RwParams(d, float(mu)), 6, tol=1e-13).field()
    r = dec.remainder_f(C, lam, m, E, box=3, c_radius=6, F=K.F)
    fixed = lam == 1 and m == mu and len(E) == 0 and len(r.f_conv) == 0 and r.f_sub.sup_norm() == 0
    ok = exact and fixed
    assert report(5, ok, f"exact cancellation on {len(cases)} kernel families: {exact}, "
                         f"RW fixed point lambda={lam} mu={m} f=0: {fixed}")


def test_06_infrared(report, counts_cache):
    results = []
    for d in (3, 5):
        mu_c = 1 / (2 * d)
        K = lace.rw_kernel_table(d, mu_c)
        K2, _, _ = lace.infrared_constant(K, grid=16)
        edge = (math.pi,) + (0.0,) * (d - 1)
        at_edge = (fourier_eval(K.F, edge).real - float(K.F.total())) / math.pi ** 2
        results.append(K2 >= 2 * mu_c / math.pi ** 2 and abs(at_edge - K2) <= 1e-12 * K2)
    c = counts_cache(5, 10)
    sk = lace.invert_series(c)
    kernels = [sk.at(z) for z in D5_ZS]
    masses = [mass_estimate(two_point(c, z), range(1, 6)) for z in D5_ZS]
    rep = lace.check_assumption(kernels, masses)
    finite = all(math.isfinite(float(i.value)) for i in rep.items)
    ok = all(results) and rep.passed and finite
    items = ", ".join(f"{i.name.split()[0]}={'ok' if i.passed else 'no'}" for i in rep.items)
    assert report(6, ok, f"RW witness {results}, d=5 items {items}, K1={rep.K1:.3g}, K2={rep.K2:.3g}")


def test_07_unfolding(report, counts_cache):
    worst, exact, zero_below_r = 0.0, True, True
    for d, rs, n_top in [(1, (3,), 6), (2, (3, 4), 7)]:
        for r in rs:
            for n in range(1, n_top + 1):
                Z, T = counts_cache(d, n), counts_cache(d, n, r)
                for x in Box.cube(d, r // 2).points():
                    if not all(-(r // 2) <= v <= (r + 1) // 2 - 1 for v in x):
                        continue
                    for z in (0.2, 0.35):
                        diff = tr.psi_sums(Z, T, r, x, z).difference
                        worst = max(worst, abs(diff - tr.interaction_discrepancy(d, r, z, n, x)))
                    zq = Fraction(2, 7)
                    disc = tr.interaction_discrepancy(d, r, zq, n, x)
                    exact &= tr.psi_sums(Z, T, r, x, zq).difference == disc
                    if n < r:
                        zero_below_r &= disc == 0
    poly = all(tr.interaction_discrepancy(1, 3, z, 5, (1,)) == z ** 4 + z ** 5
               for z in [Fraction(k, 11) for k in range(1, 7)])
    ok = worst <= 1e-14 and exact and zero_below_r and poly
    assert report(7, ok, f"max float gap {worst:.1e}, exact {exact}, zero below r {zero_below_r}, "
                         f"z^4+z^5 {poly}")


def test_08_decay_stability(report, counts_cache):
    c = counts_cache(5, 10)
    sk = lace.invert_series(c)
    g_drift, f_drift, sub_drift = [], [], []
    for z in D5_ZS:
        ser = two_point(c, z)
        m_hat = mass_estimate(ser, range(1, 6))
        g_drift.append(dec.decay_trend(ser.G, 5, [5, 10], rate=0.1 * m_hat).drift)
        K = sk.at(z)
        res = dec.match(K)
        r = dec.remainder_f(ser.G, res.lam, res.mu, res.E, box=4,
                            residual_F=K.meta["residual_bound"])
        f_drift.append(dec.check_f_decay(r.f_conv, 0.1 * m_hat, 5, radii=[2, 4])[1].drift)
        sub_drift.append(dec.check_f_decay(r.f_sub, 0.1 * m_hat, 5, radii=[2, 4])[1].drift)
    ok = max(g_drift) < 0.05 and max(f_drift) < 0.05
    assert report(8, ok, f"G drift max {max(g_drift):.3f}, f (C*E*G) drift max {max(f_drift):.3f}; "
                         f"f by subtraction drift {', '.join(f'{v:.2f}' for v in sub_drift)} "
                         f"(truncation-limited, not asserted)")


@pytest.mark.slow
def test_09_plateau(report, counts_cache):
    zc, _ = estimate_zc(counts_cache(5, 10).totals())
    r, d = 8, 5
    z = zc - r ** (-d / 2)
    t0 = time.perf_counter()
    rep = tr.plateau_report(d, r, [z], x_set=[(0,) * 5, (3, 0, 0, 0, 0), (4, 0, 0, 0, 0),
                                             (3, 3, 3, 3, 3), (-4, -4, -4, -4, -4)],
                            source="mc",
                            mc_config={"steps": 10 ** 8, "burnin": 10 ** 6, "chains": 4,
                                       "radius": 4, "seed": 2024})
    dt = time.perf_counter() - t0
    meta = rep.meta[str(z)]
    shells = {s: (meta["shell_GT"][s][0], meta["shell_G"][s][0]) for s in (3, 4)}
    level = rep.chi[z] / r ** d
    ok = rep.flags["shell_GT_above_G"] and rep.flags["shell_GT_within_3x_plateau"] and dt <= 1800
    detail = ", ".join(f"|x|={s}: GT {a:.2e} G {b:.2e}" for s, (a, b) in shells.items())
    assert report(9, ok, f"z={z:.5f}, chi/r^d={level:.2e}, {detail}, {dt:.0f}s")


def _cli_twice(tmp_path, name, argv, capsys):
    outs = []
    for tag in ("a", "b"):
        stem = str(tmp_path / f"{name}_{tag}")
        code = cli.run(argv + ["--out", stem])
        outs.append((code, capsys.readouterr().out,
                     {p.name[len(name) + 2:]: p.read_bytes() for p in sorted(tmp_path.glob(f"{name}_{tag}*"))}))
    (c1, o1, f1), (c2, o2, f2) = outs
    return c1 == 0 and c2 == 0 and o1 == o2 and f1 == f2 and len(f1) > 0


def test_10_determinism(report, tmp_path, capsys):
    counts = str(tmp_path / "seed.counts")
    cli.run(["saw-enum", "--dim", "3", "--nmax", "6", "--out", str(tmp_path / "seed")])
    capsys.readouterr()
    runs = {
        "rwgreen": ["rw-green", "--dim", "3", "--mu", "0.1", "--box", "2"],
        "enum": ["saw-enum", "--dim", "2", "--nmax", "8", "--z", "1/5"],
        "enumtorus": ["saw-enum", "--dim", "2", "--nmax", "6", "--torus", "4"],
        "mc": ["saw-mc", "--dim", "3", "--z", "0.15", "--steps", "100000", "--burnin", "1000",
               "--chains", "2", "--radius", "3", "--seed", "9"],
        "mctorus": ["saw-mc", "--dim", "2", "--torus", "5", "--z", "0.2", "--steps", "100000",
                    "--burnin", "1000", "--seed", "9"],
        "lace": ["lace", "--from-counts", counts, "--z", "1/20", "1/10", "--check-assumption"],
        "decomp": ["decomp", "--from-counts", counts, "--z", "1/20"],
        "plateau": ["plateau", "--dim", "2", "--r", "4", "--z-grid", "0.1", "0.2", "--nmax", "6"],
        "plateaumc": ["plateau", "--dim", "2", "--r", "4", "--z-grid", "0.2", "--source", "mc",
                      "--steps", "50000", "--burnin", "1000"],
    }
    same = {k: _cli_twice(tmp_path, k, v, capsys) for k, v in runs.items()}
    ok = all(same.values())
    bad = [k for k, v in same.items() if not v]
    assert report(10, ok, f"{len(runs)} subcommands byte-identical on repeat"
                          + (f"; differing: {bad}" if bad else ""))
