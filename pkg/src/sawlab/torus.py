"""Torus versus Z^d two-point functions.

A torus walk unfolds to the unique Z^d walk with the same increments. For a
Z^d walk ``w`` let ``K = 1`` if it is self-avoiding, ``K+ = 1`` if no two of
its sites differ by a nonzero multiple of ``r``, and ``K^T = K K+`` (its
projection is self-avoiding on the torus). Summing over images,

    psi(x) - psi^T(x) = sum_u sum_n sum_w z^n K(w) (1 - K+(w)),

with ``psi(x) = sum_{u != 0} G(x + r u)`` and ``psi^T(x) = G^T(x) - G(x)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .enumeration import (BudgetExceeded, SawCounts, count_saws, estimate_zc, mass_estimate,
                          susceptibility, tail_bound, two_point, InsufficientRange)
from .lattice import format_value, in_fundamental_domain, norm2, project_torus, torus_reduce, xvee


@dataclass(frozen=True)
class WalkRecord:
    """Sites of a nearest-neighbour walk starting at the origin."""

    sites: tuple

    def __post_init__(self):
        s = self.sites
        if not s or any(c != 0 for c in s[0]):
            raise ValueError("walk must start at the origin")
        for a, b in zip(s, s[1:]):
            if sum(abs(p - q) for p, q in zip(a, b)) != 1:
                raise ValueError(f"non-unit step {a} -> {b}")

    @property
    def length(self) -> int:
        return len(self.sites) - 1

    def project(self, r: int) -> tuple:
        return tuple(project_torus(x, r) for x in self.sites)


def unfold(torus_sites, r: int) -> WalkRecord:
    """The Z^d walk whose increments match those of a torus walk (r >= 3)."""
    if r < 3:
        raise ValueError("unfolding needs r >= 3")
    sites = [tuple(0 for _ in torus_sites[0])]
    if any(torus_reduce(c, r) != 0 for c in torus_sites[0]):
        raise ValueError("torus walk must start at the origin")
    for a, b in zip(torus_sites, torus_sites[1:]):
        inc = tuple(torus_reduce(q - p, r) for p, q in zip(a, b))
        if sum(abs(c) for c in inc) != 1:
            raise ValueError(f"not a torus step: {a} -> {b}")
        sites.append(tuple(s + c for s, c in zip(sites[-1], inc)))
    return WalkRecord(tuple(sites))


def interaction_weights(w: WalkRecord, r: int) -> tuple[int, int, int]:
    """``(K, K^T, K+)`` for a Z^d walk and torus side ``r``."""
    K = int(len(set(w.sites)) == len(w.sites))
    proj = w.project(r)
    KT = int(len(set(proj)) == len(proj))
    Kp = 1
    seen: dict = {}
    for x, p in zip(w.sites, proj):
        prev = seen.setdefault(p, x)
        if prev != x:
            Kp = 0
            break
    if not K:
        # K+ still looks at distinct Z^d sites only; a repeated Z^d site is not a torus-only clash
        Kp = int(all(len({x for x, q in zip(w.sites, proj) if q == p}) == 1 for p in set(proj)))
    if KT != K * Kp:
        raise AssertionError("K^T = K K+ violated")
    return K, KT, Kp


# --------------------------------------------------------------------------
# psi sums
# --------------------------------------------------------------------------

@dataclass
class PsiValues:
    psi: object
    psi_T: object
    tail: float

    @property
    def difference(self):
        return self.psi - self.psi_T


def _images(x, r: int, reach: int):
    """Points ``x + r u`` with ``u != 0`` and ``|x + r u|_1 <= reach``."""
    d = len(x)
    umax = reach // r + 1
    for u in itertools.product(range(-umax, umax + 1), repeat=d):
        if any(u):
            y = tuple(a + r * b for a, b in zip(x, u))
            if sum(abs(c) for c in y) <= reach:
                yield y


def psi_sums(Z: SawCounts, T: SawCounts, r: int, x, z) -> PsiValues:
    """``psi(x)`` and ``psi^T(x)`` from Z^d and torus enumerations at equal depth.

    Exact for rational ``z`` at the common truncation; ``tail`` bounds the
    omitted orders of ``psi`` (a bound on all of ``G`` beyond ``n_max``;
    infinite when ``(2d-1) z >= 1``). A torus table of depth ``r^d - 1`` is
    complete and matches any Z^d depth.
    """
    if Z.torus is not None or T.torus != r:
        raise ValueError("need a Z^d enumeration and a torus enumeration of side r")
    complete = T.n_max == r ** T.d - 1 and T.n_max < Z.n_max
    if Z.n_max != T.n_max and not complete:
        raise ValueError(f"mismatched truncation: {Z.n_max} vs {T.n_max}")
    x = tuple(x)
    if not in_fundamental_domain(x, r):
        raise ValueError(f"{x} is not in the fundamental domain of side {r}")
    G = two_point(Z, z).G
    GT = two_point(T, z).G
    psi = sum((G[y] for y in _images(x, r, Z.n_max)), 0 * z)
    try:
        tail = tail_bound(Z.d, Z.n_max, float(z)) if z else 0.0
    except ValueError:
        tail = math.inf
    return PsiValues(psi, GT[x] - G[x], tail)


def _saws(d: int, n_max: int):
    """All Z^d SAWs of length <= n_max (as site tuples)."""
    steps = [tuple((1 if i == j else 0) * s for i in range(d)) for j in range(d) for s in (1, -1)]
    path = [(0,) * d]
    occ = {path[0]}

    def rec():
        yield tuple(path)
        if len(path) > n_max:
            return
        last = path[-1]
        for e in steps:
            y = tuple(a + b for a, b in zip(last, e))
            if y in occ:
                continue
            path.append(y)
            occ.add(y)
            yield from rec()
            path.pop()
            occ.discard(y)
    yield from rec()


def interaction_discrepancy(d: int, r: int, z, n_max: int, x, budget: int = 10 ** 8):
    """Brute-force ``sum z^n K (1 - K+)`` over Z^d walks ending at ``x + r u`` (any u)."""
    x = tuple(x)
    if (2 * d) ** n_max > budget * 50 and d > 1:
        raise BudgetExceeded(f"walk listing at d={d}, n={n_max} exceeds the budget")
    total = 0 * z
    seen = 0
    for w in _saws(d, n_max):
        seen += 1
        if seen > budget:
            raise BudgetExceeded("walk budget exhausted", len(w) - 1)
        end = w[-1]
        if project_torus(end, r) != project_torus(x, r):
            continue
        _, _, kp = interaction_weights(WalkRecord(w), r)
        if not kp:
            total += z ** (len(w) - 1)
    return total


# --------------------------------------------------------------------------
# lattice sums
# --------------------------------------------------------------------------

def _shell(d: int, k: int):
    """Integer points with ``|u|_inf = k``, face by face (axis j is the first with |u_j| = k)."""
    for j in range(d):
        axes = [np.arange(-k + 1, k)] * j + [np.array([-k, k])] + [np.arange(-k, k + 1)] * (d - 1 - j)
        yield np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)


def lattice_tail_sum(amplitude: float, a: float, nu: float, d: int, r: int, x=None,
                     rtol: float = 1e-10, max_shells: int = 200,
                     max_points: int = 2 * 10 ** 7) -> tuple[float, float]:
    """``sum_{u != 0} A <x + r u>^{-(d-a)} e^{-nu |x + r u|}`` and a bound on what was left out.

    Shells ``|u|_inf = k`` are summed until the geometric remainder bound
    ``A 2d (2k+1)^{d-1} e^{-nu r (k - 1/2)}`` summed over later shells falls
    below ``rtol`` times the running sum. Summation also stops once
    ``max_points`` images have been visited; the returned bound then covers
    the unsummed shells and may exceed ``rtol``.
    """
    if nu <= 0 or r < 3:
        raise ValueError("need nu > 0 and r >= 3")
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    if amplitude == 0:
        return 0.0, 0.0
    if np.max(np.abs(x)) > r / 2:
        raise ValueError("x must lie in the fundamental domain")
    total = 0.0
    p = d - a
    rem = math.inf
    visited = 0
    for k in range(1, max_shells + 1):
        size = (2 * k + 1) ** d - (2 * k - 1) ** d
        if visited and visited + size > max_points:
            break
        visited += size
        for face in _shell(d, k):
            y = x + r * face
            n2 = np.sqrt((y * y).sum(1))
            total += float(np.sum(amplitude * np.maximum(n2, 1.0) ** (-p) * np.exp(-nu * n2)))
        rem = _shell_remainder(amplitude, p, nu, d, r, k)
        if rem <= rtol * total:
            break
    return total, rem


def _shell_remainder(A, p, nu, d, r, k) -> float:
    """Bound on the shells beyond ``k`` (uses ``|x + r u| >= r(|u|_inf - 1/2)``)."""
    k1 = k + 1
    first = A * 2 * d * (2 * k1 + 1) ** (d - 1) * math.exp(-nu * r * (k1 - 0.5)) \
        * max(1.0, r * (k1 - 0.5)) ** (-p if p > 0 else 0)
    ratio = ((2 * k1 + 3) / (2 * k1 + 1)) ** (d - 1) * math.exp(-nu * r)
    if ratio >= 1:
        return math.inf
    return first / (1 - ratio)


# --------------------------------------------------------------------------
# plateau report
# --------------------------------------------------------------------------

def default_x_set(d: int, r: int) -> list:
    half = r // 2
    axis = [(k,) + (0,) * (d - 1) for k in range(0, half + 1)]
    diag = [(k,) * d for k in range(1, half + 1)]
    pts = []
    for p in axis + diag:
        q = tuple(torus_reduce(c, r) for c in p)
        if q not in pts:
            pts.append(q)
    return pts


@dataclass
class PlateauRow:
    x: tuple
    z: float
    G: float
    GT: float
    psi: float
    psiT: float
    ref: float

    def as_list(self):
        return list(self.x) + [self.G, self.GT, self.psi, self.psiT]


@dataclass
class PlateauReport:
    d: int
    r: int
    source: str
    rows: list
    chi: dict
    mass: dict
    window: dict
    constants: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"d": self.d, "r": self.r, "source": self.source,
                "chi": {str(k): v for k, v in self.chi.items()},
                "mass": {str(k): v for k, v in self.mass.items()}, "window": self.window,
                "constants": self.constants, "flags": self.flags, "meta": self.meta}

    def dumps_csv(self) -> str:
        head = [f"x{i + 1}" for i in range(self.d)] + ["z", "G", "GT", "psi", "psiT"]
        lines = [",".join(head)]
        for row in self.rows:
            vals = [str(c) for c in row.x] + [format_value(v) for v in
                                              (row.z, row.G, row.GT, row.psi, row.psiT)]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    @staticmethod
    def loads_csv(text: str) -> list[dict]:
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        head = lines[0].split(",")
        out = []
        for ln in lines[1:]:
            parts = ln.split(",")
            rec = dict(zip(head, parts))
            d = sum(1 for h in head if h.startswith("x"))
            out.append({"x": tuple(int(rec[f"x{i + 1}"]) for i in range(d)),
                        **{k: float(rec[k]) for k in ("z", "G", "GT", "psi", "psiT")}})
        return out


def z_window(zc: float, zc_err: float, r: int, d: int, c3: float = 1.0, c4: float = 1.0) -> dict:
    """``[z_c - c3 r^-2, z_c - c4 r^{-d/2}]`` at ``z_c`` and at ``z_c -/+ err``."""
    def w(zc_):
        return [zc_ - c3 * r ** -2.0, zc_ - c4 * r ** (-d / 2)]
    return {"zc": zc, "zc_err": zc_err, "window": w(zc), "window_lo": w(zc - zc_err),
            "window_hi": w(zc + zc_err), "c3": c3, "c4": c4}


def _fit_constants(rows, chi, mass, d, r, c5_grid=(0.0, 0.25, 0.5)):
    """Empirical constants for both sides of the torus bound and the M scan."""
    consts = {}
    for c5 in c5_grid:
        need = 0.0
        for row in rows:
            level = chi[row.z] / r ** d * math.exp(-c5 * (mass.get(row.z) or 0.0) * r)
            if level > 0:
                need = max(need, row.psiT / level)
        consts[f"c2(c5={c5})"] = need
    # lower bound: min over |x| >= M of psi^T / (chi / r^d), scanned in M
    scan = {}
    norms = sorted({norm2(row.x) for row in rows})
    for M in norms:
        sel = [row for row in rows if norm2(row.x) >= M]
        scan[format_value(M)] = min(row.psiT / (chi[row.z] / r ** d) for row in sel)
    consts["c1_by_M"] = scan
    positive = [float(M) for M, c in scan.items() if c > 0]
    consts["M_min"] = min(positive) if positive else None
    # bounded ratio of G^T to <x>^{-(d-2)} + chi / r^d
    ratios = [row.GT / (xvee(row.x) ** -(d - 2) + chi[row.z] / r ** d) for row in rows]
    consts["ratio_min"] = min(ratios)
    consts["ratio_max"] = max(ratios)
    return consts


def plateau_report(d: int, r: int, z_grid, x_set=None, source: str = "enum",
                   n_max: int | None = None, mc_config: dict | None = None,
                   threads: int | None = None, zc: tuple | None = None) -> PlateauReport:
    """Compare ``G^T`` and ``G`` at each ``(x, z)``.

    ``source="enum"`` uses exact enumerations of depth ``n_max`` on both
    lattices; ``source="mc"`` runs Monte Carlo chains (``mc_config`` holds
    :class:`~sawlab.montecarlo.RunConfig` fields other than d, z, torus).
    """
    x_set = default_x_set(d, r) if x_set is None else [tuple(x) for x in x_set]
    rows, chi, mass = [], {}, {}
    meta: dict = {}
    if source == "enum":
        if n_max is None:
            raise ValueError("enumeration source needs n_max")
        Z = count_saws(d, n_max, threads=threads)
        T = count_saws(d, n_max, torus=r, threads=threads)
        if zc is None:
            try:
                zc = estimate_zc(Z.totals())
            except InsufficientRange:
                zc = (float("nan"), float("nan"))
        for z in z_grid:
            ser = two_point(Z, z)
            chi[z] = susceptibility(ser)[0]
            try:
                mass[z] = mass_estimate(ser, range(1, max(2, min(n_max, 6))), d)
            except InsufficientRange:
                mass[z] = None
            for x in x_set:
                pv = psi_sums(Z, T, r, x, z)
                G = float(ser.G[x])
                rows.append(PlateauRow(x, z, G, G + float(pv.psi_T), float(pv.psi),
                                       float(pv.psi_T), chi[z] / r ** d))
        meta["tail_bound"] = {str(z): tail_bound(d, n_max, z) for z in z_grid}
        meta["n_max"] = n_max
        flags = {"unfold_inequality": all(row.psi >= row.psiT - 1e-15 for row in rows),
                 "psiT_nonnegative": all(row.psiT >= -1e-15 for row in rows)}
    elif source == "mc":
        from . import montecarlo as mc
        cfg_extra = dict(mc_config or {})
        above, level = [], []
        for z in z_grid:
            hz = mc.run_chains(mc.RunConfig(d, z, None, **cfg_extra), threads)
            ht = mc.run_chains(mc.RunConfig(d, z, r, **cfg_extra), threads)
            Gz, Ez = mc.estimate_two_point(hz)
            Gt, Et = mc.estimate_two_point(ht)
            chi[z], chi_err = mc.estimate_chi(hz)
            shells = sorted({max(abs(c) for c in x) for x in x_set})
            sz = mc.shell_means(hz, [s for s in shells if s <= hz.radius], domain=r)
            st = mc.shell_means(ht, shells)
            meta[str(z)] = {"chi_err": chi_err, "chi_torus": mc.estimate_chi(ht),
                            "shell_G": sz, "shell_GT": st,
                            "config_hash_zd": hz.meta["config_hash"],
                            "config_hash_torus": ht.meta["config_hash"]}
            # the plateau regime: the two outermost shells of the fundamental domain
            for sh in [s for s in sz if s >= max(1, r // 2 - 1)]:
                above.append(st[sh][0] > sz[sh][0])
                level.append(1 / 3 <= st[sh][0] / (chi[z] / r ** d) <= 3)
            mass[z] = None
            for x in x_set:
                G = Gz[x] if max(abs(c) for c in x) <= hz.radius else float("nan")
                rows.append(PlateauRow(x, z, G, Gt[x], float("nan"), Gt[x] - G, chi[z] / r ** d))
        flags = {"shell_GT_above_G": bool(above) and all(above),
                 "shell_GT_within_3x_plateau": bool(level) and all(level)}
    else:
        raise ValueError(f"unknown source {source!r}")
    window = z_window(zc[0], zc[1], r, d) if zc else {}
    consts = _fit_constants([row for row in rows if math.isfinite(row.psiT)], chi, mass, d, r)
    return PlateauReport(d, r, source, rows, chi, mass, window, consts, flags, meta)


def emit_plot_data(report: PlateauReport) -> str:
    """CSV of ``G^T`` against ``|x|_inf`` with the ``chi / r^d`` reference for each z."""
    lines = ["z,xinf,x,GT,reference"]
    for row in (report.rows if report else []):
        xs = " ".join(str(c) for c in row.x)
        lines.append(",".join([format_value(row.z), str(max(abs(c) for c in row.x)), xs,
                               format_value(row.GT), format_value(row.ref)]))
    return "\n".join(lines) + "\n"


def load_plot_data(text: str) -> list[dict]:
    rows = []
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    for ln in lines[1:]:
        z, xinf, xs, gt, ref = ln.split(",")
        rows.append({"z": float(z), "xinf": int(xinf), "x": tuple(int(c) for c in xs.split()),
                     "GT": float(gt), "reference": float(ref)})
    return rows
