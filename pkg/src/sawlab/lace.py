"""Recovering ``F_z`` and ``Pi_z`` from a two-point function, and checking them.

``F_z`` is the convolution inverse of ``G_z``; ``Pi_z = delta - z|Omega| D - F_z``.
Here ``G_z = sum_n c_n(x) z^n`` is unnormalised, so the linear term puts
weight ``z`` on each neighbour.
Two independent routes are provided:

* :func:`invert_series` inverts ``G`` as a power series in ``z`` with
  integer coefficient fields. Coefficients through order ``n_max`` are exact,
  so at a rational ``z`` the whole kernel is rational.
* :func:`invert_to_F` inverts ``G-hat`` pointwise on a momentum grid and
  transforms back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from . import _kernels
from .enumeration import SawCounts, TruncatedSeries
from .lattice import (Box, LatticeField, delta, moment_sum, norm2, rw_kernel, step_distribution,
                      tilt, unit_vectors)


class DegenerateTransform(ValueError):
    """``G-hat`` vanishes (numerically) somewhere on the momentum grid."""


@dataclass
class KernelTable:
    """``F_z`` with where it came from and how it was truncated."""

    F: LatticeField
    z: object
    provenance: str
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.F.dim

    def sanity(self, band: float = 0.5) -> bool:
        """``F(0)`` within ``band`` of 1 (it is ``1 + O(z^2)``)."""
        return abs(float(self.F[(0,) * self.d]) - 1.0) <= band


# --------------------------------------------------------------------------
# momentum grids
# --------------------------------------------------------------------------

def momentum_axis(n: int) -> np.ndarray:
    """``2 pi j / n`` mapped into (-pi, pi]."""
    k = 2 * np.pi * np.arange(n) / n
    return np.where(k > np.pi, k - 2 * np.pi, k)


def fourier_grid(f: LatticeField, n: int, m: float = 0.0) -> np.ndarray:
    """Transform of ``f^(m)`` at every ``k = 2 pi j / n`` (array indexed by j).

    Exact (no aliasing) when the support fits in a period, i.e.
    ``n >= 2 radius + 1``.
    """
    if n < 2 * f.radius() + 1:
        raise ValueError(f"grid {n} too small for support radius {f.radius()}")
    arr = np.zeros((n,) * f.dim, dtype=complex if m else float)
    if len(f):
        pts, vals = f.arrays()
        if m:
            vals = vals * np.exp(m * pts[:, 0])
        np.add.at(arr, tuple((pts % n).T), vals)
    # sum_x f(x) e^{+ik.x} = n^d * ifft
    out = np.fft.ifftn(arr) * n ** f.dim
    return out


def _kgrid_norms(n: int, d: int) -> tuple[np.ndarray, list]:
    axes = momentum_axis(n)
    g = np.meshgrid(*([axes] * d), indexing="ij")
    return np.sqrt(sum(c * c for c in g)), g


# --------------------------------------------------------------------------
# series route
# --------------------------------------------------------------------------

def _int_convolve(f: dict, g: dict, d: int) -> dict:
    if not f or not g:
        return {}
    l1 = sum(abs(v) for v in f.values()) * sum(abs(v) for v in g.values())
    if l1 >= 2 ** 62:
        out: dict = {}
        for y, a in f.items():
            for w, b in g.items():
                x = tuple(p + q for p, q in zip(y, w))
                out[x] = out.get(x, 0) + a * b
        return {x: v for x, v in out.items() if v}
    ac = np.array(list(f), dtype=np.int64)
    av = np.array(list(f.values()), dtype=np.int64)
    bc = np.array(list(g), dtype=np.int64)
    bv = np.array(list(g.values()), dtype=np.int64)
    lo = ac.min(0) + bc.min(0)
    hi = ac.max(0) + bc.max(0)
    shape = hi - lo + 1
    flat = _kernels.sparse_convolve_int(ac, av, bc, bv, lo, shape)
    nz = np.nonzero(flat)[0]
    coords = np.stack(np.unravel_index(nz, tuple(shape)), axis=1) + lo
    return {tuple(int(c) for c in p): int(v) for p, v in zip(coords, flat[nz])}


@dataclass
class SeriesKernel:
    """``F_z = sum_n phi_n z^n`` through order ``n_max``; each ``phi_n`` is an integer field."""

    d: int
    coeffs: list
    counts: SawCounts

    @property
    def n_max(self) -> int:
        return len(self.coeffs) - 1

    def at(self, z) -> KernelTable:
        """Evaluate at ``z``; exact for int/Fraction ``z``."""
        vals: dict = {}
        zn = z ** 0
        for phi in self.coeffs:
            for x, c in phi.items():
                vals[x] = vals.get(x, 0) + c * zn
            zn = zn * z
        F = LatticeField(vals, self.d, symmetric=True)
        meta = {"order": self.n_max, "residual_bound": self.residual_bound(z),
                "truncation_estimate": self.truncation_estimate(z)}
        return KernelTable(F, z, "recovered-from-G (series)", meta)

    def pi_coefficients(self) -> list:
        """Integer coefficient fields of ``Pi_z = delta - z|Omega| D - F_z``; orders 0 and 1 vanish."""
        d = self.d
        out = [{x: -v for x, v in phi.items()} for phi in self.coeffs]
        o = (0,) * d
        out[0][o] = out[0].get(o, 0) + 1
        if len(out) > 1:
            for e in unit_vectors(d):
                out[1][e] = out[1].get(e, 0) - 1
        return [{x: v for x, v in c.items() if v} for c in out]

    def _norms(self):
        if not hasattr(self, "_l1"):
            self._l1 = ([sum(abs(v) for v in phi.values()) for phi in self.coeffs],
                        [sum(t.values()) for t in self.counts.tables])
        return self._l1

    def residual_bound(self, z) -> float:
        """Bound on ``|F_{<=N} * G_{<=N} - delta|`` at every site (exact terms cancel below order N+1)."""
        fn, gn = self._norms()
        N = self.n_max
        z = float(z)
        total = 0.0
        for n in range(N + 1, 2 * N + 1):
            s = sum(fn[j] * gn[n - j] for j in range(n - N, N + 1))
            total += s * z ** n
        return total

    def truncation_estimate(self, z) -> float:
        """Size of the last retained order, a heuristic for the omitted ones."""
        fn, _ = self._norms()
        return float(fn[-1]) * float(z) ** self.n_max


def invert_series(counts: SawCounts, order: int | None = None) -> SeriesKernel:
    """Convolution inverse of ``G`` as a power series in ``z``.

    ``phi_0 = delta`` and ``phi_n = -sum_{j=1..n} c_j * phi_{n-j}``.
    """
    order = counts.n_max if order is None else order
    if order > counts.n_max:
        raise ValueError("series order exceeds the enumeration depth")
    d = counts.d
    phis = [{(0,) * d: 1}]
    for n in range(1, order + 1):
        acc: dict = {}
        for j in range(1, n + 1):
            part = _int_convolve(counts.tables[j], phis[n - j], d)
            for x, v in part.items():
                acc[x] = acc.get(x, 0) - v
        phis.append({x: v for x, v in acc.items() if v})
    return SeriesKernel(d, phis, counts)


# --------------------------------------------------------------------------
# FFT route
# --------------------------------------------------------------------------

def invert_to_F(G, grid: int | None = None, trim: float = 1e-16,
                residual_budget: int = 2 ** 23, z=None) -> KernelTable:
    """``F = IFT[1 / G-hat]`` on a periodic grid of ``grid^d`` momenta.

    ``G`` is a :class:`TruncatedSeries` or a symmetric float field. Entries
    below ``trim * |F(0)|`` are dropped (their l1 mass is recorded). The
    residual ``|F*G - delta|_inf`` is computed by a linear convolution when
    the padded grid fits in ``residual_budget`` points. ``z`` labels a bare
    field input (for a random-walk table pass ``mu``).
    """
    tail = None
    if isinstance(G, TruncatedSeries):
        z, tail = G.z, G.tail
        G = G.G
    G = G.to_float()
    d = G.dim
    R = G.radius()
    n = grid or (2 * R + 2)
    if n < 2 * R + 1:
        raise ValueError(f"grid {n} too small for G of radius {R}")
    ghat = fourier_grid(G, n).real
    amin = float(np.min(np.abs(ghat)))
    if amin < 1e-12 * float(np.max(np.abs(ghat))):
        i = np.unravel_index(np.argmin(np.abs(ghat)), ghat.shape)
        k = tuple(float(v) for v in momentum_axis(n)[list(i)])
        raise DegenerateTransform(f"|G-hat| = {amin:.3e} at k = {k}")
    arr = np.fft.fftn(1.0 / ghat).real / n ** d
    arr = np.fft.fftshift(arr)
    lo = -(n // 2)
    box = Box((lo,) * d, (lo + n - 1,) * d)
    f0 = abs(arr[(n // 2,) * d])
    small = np.abs(arr) < trim * f0
    trimmed = float(np.abs(arr[small]).sum())
    arr = np.where(small, 0.0, arr)
    F = LatticeField.from_dense(arr, box, symmetric=True)
    meta = {"grid": n, "min_abs_Ghat": amin, "trimmed_l1": trimmed, "G_tail": tail}
    meta["residual"] = convolution_residual(F, G, residual_budget)
    return KernelTable(F, z, "recovered-from-G (fft)", meta)


def convolution_residual(F: LatticeField, G: LatticeField, budget: int = 2 ** 23):
    """``|F*G - delta|_inf`` by zero-padded FFT, or ``None`` if over budget."""
    Fa, Fb = F.to_float().to_dense()
    Ga, Gb = G.to_float().to_dense()
    shape = [a + b - 1 for a, b in zip(Fa.shape, Ga.shape)]
    if math.prod(shape) > budget:
        return None
    from scipy import signal
    conv = signal.fftconvolve(Fa, Ga, mode="full")
    origin = tuple(-(a + b) for a, b in zip(Fb.lo, Gb.lo))
    conv[origin] -= 1.0
    return float(np.max(np.abs(conv)))


def rw_kernel_table(d: int, mu) -> KernelTable:
    """The analytic random-walk kernel ``A_mu = delta - mu |Omega| D``."""
    F = rw_kernel(d, mu)
    return KernelTable(LatticeField(dict(F.items()), d, True), mu, "analytic-RW", {})


def recover_pi(kernel: KernelTable) -> LatticeField:
    """``Pi_z = delta - z|Omega| D - F_z``; identically zero for the random-walk kernel."""
    d = kernel.d
    z = kernel.z
    if z is None:
        raise ValueError("kernel has no fugacity attached")
    zD = step_distribution(d, isinstance(z, (int, Fraction))).scale(z * 2 * d)
    return LatticeField(dict((delta(d) - zD - kernel.F).items()), d, symmetric=True)


def pi_moment_sum(pi: LatticeField, a: float, m: float = 0.0) -> float:
    """``sum_x |x|^a |Pi^(m)(x)|``."""
    if a <= 0:
        raise ValueError("moment order must be > 0")
    return moment_sum(pi, a, m)


def lace_series_bound(kappa: float, a: float, K: float = 1.0) -> float:
    """``sum_{N>=2} K N^{a+1} q^{N-1}`` with ``q = sqrt(kappa (1 + kappa))``.

    Finite iff ``kappa (1 + kappa) < 1``.
    """
    q = math.sqrt(kappa * (1 + kappa))
    if q >= 1:
        return math.inf
    if q == 0:
        return 0.0
    li = mpmath.polylog(-(a + 1), q)
    return float(K * (li - q) / q)


GOLDEN_KAPPA = (math.sqrt(5) - 1) / 2


# --------------------------------------------------------------------------
# Pi^(4) diagram
# --------------------------------------------------------------------------

@dataclass
class Pi4Bound:
    x: tuple
    m: float
    direct: float
    summed: float
    norm_product: float
    kappa: float
    bubble_shape: float

    @property
    def consistent(self) -> bool:
        return self.direct <= self.norm_product * (1 + 1e-12) and self.summed <= self.norm_product * (1 + 1e-12)


def _dense(f: LatticeField, R: int) -> np.ndarray:
    arr, _ = f.to_float().to_dense(Box.cube(f.dim, R))
    return arr


def pi4_diagram_bound(G: LatticeField, m: float, x) -> Pi4Bound:
    """Evaluate ``sum_{u,v} H(u) H^(m)(u) G(v) H(u-v) G^(m)(x-u) H(x-v)^2`` with ``H = G - delta``.

    ``direct`` is the value at ``x``; ``summed`` is the same sum over all
    ``x``; ``norm_product`` is ``|G|_inf |H^(m)|_2 |H|_2^4 |G^(m)|_2``, which
    bounds ``summed``. ``bubble_shape`` is ``kappa^2 (1 + kappa)`` with
    ``kappa = |H^(m)|_2^2``.
    """
    from scipy import signal
    d = G.dim
    x = tuple(x)
    G = G.to_float()
    H = G - delta(d, 1.0)
    Hm = tilt(H, m)
    Gm = tilt(G, m)
    R = max(G.radius(), max(abs(c) for c in x) if x else 0)
    big = 2 * R
    Ha, Hma, Ga, Gma = (_dense(f, big) for f in (H, Hm, G, Gm))
    # inner(u) = sum_v G(v) H(x-v)^2 H(u-v) = (a * H)(u), a(v) = G(v) H(x-v)^2
    Hsq = Ha ** 2
    shifted = np.zeros_like(Hsq)
    # Hsq_x(v) = H(x - v)^2: reflect then shift by x
    refl = Hsq[tuple(slice(None, None, -1) for _ in range(d))]
    dst = tuple(slice(max(0, c), Hsq.shape[0] + min(0, c)) for c in x)
    src = tuple(slice(max(0, -c), Hsq.shape[0] - max(0, c)) for c in x)
    shifted[dst] = refl[src]
    a = Ga * shifted
    inner = signal.fftconvolve(a, Ha, mode="same")
    # G^(m)(x - u) as a function of u
    gx = np.zeros_like(Gma)
    reflg = Gma[tuple(slice(None, None, -1) for _ in range(d))]
    gx[dst] = reflg[src]
    direct = float(np.sum(Ha * Hma * gx * inner))
    summed = _summed_pi4(Ha, Hma, Ga, Gma, Hsq)
    h2 = math.sqrt(float(np.sum(Ha ** 2)))
    hm2 = math.sqrt(float(np.sum(Hma ** 2)))
    g2m = math.sqrt(float(np.sum(Gma ** 2)))
    ginf = float(np.max(np.abs(Ga)))
    kappa = hm2 ** 2
    return Pi4Bound(x, m, direct, summed, ginf * hm2 * h2 ** 4 * g2m, kappa,
                    kappa ** 2 * (1 + kappa))


def _summed_pi4(Ha, Hma, Ga, Gma, Hsq) -> float:
    """``sum_{x,u,v}`` of the diagram via two correlations."""
    from scipy import signal
    d = Ha.ndim
    flip = tuple(slice(None, None, -1) for _ in range(d))
    # S(u, v) = sum_x G^(m)(x-u) H(x-v)^2 = c(u - v), c(w) = sum_y G^(m)(y) H(y+w)^2
    c = signal.fftconvolve(Hsq, Gma[flip], mode="full")      # index w + centre
    # total = sum_{u,v} H(u)H^(m)(u) G(v) H(u-v) c(u-v)
    #       = sum_w H(w) c(w) * sum_v G(v) P(v+w),  P = H H^(m)
    n = Ha.shape[0]
    P = Ha * Hma
    q = signal.fftconvolve(P, Ga[flip], mode="full")         # q(w) = sum_v G(v) P(v+w)
    # both c and q live on the full grid of side 2n-1 centred at n-1
    Hbig = np.zeros(c.shape)
    off = n // 2
    sl = tuple(slice(off, off + n) for _ in range(d))
    Hbig[sl] = Ha
    return float(np.sum(Hbig * c * q))


def pi4_direct_bruteforce(G: LatticeField, m: float, x) -> float:
    """Literal double sum over the support; for small cases only."""
    d = G.dim
    G = G.to_float()
    H = G - delta(d, 1.0)
    sup = list(set(G.keys()) | {(0,) * d})
    x = tuple(x)
    total = 0.0
    for u in sup:
        hu = H[u]
        if not hu:
            continue
        for v in sup:
            w = (hu * hu * math.exp(m * u[0]) * G[v] * H[tuple(a - b for a, b in zip(u, v))]
                 * G[tuple(a - b for a, b in zip(x, u))] * math.exp(m * (x[0] - u[0]))
                 * H[tuple(a - b for a, b in zip(x, v))] ** 2)
            total += w
    return total


# --------------------------------------------------------------------------
# infrared checks
# --------------------------------------------------------------------------

def _grid_for(F: LatticeField, grid: int | None) -> int:
    n = max(grid or 0, 2 * F.radius() + 1)
    return n + (n % 2)


def massive_infrared_check(kernel: KernelTable, m: float, grid: int | None = 16):
    """``min_k |F-hat^(m)(k)| / (|k| + m)^2`` over the grid; ``k = 0`` skipped when ``m = 0``.

    Returns ``(c_lower, witnesses)`` where witnesses lists the minimising k and
    ``F-hat^(m)(0)``.
    """
    F = kernel.F.to_float()
    n = _grid_for(F, grid)
    vals = np.abs(fourier_grid(F, n, m))
    knorm, g = _kgrid_norms(n, F.dim)
    den = (knorm + m) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, vals / den, np.inf)
    i = np.unravel_index(np.argmin(ratio), ratio.shape)
    f0 = fourier_grid(F, n, m).flat[0]
    wit = {"k": tuple(float(c[i]) for c in g), "ratio": float(ratio[i]),
           "F_hat_m_0": float(np.real(f0)), "grid": n}
    return float(ratio[i]), wit


def infrared_constant(kernel: KernelTable, grid: int | None = 16):
    """``K2 = min_{k != 0} (F-hat(k) - F-hat(0)) / |k|^2`` and its witness k."""
    F = kernel.F.to_float()
    n = _grid_for(F, grid)
    fh = fourier_grid(F, n).real
    knorm, g = _kgrid_norms(n, F.dim)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(knorm > 0, (fh - fh.flat[0]) / knorm ** 2, np.inf)
    i = np.unravel_index(np.argmin(ratio), ratio.shape)
    return float(ratio[i]), tuple(float(c[i]) for c in g), n


@dataclass
class AssumptionItem:
    name: str
    passed: bool
    value: object
    detail: dict = field(default_factory=dict)


@dataclass
class AssumptionReport:
    d: int
    eps: float
    p: int
    K1: float
    K2: float
    items: list

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items)

    def to_json(self) -> dict:
        return {"K1": self.K1, "K2": self.K2, "eps": self.eps, "p": self.p, "d": self.d,
                "passed": self.passed,
                "items": [{"name": i.name, "passed": i.passed, "value": i.value,
                           "detail": i.detail} for i in self.items]}


def _z_stable(zs, vals, max_slope: float = 3.0) -> bool:
    """No power-law blow-up steeper than ``z^max_slope`` between neighbouring grid points."""
    vals = [abs(v) for v in vals]
    if not all(math.isfinite(v) for v in vals):
        return False
    for (z0, v0), (z1, v1) in zip(zip(zs, vals), zip(zs[1:], vals[1:])):
        if v0 == 0 or v1 == 0 or z0 <= 0:
            continue
        slope = abs(math.log(v1 / v0) / math.log(z1 / z0))
        if slope > max_slope:
            return False
    return True


def check_assumption(kernels, masses, m_fractions=(0.0, 0.25, 0.5), grid: int | None = 16,
                     eps: float | None = None, p: int = 1) -> AssumptionReport:
    """Measure the five hypotheses on a family of kernels over a z-grid.

    ``kernels`` is a list of :class:`KernelTable` ordered by increasing z and
    ``masses`` the matching ``m(z)``; tilts are ``fraction * m(z)`` for each
    fraction in ``m_fractions`` (all < 1).
    """
    if not kernels:
        raise ValueError("empty kernel family")
    if any(not 0 <= f < 1 for f in m_fractions):
        raise ValueError("tilt fractions must lie in [0, 1)")
    d = kernels[0].d
    if eps is None:
        eps = min(d - 4, 2) if d > 4 else 1.0
    zs = [float(k.z) for k in kernels]
    items = []

    # (i) tilted moment of order 2 + eps
    mom = []
    for k, mz in zip(kernels, masses):
        F = k.F.to_float()
        mom.append(max(moment_sum(F, 2 + eps, f * mz) for f in m_fractions))
    K1 = max(mom)
    items.append(AssumptionItem("(i) moments", math.isfinite(K1) and _z_stable(zs, mom), K1,
                                {"per_z": mom, "z": zs}))

    # (ii) F-hat^(m)(0) >= 0 and F-hat(0) decreasing toward 0
    f0s, worst = [], math.inf
    for k, mz in zip(kernels, masses):
        F = k.F.to_float()
        f0s.append(float(F.total()))
        for f in m_fractions:
            worst = min(worst, sum(float(v) * math.exp(f * mz * x[0]) for x, v in F.items()))
    decreasing = all(b < a for a, b in zip(f0s, f0s[1:]))
    items.append(AssumptionItem("(ii) F-hat(0)", worst >= 0 and decreasing and f0s[-1] >= 0,
                                worst, {"F_hat_0": f0s, "min_tilted": worst}))

    # (iii) untilted infrared bound
    k2s, wits = [], []
    for k in kernels:
        c, w, _ = infrared_constant(k, grid)
        k2s.append(c)
        wits.append(w)
    K2 = min(k2s)
    degenerate = all(float(v) == 0 for k in kernels for x, v in k.F.items() if any(x))
    items.append(AssumptionItem("(iii) infrared", K2 > 0 and not degenerate and _z_stable(zs, k2s),
                                K2, {"per_z": k2s, "witness_k": wits,
                                     "degenerate": degenerate}))

    # (iv) m(z) decreasing
    ms = [float(m) for m in masses]
    items.append(AssumptionItem("(iv) mass", all(b < a for a, b in zip(ms, ms[1:])) and
                                all(m > 0 for m in ms), ms[-1], {"m": ms}))

    # (v) weighted l^{p ^ 2} norm of |x|^{d-2} F^(m)
    q = min(p, 2)
    norms = []
    for k, mz in zip(kernels, masses):
        F = k.F.to_float()
        best = 0.0
        for f in m_fractions:
            s = 0.0
            for x, v in F.items():
                r = norm2(x)
                if r:
                    s += (r ** (d - 2) * abs(float(v)) * math.exp(f * mz * x[0])) ** q
            best = max(best, s ** (1 / q))
        norms.append(best)
    ok_v = (d <= 4) or (1 <= p < d / 4 and math.isfinite(max(norms)) and _z_stable(zs, norms))
    items.append(AssumptionItem("(v) weighted norm", ok_v, max(norms), {"per_z": norms, "p": p}))
    return AssumptionReport(d, eps, p, K1, K2, items)
