"""Moment-matched comparison of a kernel with the random-walk kernel.

Given ``F`` with ``F * G = delta`` we pick ``lambda`` and ``mu`` so that
``E = A_mu - lambda F`` (with ``A_mu = delta - mu|Omega| D``) has vanishing
zeroth and second moments. Then ``G = lambda C_mu + f`` with
``f = C_mu * E * G``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .enumeration import TruncatedSeries
from .lace import KernelTable, fourier_grid, _kgrid_norms
from .lattice import Box, LatticeField, convolve, delta, exact_moment, norm2, rw_kernel, xvee
from .rw_green import RwParams, green_series_table, m0_of_mu


class MatchError(ValueError):
    """The moment-matching denominator is not positive."""


class MomentCancellationError(ArithmeticError):
    pass


@dataclass
class MatchResult:
    lam: object
    mu: object
    E: LatticeField
    f: LatticeField | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"lambda": float(self.lam), "mu": float(self.mu),
                "mu_omega": float(self.mu) * 2 * self.E.dim, **self.meta}


def _is_exact(v) -> bool:
    return isinstance(v, (int, Fraction))


def match_lambda_mu(kernel: KernelTable | LatticeField, uncertainty: float = 0.0):
    """``lambda = 1 / (F-hat(0) - sum |x|^2 F)`` and ``mu|Omega| = 1 - lambda F-hat(0)``.

    Exact when ``F`` is exact. ``uncertainty`` is an absolute error bound on
    the denominator; when positive, the returned tuple carries a third entry,
    the interval ``(lam_lo, lam_hi)``.
    """
    F = kernel.F if isinstance(kernel, KernelTable) else kernel
    d = F.dim
    f0 = F.total()
    kappa = -exact_moment(F, 2)
    den = f0 + kappa
    if den <= 0:
        raise MatchError(f"F-hat(0) + kappa = {float(den):.6g} <= 0 (F-hat(0) = {float(f0):.6g}, "
                         f"kappa = {float(kappa):.6g})")
    lam = Fraction(1) / den if _is_exact(den) else 1.0 / den
    if _is_exact(lam) and lam.denominator == 1:
        lam = int(lam)
    mu = (1 - lam * f0) / (2 * d)
    if _is_exact(mu) and Fraction(mu).denominator == 1:
        mu = int(mu)
    if float(mu) * 2 * d > 1 + 1e-12:
        raise MatchError(f"mu|Omega| = {float(mu) * 2 * d:.6g} exceeds 1")
    if uncertainty > 0:
        lo_den, hi_den = float(den) - uncertainty, float(den) + uncertainty
        interval = (1.0 / hi_den, math.inf if lo_den <= 0 else 1.0 / lo_den)
        return lam, mu, interval
    return lam, mu


def build_E(kernel: KernelTable | LatticeField, lam, mu, rtol: float = 1e-12) -> LatticeField:
    """``E = (delta - mu|Omega| D) - lambda F`` with both moment sums checked."""
    F = kernel.F if isinstance(kernel, KernelTable) else kernel
    d = F.dim
    exact = F.is_exact and _is_exact(lam) and _is_exact(mu)
    A = rw_kernel(d, mu if exact else float(mu))
    E = A - F.scale(lam if exact else float(lam))
    E = LatticeField(dict(E.items()), d, symmetric=True)
    m0, m2 = E.total(), exact_moment(E, 2)
    if exact:
        if m0 != 0 or m2 != 0:
            raise MomentCancellationError(f"exact moments {m0}, {m2} do not vanish")
    else:
        scale = 1.0 + abs(float(lam)) * sum(abs(float(v)) * (1 + sum(c * c for c in x))
                                            for x, v in F.items())
        if abs(m0) > rtol * scale or abs(m2) > rtol * scale:
            raise MomentCancellationError(f"moments {m0:.3e}, {m2:.3e} exceed {rtol:g} x {scale:.3g}")
    return E


def match(kernel: KernelTable, rtol: float = 1e-12) -> MatchResult:
    lam, mu = match_lambda_mu(kernel)
    E = build_E(kernel, lam, mu, rtol)
    return MatchResult(lam, mu, E, None, {"sum_E": float(E.total()),
                                          "sum_x2_E": float(exact_moment(E, 2))})


@dataclass
class RemainderResult:
    f_sub: LatticeField
    f_conv: LatticeField
    discrepancy: float
    certificate: float
    C_tail: float
    meta: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.discrepancy > self.certificate


def _green(d: int, mu, radius: int, tol: float):
    if float(mu) == 0:
        return delta(d, 1.0), 0.0
    t = green_series_table(RwParams(d, float(mu)), radius, tol=tol)
    return t.field(), t.tail


def remainder_f(G, lam, mu, E: LatticeField, box: int, c_radius: int | None = None,
                residual_F: float | None = None, F: LatticeField | None = None,
                tol: float = 1e-13) -> RemainderResult:
    """``f = G - lambda C_mu`` by subtraction and by ``C_mu * E * G``.

    Both use the same truncated ``C`` (radius ``c_radius``) and ``G``. Their
    difference is ``rho_A * G - lambda C * rho_F`` with
    ``rho_A = C*A - delta`` and ``rho_F = F*G - delta``, so it is bounded by
    ``|rho_A|_1 |G|_inf + lambda |C|_1 |rho_F|_inf``. ``residual_F`` supplies
    ``|rho_F|_inf`` directly; otherwise it is computed from ``F``.
    """
    if isinstance(G, TruncatedSeries):
        G = G.G
    G = G.to_float()
    d = G.dim
    lam_f, mu_f = float(lam), float(mu)
    if c_radius is None:
        c_radius = box + 2
    C, ctail = _green(d, mu_f, c_radius, tol)
    bx = Box.cube(d, box)
    f_sub = (G.restrict(bx) - C.restrict(bx).scale(lam_f))
    EG = convolve(E.to_float(), G, Box.cube(d, box + c_radius))
    f_conv = convolve(C, EG, bx)
    pts = set(f_sub.keys()) | set(f_conv.keys())
    disc = max((abs(f_sub[x] - f_conv[x]) for x in pts), default=0.0)

    A = rw_kernel(d, mu_f)
    rho_A = convolve(C, A) - delta(d, 1.0)
    rho_A_l1 = sum(abs(v) for v in rho_A.values())
    if residual_F is None:
        if F is None:
            raise ValueError("need F or residual_F for the certificate")
        rho_F = convolve(F.to_float(), G) - delta(d, 1.0)
        residual_F = max((abs(v) for v in rho_F.values()), default=0.0)
    G_inf = G.sup_norm()
    C_l1 = sum(abs(v) for v in C.values())
    # floating-point slack: a few ulps of every product accumulated
    slack = 1e-13 * (1 + sum(abs(v) for v in E.to_float().values())) * C_l1 * max(G_inf, 1.0)
    cert = rho_A_l1 * G_inf + abs(lam_f) * C_l1 * residual_F + slack
    return RemainderResult(f_sub, f_conv, disc, cert, ctail,
                           {"rho_A_l1": rho_A_l1, "rho_F_inf": residual_F, "c_radius": c_radius})


# --------------------------------------------------------------------------
# decay diagnostics
# --------------------------------------------------------------------------

def weighted_sup(f: LatticeField, d: int, radius: int, m: float = 0.0, rate: float = 0.0,
                 power: float | None = None) -> float:
    """``sup_{|x|_inf <= radius} <x>^power e^{rate |x|} |f(x) e^{m x_1}|`` (power defaults to d-2)."""
    power = d - 2 if power is None else power
    best = 0.0
    for x, v in f.items():
        if max((abs(c) for c in x), default=0) > radius:
            continue
        r = norm2(x)
        w = xvee(x) ** power * math.exp(rate * r + m * x[0]) * abs(float(v))
        best = max(best, w)
    return best


@dataclass
class DecayReport:
    radii: list
    sups: list
    drift: float

    @property
    def stable(self) -> bool:
        return self.drift < 0.05


def decay_trend(f: LatticeField, d: int, radii, m: float = 0.0, rate: float = 0.0) -> DecayReport:
    """Weighted sups over nested boxes; drift is the relative growth from the first to the last box."""
    radii = list(radii)
    sups = [weighted_sup(f, d, R, m, rate) for R in radii]
    drift = 0.0 if sups[0] == 0 else (sups[-1] - sups[0]) / sups[0]
    return DecayReport(radii, sups, drift)


def check_f_decay(f: LatticeField, m: float, d: int, radii=None):
    """``sup <x>^{d-2} |f^(m)(x)|`` over the largest box and the nested-box trend."""
    if radii is None:
        R = f.radius()
        radii = [max(1, R // 2), max(1, R)]
    rep = decay_trend(f, d, radii, m)
    return rep.sups[-1], rep


def check_E_bound(E: LatticeField, m: float, grid: int, eps: float):
    """``max_k |E-hat^(m)(k)| / (|k| + m)^{2 + min(eps, 1)}``; ``k = 0`` skipped when ``m = 0``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    E = E.to_float()
    n = max(grid, 2 * E.radius() + 1)
    vals = np.abs(fourier_grid(E, n, m))
    knorm, g = _kgrid_norms(n, E.dim)
    den = (knorm + m) ** (2 + min(eps, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, vals / den, 0.0)
    i = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[i]), {"k": tuple(float(c[i]) for c in g), "grid": n,
                             "E_hat_m_0": float(vals.flat[0])}


def empirical_constants(G: LatticeField, mass: float, d: int, c1_grid=(0.0, 0.1, 0.25, 0.5, 0.75, 0.9)):
    """Pairs ``(c1, c0)`` with ``c0 = sup <x>^{d-2} e^{c1 m |x|} G(x)`` on the data."""
    G = G.to_float() if not isinstance(G, TruncatedSeries) else G.G.to_float()
    R = G.radius()
    return [(c1, weighted_sup(G, d, R, rate=c1 * mass)) for c1 in c1_grid]


def mass_ratio(masses, mus, d: int) -> list[float]:
    """``m_hat(z) / m0(mu_z)`` across a z-grid."""
    out = []
    for m, mu in zip(masses, mus):
        m0 = m0_of_mu(RwParams(d, float(mu)))
        out.append(math.inf if m0 == 0 else float(m) / m0)
    return out
