"""Simple random walk two-point function (lattice Green function).

Two independent routes to ``C_mu``:

* :func:`green_series` sums ``(mu |Omega| D)^{*n}`` by repeated convolution
  on a dense box and attaches a per-site certificate;
* :func:`green_quadrature` evaluates the Fourier integral with a shifted
  midpoint rule (FFT), refining the grid until it converges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Box, LatticeField

DEFAULT_MU_FRACTIONS = (0.5, 0.9, 0.99, 0.999)


class QuadratureError(RuntimeError):
    """Raised when grid refinement does not reach the tolerance within budget."""


@dataclass(frozen=True)
class RwParams:
    d: int
    mu: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 0 <= self.mu * 2 * self.d <= 1:
            raise ValueError(f"mu must lie in [0, 1/(2d)], got {self.mu}")

    @property
    def omega(self) -> int:
        return 2 * self.d

    @property
    def mu_c(self) -> float:
        return 1.0 / (2 * self.d)

    @property
    def q(self):
        """``mu |Omega|``, the per-step weight of the walk generating function."""
        return self.mu * 2 * self.d

    @property
    def critical(self) -> bool:
        return self.q == 1


def m0_of_mu(p: RwParams) -> float:
    """Mass of ``C_mu``: the root of ``cosh m = 1 + (1 - mu|Omega|)/(2 mu)``."""
    if not 0 < p.mu <= p.mu_c:
        raise ValueError(f"mu must lie in (0, mu_c], got {p.mu}")
    if p.critical:
        return 0.0
    t = (1 - p.q) / (2 * p.mu)
    t = float(t)
    # acosh(1 + t) without cancellation near t = 0
    return math.log1p(t + math.sqrt(t * (2 + t)))


def mu_of_m0(d: int, m0: float) -> float:
    """Inverse of :func:`m0_of_mu`."""
    # cosh m = 1 + (1 - 2 d mu) / (2 mu)  =>  mu = 1 / (2 (cosh m - 1) + 2 d)
    return 1.0 / (2 * (math.cosh(m0) - 1) + 2 * d)


# --------------------------------------------------------------------------
# series route
# --------------------------------------------------------------------------

def _apply_step_sum(arr: np.ndarray) -> np.ndarray:
    """Sum over the 2d nearest neighbours with zero boundary (unnormalised D)."""
    out = np.zeros_like(arr)
    for ax in range(arr.ndim):
        n = arr.shape[ax]
        src_hi = [slice(None)] * arr.ndim
        dst_lo = [slice(None)] * arr.ndim
        src_hi[ax] = slice(1, n)
        dst_lo[ax] = slice(0, n - 1)
        out[tuple(dst_lo)] += arr[tuple(src_hi)]
        out[tuple(src_hi)] += arr[tuple(dst_lo)]
    return out


def series_order(q: float, tol: float) -> int:
    """Smallest n with ``q^(n+1)/(1-q) <= tol``."""
    if q <= 0:
        return 0
    if q >= 1:
        raise ValueError("no geometric certificate at mu = mu_c")
    n = math.ceil(math.log(tol * (1 - q)) / math.log(q)) - 1
    return max(n, 0)


def series_tail(q: float, n_max: int) -> float:
    if q <= 0:
        return 0.0
    return q ** (n_max + 1) / (1 - q)


def _exit_bound(p: RwParams, work: int, xinf: np.ndarray) -> np.ndarray:
    """Weight of walks that leave the cube of radius ``work`` before reaching x.

    Uses ``C(y) <= C(0) exp(-m0 |y|_inf)`` and ``C(0) <= 1/(1 - mu|Omega|)``.
    """
    m0 = m0_of_mu(p)
    c0 = 1.0 / (1 - p.q)
    shell = (2 * work + 3) ** p.d - (2 * work + 1) ** p.d
    return shell * c0 * c0 * np.exp(-m0 * (2 * (work + 1) - xinf))


@dataclass
class GreenTable:
    """Boxed ``C_mu`` values with a per-site certificate."""

    params: RwParams
    box: Box
    values: np.ndarray
    certificate: np.ndarray
    n_max: int
    working_radius: int

    def field(self) -> LatticeField:
        return LatticeField.from_dense(self.values, self.box, symmetric=True)

    @property
    def tail(self) -> float:
        return float(self.certificate.max())

    def __getitem__(self, x) -> float:
        idx = tuple(c - l for c, l in zip(x, self.box.lo))
        return float(self.values[idx])


def green_series(p: RwParams, box: Box | int, n_max: int | None = None,
                 tol: float = 1e-12, margin: int | None = None) -> tuple[LatticeField, float]:
    """Partial sum of ``C_mu = sum_n (mu|Omega| D)^{*n}`` on ``box``.

    Returns the field and a uniform bound on ``|C_mu(x) - value(x)|`` over the
    box. See :func:`green_series_table` for the per-site certificate.
    """
    t = green_series_table(p, box, n_max=n_max, tol=tol, margin=margin)
    return t.field(), t.tail


def green_series_table(p: RwParams, box: Box | int, n_max: int | None = None,
                       tol: float = 1e-12, margin: int | None = None) -> GreenTable:
    if isinstance(box, int):
        box = Box.cube(p.d, box)
    if p.critical:
        raise ValueError("green_series has no certificate at mu = mu_c; use green_quadrature")
    q = float(p.q)
    if n_max is None:
        n_max = series_order(q, tol / 2)
    radius = max(max(abs(c) for c in box.lo), max(abs(c) for c in box.hi))
    if margin is None:
        work = radius
        if q > 0:
            while work < n_max:
                if _exit_bound(p, work, np.array([radius]))[0] <= tol / 2:
                    break
                work += 1
    else:
        work = radius + margin
    work = min(work, max(n_max, radius))

    shape = (2 * work + 1,) * p.d
    origin = (work,) * p.d
    c = np.zeros(shape)
    c[origin] = 1.0
    if q > 0:
        w = q / (2 * p.d)
        for _ in range(n_max):
            c = w * _apply_step_sum(c)
            c[origin] += 1.0

    sl = tuple(slice(l + work, h + work + 1) for l, h in zip(box.lo, box.hi))
    vals = c[sl].copy()
    grids = np.meshgrid(*(np.arange(l, h + 1) for l, h in zip(box.lo, box.hi)), indexing="ij")
    xinf = np.max(np.abs(np.stack(grids)), axis=0) if p.d else np.zeros(())
    cert = np.full(vals.shape, series_tail(q, n_max))
    if work < n_max and q > 0:
        cert = cert + _exit_bound(p, work, xinf)
    return GreenTable(p, box, vals, cert, n_max, work)


# --------------------------------------------------------------------------
# quadrature route
# --------------------------------------------------------------------------

def quadrature_grid_table(p: RwParams, n: int) -> np.ndarray:
    """Shifted midpoint rule on an ``n^d`` grid, returned for all x mod n.

    Entry ``[x mod n]`` approximates ``C_mu(x)`` for ``-n/2 <= x_j < n/2``;
    the error is an alternating periodic image sum, small only for
    ``|x|_inf`` well below ``n/2``.
    """
    if n < 8:
        raise ValueError("grid must be >= 8")
    k = 2 * np.pi * (np.arange(n) + 0.5) / n - np.pi
    dhat = np.zeros((n,) * p.d)
    for ax in range(p.d):
        shape = [1] * p.d
        shape[ax] = n
        dhat = dhat + np.cos(k).reshape(shape)
    dhat /= p.d
    integrand = 1.0 / (1.0 - float(p.q) * dhat)
    del dhat
    spectrum = np.fft.fftn(integrand) / n ** p.d
    del integrand
    # k_j = 2 pi j / n + theta  =>  exp(-i k.x) = exp(-i theta sum x) exp(-2 pi i j.x / n)
    theta = np.pi / n - np.pi
    idx = np.where(np.arange(n) < n // 2, np.arange(n), np.arange(n) - n)
    phase = np.ones((n,) * p.d, dtype=complex)
    for ax in range(p.d):
        shape = [1] * p.d
        shape[ax] = n
        phase = phase * np.exp(-1j * theta * idx).reshape(shape)
    return (spectrum * phase).real


def _pick(table: np.ndarray, points: np.ndarray) -> np.ndarray:
    n = table.shape[0]
    return table[tuple((points % n).T)]


@dataclass
class QuadratureResult:
    values: np.ndarray
    error: float
    grids: list = field(default_factory=list)


def green_quadrature_many(p: RwParams, points, grid: int = 16, tol: float = 1e-10,
                          max_points: int = 2 ** 24) -> QuadratureResult:
    """``C_mu`` at several points by grid-doubling until successive grids agree.

    At ``mu = mu_c`` (d > 2) the midpoint error is first order in the mesh,
    so three grids are combined by Richardson extrapolation.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.int64))
    if points.shape[1] != p.d:
        raise ValueError("points have the wrong dimension")
    if p.critical and p.d <= 2:
        raise ValueError("the Fourier integral diverges at mu_c for d <= 2")
    if p.mu == 0:
        return QuadratureResult(np.all(points == 0, axis=1).astype(float), 0.0, [])
    need = 2 * int(np.max(np.abs(points))) + 2
    n = max(grid, 8, need)
    history = []
    while True:
        if n ** p.d > max_points:
            raise QuadratureError(
                f"grid budget exhausted at n={n} (d={p.d}); last estimates {history[-2:]!r}")
        history.append((n, _pick(quadrature_grid_table(p, n), points)))
        if p.critical:
            if len(history) >= 3:
                (_, q1), (_, q2), (_, q3) = history[-3:]
                r1 = 2 * q2 - q1
                r2 = 2 * q3 - q2
                est = (4 * r2 - r1) / 3
                err = float(np.max(np.abs(est - r2)))
                if err <= tol:
                    return QuadratureResult(est, err, [h[0] for h in history])
        elif len(history) >= 2:
            err = float(np.max(np.abs(history[-1][1] - history[-2][1])))
            if err <= tol:
                return QuadratureResult(history[-1][1], err, [h[0] for h in history])
        n *= 2


def green_quadrature(p: RwParams, x, grid: int = 16, tol: float = 1e-10,
                     max_points: int = 2 ** 24) -> float:
    """``C_mu(x)`` from the Fourier integral."""
    return float(green_quadrature_many(p, [tuple(x)], grid, tol, max_points).values[0])


# --------------------------------------------------------------------------
# near-critical bound
# --------------------------------------------------------------------------

@dataclass
class RwBoundReport:
    a1: float
    radii: tuple
    mu_values: tuple
    sup_by_radius: dict
    argmax: dict
    growth: float
    a0_empirical: float

    @property
    def stable(self) -> bool:
        return self.growth <= 0.05


SERIES_Q_MAX = 0.9


def _box_table(p: RwParams, radius: int, grid: int) -> np.ndarray:
    # Far from mu_c the tilt exp(a1 m0 |x|) would amplify the quadrature's
    # absolute round-off; the series keeps relative accuracy there.
    if p.q <= SERIES_Q_MAX:
        return green_series_table(p, radius, tol=1e-15).values
    n = max(grid, 4 * radius + 8)
    t = quadrature_grid_table(p, n)
    idx = np.arange(-radius, radius + 1) % n
    return t[np.ix_(*([idx] * p.d))]


def verify_rw_bound(d: int, radius: int = 20, a1: float = 0.5,
                    mu_fractions=DEFAULT_MU_FRACTIONS, grid: int = 128,
                    grow_to: int | None = None) -> tuple[float, RwBoundReport]:
    """Empirical ``a0 = sup C_mu(x) <x>^{d-2} exp(a1 m0 |x|_inf)`` over a box and a mu-grid.

    The sup is computed on the cube of radius ``radius`` and on a larger cube
    (default 1.5x); ``growth`` is the relative increase between the two.
    """
    if d <= 2:
        raise ValueError("the near-critical bound needs d > 2")
    if not 0 <= a1 < 1:
        raise ValueError("a1 must lie in [0, 1)")
    grow_to = grow_to or (3 * radius) // 2
    radii = (radius, grow_to)
    sups = {r: 0.0 for r in radii}
    where = {}
    mus = tuple(f / (2 * d) for f in mu_fractions)
    big = max(radii)
    ax = np.arange(-big, big + 1)
    g = np.meshgrid(*([ax] * d), indexing="ij")
    xinf = np.max(np.abs(np.stack(g)), axis=0)
    weight_pow = np.maximum(np.sqrt(sum(c.astype(float) ** 2 for c in g)), 1.0) ** (d - 2)
    for mu in mus:
        p = RwParams(d, mu)
        vals = _box_table(p, big, grid)
        m0 = m0_of_mu(p) if mu > 0 else math.inf
        w = vals * weight_pow * np.exp(a1 * m0 * xinf) if math.isfinite(m0) else vals * weight_pow
        for r in radii:
            inside = xinf <= r
            sub = np.where(inside, w, -np.inf)
            i = np.unravel_index(np.argmax(sub), sub.shape)
            if sub[i] > sups[r]:
                sups[r] = float(sub[i])
                where[r] = (mu, tuple(int(c[i]) for c in g))
    growth = sups[radii[1]] / sups[radii[0]] - 1.0
    report = RwBoundReport(a1, radii, mus, sups, where, growth, sups[radii[1]])
    return report.a0_empirical, report


def tilted_partial_sums(p: RwParams, m: float, radii) -> list[float]:
    """``sum_{|x|_inf <= R} C_mu(x) exp(m x_1)`` for growing R."""
    out = []
    table = green_series_table(p, max(radii))
    big = max(radii)
    ax = np.arange(-big, big + 1)
    g = np.meshgrid(*([ax] * p.d), indexing="ij")
    xinf = np.max(np.abs(np.stack(g)), axis=0)
    w = table.values * np.exp(m * g[0])
    for r in radii:
        out.append(float(w[xinf <= r].sum()))
    return out
