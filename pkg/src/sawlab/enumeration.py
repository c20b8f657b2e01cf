"""Exact enumeration of self-avoiding walks on Z^d and on the torus.

The production enumerator is a compiled depth-first search with an
occupancy array. It fixes the first step to ``+e1`` (the remaining 2d - 1
first steps are symmetric images) and partitions the search tree on the
second step; subtree results are merged in a fixed order, so output does not
depend on scheduling.

:func:`count_saws_reference` is an independent pure-Python enumerator that
walks the whole tree with a sorted visited list. It exists to check the
first one.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import LatticeField, norm_inf, project_torus, torus_reduce, unit_vectors

MAX_BOX_SITES = 20_000_000


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration would exceed its memory or walk budget."""

    def __init__(self, message, partial_depth=None):
        super().__init__(message)
        self.partial_depth = partial_depth


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("SAWLAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


# --------------------------------------------------------------------------
# counts container
# --------------------------------------------------------------------------

@dataclass
class SawCounts:
    """Per-length tables ``n -> {x: c_n(x)}``.

    ``torus`` is ``None`` on Z^d, otherwise the torus side ``r``; torus sites
    are stored in the fundamental domain ``[-floor(r/2), ceil(r/2) - 1]^d``.
    """

    d: int
    n_max: int
    tables: list
    torus: int | None = None

    def __post_init__(self):
        if len(self.tables) != self.n_max + 1:
            raise ValueError("need one table per length 0..n_max")

    def totals(self) -> list[int]:
        return [sum(t.values()) for t in self.tables]

    def __getitem__(self, key) -> int:
        n, x = key
        return self.tables[n].get(tuple(x), 0)

    def truncate(self, n_max: int) -> "SawCounts":
        if n_max > self.n_max:
            raise ValueError("cannot extend a truncation")
        return SawCounts(self.d, n_max, self.tables[: n_max + 1], self.torus)

    def sites(self) -> set:
        out = set()
        for t in self.tables:
            out.update(t)
        return out

    def radius(self) -> int:
        return max((norm_inf(x) for x in self.sites()), default=0)

    def coefficient_field(self, n: int) -> LatticeField:
        return LatticeField(self.tables[n], self.d, symmetric=True)

    def label(self) -> str:
        return "Z^%d" % self.d if self.torus is None else "T^%d_%d" % (self.d, self.torus)

    # -- cache file: "n x1 .. xd count" lines with a sha256 trailer
    def dumps(self) -> str:
        lines = [f"# saw counts {self.label()}",
                 f"dim={self.d} nmax={self.n_max} torus={self.torus or 'none'}"]
        for n, t in enumerate(self.tables):
            for x in sorted(t):
                lines.append(f"{n} " + " ".join(str(c) for c in x) + f" {t[x]}")
        body = "\n".join(lines) + "\n"
        digest = hashlib.sha256(body.encode()).hexdigest()
        return body + f"# sha256 {digest}\n"

    @classmethod
    def loads(cls, text: str) -> "SawCounts":
        marker = text.rfind("# sha256 ")
        if marker < 0:
            raise ValueError("counts file has no checksum trailer")
        # lines before the "# saw counts" banner (provenance headers) are not hashed
        start = max(text.find("# saw counts"), 0)
        body, trailer = text[start:marker], text[marker:].split()
        if hashlib.sha256(body.encode()).hexdigest() != trailer[2]:
            raise ValueError("counts file checksum mismatch")
        header = None
        rows = []
        for line in body.splitlines():
            if not line or line.startswith("#"):
                continue
            if line.startswith("dim="):
                header = dict(kv.split("=") for kv in line.split())
                continue
            rows.append(line.split())
        if header is None:
            raise ValueError("counts file has no header")
        d, n_max = int(header["dim"]), int(header["nmax"])
        torus = None if header["torus"] == "none" else int(header["torus"])
        tables = [dict() for _ in range(n_max + 1)]
        for row in rows:
            n = int(row[0])
            tables[n][tuple(int(c) for c in row[1:1 + d])] = int(row[1 + d])
        return cls(d, n_max, tables, torus)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "SawCounts":
        with open(path) as fh:
            return cls.loads(fh.read())


# --------------------------------------------------------------------------
# compiled enumerator
# --------------------------------------------------------------------------

def _class_ids(coords: np.ndarray, base: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetry class of each row of ``coords`` (already non-negative distances)."""
    srt = -np.sort(-coords, axis=1)
    key = np.zeros(len(coords), dtype=np.int64)
    for j in range(coords.shape[1]):
        key = key * base + srt[:, j]
    uniq, inv = np.unique(key, return_inverse=True)
    return inv.astype(np.int64), uniq


def _prefixes(start: int, first: int, seconds) -> list[np.ndarray]:
    return [np.array([start, first, s], dtype=np.int64) for s in seconds if s != start]


def _run_tasks(fn, tasks, threads):
    if threads == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))


def _count_zd(d: int, n_max: int, threads: int) -> SawCounts:
    R = n_max
    L = 2 * R + 1
    if L ** d > MAX_BOX_SITES:
        raise BudgetExceeded(f"Z^{d} box of side {L} exceeds the site budget", partial_depth=None)
    if 2 * d * (2 * d - 1) ** max(n_max - 1, 0) >= 2 ** 62:
        raise BudgetExceeded("counts would overflow 64-bit integers")
    strides = np.array([L ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    grids = np.indices((L,) * d, dtype=np.int16).reshape(d, -1).T - R
    cls, _ = _class_ids(np.abs(grids).astype(np.int64), R + 1)
    n_cls = int(cls.max()) + 1
    orbit = np.bincount(cls, minlength=n_cls)
    steps = np.array([sum(int(c) * int(s) for c, s in zip(e, strides)) for e in unit_vectors(d)],
                     dtype=np.int64)
    origin = int(R * strides.sum())
    total = np.zeros((n_max + 1, n_cls), dtype=np.int64)
    total[0, cls[origin]] = 1
    if n_max >= 1:
        e1 = origin + int(steps[0])
        total[1, cls[e1]] = 2 * d
    if n_max >= 2:
        tasks = _prefixes(origin, e1, [e1 + int(s) for s in steps])

        def work(prefix):
            occ = np.zeros(L ** d, dtype=np.uint8)
            return _kernels.dfs_offsets(n_max, occ, steps, cls, n_cls, prefix)

        for part in _run_tasks(work, tasks, threads):
            total[2:] += 2 * d * part[2:]
    return _expand(d, n_max, None, total, cls, orbit, grids)


def _expand(d, n_max, torus, total, cls, orbit, coords) -> SawCounts:
    tables = []
    for n in range(n_max + 1):
        row = total[n]
        if np.any(row % orbit):
            raise AssertionError("class counts not divisible by orbit sizes")
        per = (row // orbit)[cls]
        nz = np.nonzero(per)[0]
        tables.append({tuple(int(c) for c in coords[i]): int(per[i]) for i in nz})
    return SawCounts(d, n_max, tables, torus)


def _count_torus(d: int, n_max: int, r: int, threads: int) -> SawCounts:
    if r < 3:
        raise ValueError("torus side must be >= 3")
    V = r ** d
    n_max = min(n_max, V - 1)
    raw = np.indices((r,) * d).reshape(d, -1).T.astype(np.int64)
    dist = np.minimum(raw, r - raw)
    cls, _ = _class_ids(dist, r)
    n_cls = int(cls.max()) + 1
    orbit = np.bincount(cls, minlength=n_cls)
    strides = np.array([r ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    nbr = np.empty((V, 2 * d), dtype=np.int64)
    for k, e in enumerate(unit_vectors(d)):
        nbr[:, k] = ((raw + np.array(e)) % r) @ strides
    total = np.zeros((n_max + 1, n_cls), dtype=np.int64)
    total[0, cls[0]] = 1
    if n_max >= 1:
        e1 = int(nbr[0, 0])
        total[1, cls[e1]] = 2 * d
    if n_max >= 2:
        tasks = _prefixes(0, e1, [int(s) for s in nbr[e1]])

        def work(prefix):
            occ = np.zeros(V, dtype=np.uint8)
            return _kernels.dfs_table(n_max, occ, nbr, cls, n_cls, prefix)

        for part in _run_tasks(work, tasks, threads):
            total[2:] += 2 * d * part[2:]
    fund = np.vectorize(lambda c: torus_reduce(int(c), r))(raw) if V else raw
    return _expand(d, n_max, r, total, cls, orbit, fund)


def count_saws(d: int, n_max: int, torus: int | None = None, threads: int | None = None) -> SawCounts:
    """Exact counts ``c_n(x)`` for ``n <= n_max`` on Z^d or on the torus of side ``torus``.

    On the torus ``n_max`` is capped at ``r^d - 1``, the longest possible walk.
    """
    if d < 1 or n_max < 0:
        raise ValueError("need d >= 1 and n_max >= 0")
    threads = resolve_threads(threads)
    if torus is None:
        return _count_zd(d, n_max, threads)
    return _count_torus(d, n_max, torus, threads)


# --------------------------------------------------------------------------
# reference enumerator
# --------------------------------------------------------------------------

def count_saws_reference(d: int, n_max: int, torus: int | None = None) -> SawCounts:
    """Plain recursive enumeration with a coordinate-sorted visited list.

    No symmetry reduction and no hashing: every walk is generated.
    """
    steps = unit_vectors(d)
    if torus is not None:
        n_max = min(n_max, torus ** d - 1)
        move = lambda p, e: project_torus(tuple(a + b for a, b in zip(p, e)), torus)
    else:
        move = lambda p, e: tuple(a + b for a, b in zip(p, e))
    tables = [dict() for _ in range(n_max + 1)]
    origin = (0,) * d
    visited = [origin]

    def extend(p, n):
        t = tables[n]
        t[p] = t.get(p, 0) + 1
        if n == n_max:
            return
        for e in steps:
            q = move(p, e)
            i = bisect.bisect_left(visited, q)
            if i < len(visited) and visited[i] == q:
                continue
            visited.insert(i, q)
            extend(q, n + 1)
            del visited[i]

    extend(origin, 0)
    return SawCounts(d, n_max, tables, torus)


def count_all_walks(d: int, n: int) -> dict:
    """``|Omega|^n D^{*n}(x)``: number of unrestricted n-step walks ending at x."""
    cur = {(0,) * d: 1}
    steps = unit_vectors(d)
    for _ in range(n):
        nxt = {}
        for x, c in cur.items():
            for e in steps:
                y = tuple(a + b for a, b in zip(x, e))
                nxt[y] = nxt.get(y, 0) + c
        cur = nxt
    return cur


# --------------------------------------------------------------------------
# generating functions
# --------------------------------------------------------------------------

def tail_bound(d: int, n_max: int, z) -> float:
    """Bound on the weight of walks longer than ``n_max``, from non-reversal counting."""
    k = 2 * d - 1
    if z < 0 or k * z >= 1:
        raise ValueError(f"no geometric certificate: (2d-1) z = {k * z} >= 1")
    if z == 0:
        return 0.0
    return 2 * d * k ** n_max * z ** (n_max + 1) / (1 - k * z)


@dataclass
class TruncatedSeries:
    """``G_{z, <= n_max}`` with a certificate on the omitted weight.

    ``tail`` bounds ``sum_x (G_z(x) - G_{z,<=n_max}(x))`` and therefore every
    single site; it is ``None`` when ``(2d - 1) z >= 1``.
    """

    counts: SawCounts
    z: object
    G: LatticeField
    tail: float | None

    @property
    def d(self) -> int:
        return self.counts.d

    @property
    def n_max(self) -> int:
        return self.counts.n_max

    @property
    def torus(self):
        return self.counts.torus

    @property
    def certified(self) -> bool:
        return self.tail is not None


def two_point(counts: SawCounts, z) -> TruncatedSeries:
    """``G_{z,<=n_max}(x) = sum_{n <= n_max} c_n(x) z^n``.

    Exact when ``z`` is an ``int`` or ``Fraction``.
    """
    if z < 0:
        raise ValueError("z must be >= 0")
    vals: dict = {}
    zn = z ** 0
    for n, t in enumerate(counts.tables):
        for x, c in t.items():
            vals[x] = vals.get(x, 0) + c * zn
        zn = zn * z
    G = LatticeField(vals, counts.d, symmetric=True)
    try:
        tail = tail_bound(counts.d, counts.n_max, z)
        if counts.torus is not None and counts.n_max >= counts.torus ** counts.d - 1:
            tail = 0.0
    except ValueError:
        tail = 0.0 if counts.torus is not None and counts.n_max >= counts.torus ** counts.d - 1 else None
    return TruncatedSeries(counts, z, G, tail)


def susceptibility(series: TruncatedSeries) -> tuple[float, float]:
    """Truncated ``chi(z) = sum_x G_z(x)`` and the tail to add for an upper bound."""
    if series.tail is None:
        raise ValueError("no tail certificate at this z")
    return series.G.total(), series.tail


def bubble(series: TruncatedSeries, m: float = 0.0) -> float:
    """Truncated bubble ``sum_{x != 0} (G_z(x) exp(m x_1))^2``, a lower bound on the full one."""
    if m < 0:
        raise ValueError("m must be >= 0")
    total = 0.0
    for x, v in series.G.items():
        if any(x):
            total += (float(v) * math.exp(m * x[0])) ** 2
    return total


class InsufficientRange(ValueError):
    """Raised when a decay fit has too few usable points."""


def _axis_values(G, xs, d):
    if isinstance(G, TruncatedSeries):
        G = G.G
    return np.array([float(G[(x,) + (0,) * (d - 1)]) for x in xs])


def mass_estimate(series, axis_range, d: int | None = None) -> float:
    """Least-squares fit of ``log G(x1 e1) = -m x1 - (d-1)/2 log x1 + c``.

    ``series`` is a :class:`TruncatedSeries` or any field on Z^d.
    """
    if d is None:
        d = series.d if isinstance(series, TruncatedSeries) else series.dim
    xs = np.array(list(axis_range), dtype=float)
    if len(xs) < 2 or np.any(xs < 1):
        raise InsufficientRange("need at least two positive axis points")
    ys = _axis_values(series, xs.astype(int), d)
    if np.any(ys <= 0):
        raise InsufficientRange(f"non-positive values on the axis range {list(xs.astype(int))}")
    target = np.log(ys) + 0.5 * (d - 1) * np.log(xs)
    if np.ptp(np.log(ys)) < 1.0:
        raise InsufficientRange("less than one e-fold of decay across the fit range")
    A = np.stack([-xs, np.ones_like(xs)], axis=1)
    (m, _), *_ = np.linalg.lstsq(A, target, rcond=None)
    return float(m)


def estimate_zc(totals) -> tuple[float, float]:
    """Critical fugacity from total counts by the ratio method.

    Uses the linearly extrapolated ratios ``n r_n - (n-1) r_{n-1}`` of the
    alternate-term ratios ``sqrt(c_n / c_{n-2})`` (which damp the
    odd/even oscillation of bipartite lattices), then an Aitken step on the
    last three. Returns ``(z_c, spread)``; the spread of the last estimates
    is a heuristic uncertainty, not a rigorous error bar.
    """
    c = [int(v) for v in totals]
    n_max = len(c) - 1
    if n_max < 6:
        raise InsufficientRange("need counts through n >= 6")
    ratio = {n: math.sqrt(c[n] / c[n - 2]) for n in range(3, n_max + 1)}
    lin = [n * ratio[n] - (n - 1) * ratio[n - 1] for n in range(4, n_max + 1)]
    mu = lin[-1]
    if len(lin) >= 3:
        a, b, cc = lin[-3:]
        den = (cc - b) - (b - a)
        if den != 0:
            mu = cc - (cc - b) ** 2 / den
    spread = max(abs(v - mu) for v in lin[-3:])
    zc = 1.0 / mu
    return zc, spread / mu ** 2


def susceptibility_lower_bound(z: float, zc: float) -> float:
    """``(1 - z/z_c)^{-1}``, the subadditivity lower bound on chi."""
    return 1.0 / (1.0 - z / zc)
