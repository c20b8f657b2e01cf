"""Fields on Z^d and the discrete torus.

A :class:`LatticeField` is a finitely supported function ``Z^d -> R`` stored
as a sparse ``{coords: value}`` map. Values may be floats, ints or
:class:`fractions.Fraction`; arithmetic never coerces exact values to float
unless a float is mixed in.

Dense numpy staging is used inside :func:`convolve` when both operands are
floating point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Number
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np
from scipy import fft as sfft

ROUNDOFF_TOL = 1e-10

Point = tuple[int, ...]


# --------------------------------------------------------------------------
# points
# --------------------------------------------------------------------------

def norm2(x: Iterable[int]) -> float:
    return math.sqrt(sum(c * c for c in x))


def norm_inf(x: Iterable[int]) -> int:
    return max((abs(c) for c in x), default=0)


def norm1(x: Iterable[int]) -> int:
    return sum(abs(c) for c in x)


def xvee(x: Iterable[int]) -> float:
    """Return ``max(|x|, 1)`` with ``|x|`` the Euclidean norm."""
    return max(norm2(x), 1.0)


def torus_reduce(c: int, r: int) -> int:
    """Reduce one coordinate into the fundamental domain ``[-floor(r/2), ceil(r/2) - 1]``."""
    lo = -(r // 2)
    return (c - lo) % r + lo


def project_torus(x: Iterable[int], r: int) -> Point:
    """Canonical projection of a point of Z^d onto the torus of side ``r``."""
    if r < 3:
        raise ValueError(f"torus side must be >= 3, got {r}")
    return tuple(torus_reduce(int(c), r) for c in x)


def in_fundamental_domain(x: Iterable[int], r: int) -> bool:
    lo, hi = -(r // 2), (r + 1) // 2 - 1
    return all(lo <= c <= hi for c in x)


def unit_vectors(d: int) -> list[Point]:
    """The 2d nearest-neighbour steps, ordered +e1, -e1, +e2, -e2, ..."""
    out = []
    for j in range(d):
        for s in (1, -1):
            e = [0] * d
            e[j] = s
            out.append(tuple(e))
    return out


def symmetry_orbit(x: Point) -> set[Point]:
    """Images of ``x`` under coordinate permutations and sign flips."""
    orbit = set()
    for perm in itertools.permutations(x):
        for signs in itertools.product((1, -1), repeat=len(x)):
            orbit.add(tuple(s * c for s, c in zip(signs, perm)))
    return orbit


def canonical(x: Iterable[int]) -> Point:
    """Representative of the hyperoctahedral orbit: sorted absolute values, descending."""
    return tuple(sorted((abs(c) for c in x), reverse=True))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lo <= x <= hi`` (inclusive) in Z^d."""

    lo: Point
    hi: Point

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners have different dimensions")

    @classmethod
    def cube(cls, d: int, radius: int) -> "Box":
        return cls((-radius,) * d, (radius,) * d)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def __contains__(self, x) -> bool:
        return all(l <= c <= h for l, c, h in zip(self.lo, x, self.hi))

    def points(self) -> Iterator[Point]:
        return itertools.product(*(range(l, h + 1) for l, h in zip(self.lo, self.hi)))

    def minkowski(self, other: "Box") -> "Box":
        return Box(tuple(a + b for a, b in zip(self.lo, other.lo)),
                   tuple(a + b for a, b in zip(self.hi, other.hi)))


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------

def _is_exact(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


class LatticeField:
    """Finitely supported real function on Z^d.

    Zero entries are dropped on construction. Instances are treated as
    immutable; every operation returns a new field.
    """

    __slots__ = ("_data", "dim", "symmetric")

    def __init__(self, data: Mapping[Point, Number] | None = None, dim: int | None = None,
                 symmetric: bool = False):
        data = dict(data or {})
        if dim is None:
            if not data:
                raise ValueError("dimension required for an empty field")
            dim = len(next(iter(data)))
        clean = {}
        for x, v in data.items():
            x = tuple(int(c) for c in x)
            if len(x) != dim:
                raise ValueError(f"point {x} does not have dimension {dim}")
            if v != 0:
                clean[x] = v
        self._data = clean
        self.dim = dim
        self.symmetric = symmetric

    # -- mapping protocol
    def __getitem__(self, x) -> Number:
        return self._data.get(tuple(x), 0)

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def items(self):
        return self._data.items()

    def keys(self):
        return self._data.keys()

    def values(self):
        return self._data.values()

    def __repr__(self) -> str:
        return f"LatticeField(dim={self.dim}, support={len(self)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeField):
            return NotImplemented
        return self.dim == other.dim and self._data == other._data

    __hash__ = None

    @property
    def is_exact(self) -> bool:
        return all(_is_exact(v) for v in self._data.values())

    def radius(self) -> int:
        """Smallest R with support inside the cube [-R, R]^d."""
        return max((norm_inf(x) for x in self._data), default=0)

    def bounding_box(self) -> Box:
        if not self._data:
            return Box((0,) * self.dim, (0,) * self.dim)
        pts = np.array(list(self._data), dtype=np.int64)
        return Box(tuple(int(v) for v in pts.min(0)), tuple(int(v) for v in pts.max(0)))

    # -- arithmetic
    def _binary(self, other: "LatticeField", op) -> "LatticeField":
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        keys = set(self._data) | set(other._data)
        return LatticeField({x: op(self[x], other[x]) for x in keys}, self.dim,
                            self.symmetric and other.symmetric)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __neg__(self):
        return self.scale(-1)

    def __mul__(self, c):
        if isinstance(c, LatticeField):
            return NotImplemented
        return self.scale(c)

    __rmul__ = __mul__

    def scale(self, c) -> "LatticeField":
        return LatticeField({x: c * v for x, v in self._data.items()}, self.dim, self.symmetric)

    def map(self, fn: Callable[[Point, Number], Number]) -> "LatticeField":
        return LatticeField({x: fn(x, v) for x, v in self._data.items()}, self.dim)

    def restrict(self, box: Box) -> "LatticeField":
        return LatticeField({x: v for x, v in self._data.items() if x in box}, self.dim,
                            self.symmetric)

    def to_float(self) -> "LatticeField":
        return LatticeField({x: float(v) for x, v in self._data.items()}, self.dim, self.symmetric)

    def total(self):
        return sum(self._data.values(), 0)

    def sup_norm(self) -> float:
        return max((abs(v) for v in self._data.values()), default=0)

    def lp_norm(self, p: float = 2.0) -> float:
        if not self._data:
            return 0.0
        vals = np.abs(np.array([float(v) for v in self._data.values()]))
        return float(np.sum(vals ** p) ** (1.0 / p))

    # -- symmetry
    def check_symmetric(self, rel_tol: float = 0.0) -> bool:
        """Exhaustive orbit check under the hyperoctahedral group."""
        seen = set()
        for x, v in self._data.items():
            c = canonical(x)
            if c in seen:
                continue
            seen.add(c)
            for y in symmetry_orbit(x):
                w = self[y]
                if rel_tol == 0.0:
                    if w != v:
                        return False
                elif abs(w - v) > rel_tol * max(abs(v), abs(w)):
                    return False
        return True

    # -- dense interop
    def to_dense(self, box: Box | None = None, dtype=float) -> tuple[np.ndarray, Box]:
        box = box or self.bounding_box()
        arr = np.zeros(box.shape, dtype=dtype)
        if self._data:
            pts = np.array(list(self._data), dtype=np.int64)
            inside = np.all((pts >= box.lo) & (pts <= box.hi), axis=1)
            vals = np.array(list(self._data.values()), dtype=dtype)
            idx = tuple((pts[inside] - np.array(box.lo)).T)
            arr[idx] = vals[inside]
        return arr, box

    @classmethod
    def from_dense(cls, arr: np.ndarray, box: Box, symmetric: bool = False) -> "LatticeField":
        nz = np.nonzero(arr)
        coords = np.stack(nz, axis=1) + np.array(box.lo)
        vals = arr[nz]
        data = {tuple(int(c) for c in p): float(v) for p, v in zip(coords, vals)}
        return cls(data, box.dim, symmetric)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates (n, d) and float values (n,) of the support."""
        if not self._data:
            return np.zeros((0, self.dim), dtype=np.int64), np.zeros(0)
        return (np.array(list(self._data), dtype=np.int64),
                np.array([float(v) for v in self._data.values()]))


def delta(d: int, value=1) -> LatticeField:
    """Kronecker delta at the origin."""
    return LatticeField({(0,) * d: value}, d, symmetric=True)


def step_distribution(d: int, exact: bool = False) -> LatticeField:
    """Nearest-neighbour step distribution ``D(x) = 1{|x| = 1} / (2d)``."""
    w = Fraction(1, 2 * d) if exact else 1.0 / (2 * d)
    return LatticeField({e: w for e in unit_vectors(d)}, d, symmetric=True)


def rw_kernel(d: int, mu) -> LatticeField:
    """``A_mu = delta - mu |Omega| D``, the random-walk convolution kernel."""
    exact = _is_exact(mu)
    return delta(d) - step_distribution(d, exact).scale(mu * 2 * d)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def _sparse_convolve(f: LatticeField, g: LatticeField, box: Box | None) -> dict:
    out: dict = {}
    if len(f) > len(g):
        f, g = g, f
    gitems = list(g.items())
    for y, fy in f.items():
        for w, gw in gitems:
            x = tuple(a + b for a, b in zip(y, w))
            if box is not None and x not in box:
                continue
            out[x] = out.get(x, 0) + fy * gw
    return out


DENSE_LIMIT = 2 ** 24


def _crop(full: Box, box: Box | None) -> Box | None:
    if box is None:
        return full
    lo = tuple(max(a, b) for a, b in zip(full.lo, box.lo))
    hi = tuple(min(a, b) for a, b in zip(full.hi, box.hi))
    if any(a > b for a, b in zip(lo, hi)):
        return None
    return Box(lo, hi)


def _convolve_float(f: "LatticeField", g: "LatticeField", box: Box | None, sym: bool,
                    route: str | None = None) -> "LatticeField":
    """Pick the cheapest of sparse scatter, gather into a small box, or dense FFT."""
    from . import _kernels
    full = f.bounding_box().minkowski(g.bounding_box())
    out = _crop(full, box)
    if out is None:
        return LatticeField({}, f.dim, sym)
    n_out = math.prod(out.shape)
    # periodic length that keeps the output box free of wrap-around
    period = tuple(max(fh - ol, oh - fl) + 1 for fl, fh, ol, oh in zip(full.lo, full.hi, out.lo, out.hi))
    n_per = math.prod(period)
    if len(f) > len(g):
        f, g = g, f
    gbox = g.bounding_box()
    costs = {"scatter": len(f) * len(g),
             "gather": n_out * len(f) if math.prod(gbox.shape) <= DENSE_LIMIT else math.inf,
             "fft": 20 * n_per * max(1, math.log2(n_per)) if n_per <= DENSE_LIMIT else math.inf}
    route = route or min(costs, key=costs.get)
    lo = np.array(out.lo, dtype=np.int64)
    shape = np.array(out.shape, dtype=np.int64)
    if route == "scatter":
        ap, av = f.arrays()
        bp, bv = g.arrays()
        flat = _kernels.sparse_convolve_float(ap, av, bp, bv, lo, shape)
        return LatticeField.from_dense(flat.reshape(out.shape), out, sym)
    if route == "gather":
        ap, av = f.arrays()
        garr, gb = g.to_dense()
        flat = _kernels.gather_convolve(lo, shape, ap, av, garr, np.array(gb.lo, dtype=np.int64))
        return LatticeField.from_dense(flat.reshape(out.shape), out, sym)
    fa, fb = f.to_dense()
    ga, gb = g.to_dense()
    res = sfft.irfftn(sfft.rfftn(fa, s=period) * sfft.rfftn(ga, s=period), s=period)
    # index i of res holds the sum at x = fb.lo + gb.lo + i (mod period)
    idx = np.ix_(*[(np.arange(ol, oh + 1) - fl) % P
                   for ol, oh, fl, P in zip(out.lo, out.hi, full.lo, period)])
    return LatticeField.from_dense(res[idx], out, sym)


def convolve(f: LatticeField, g: LatticeField, box: Box | None = None) -> LatticeField:
    """Exact convolution ``(f*g)(x) = sum_y f(y) g(x - y)`` restricted to ``box``.

    ``box=None`` means the full Minkowski sum of the supports. Exact inputs
    (int/Fraction) stay exact; float inputs go through a dense staging buffer.
    """
    if f.dim != g.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {g.dim}")
    sym = f.symmetric and g.symmetric
    if not len(f) or not len(g):
        return LatticeField({}, f.dim, sym)
    if f.is_exact and g.is_exact:
        return LatticeField(_sparse_convolve(f, g, box), f.dim, sym)
    if len(f) * len(g) <= 4096:
        return LatticeField(_sparse_convolve(f.to_float(), g.to_float(), box), f.dim, sym)
    return _convolve_float(f.to_float(), g.to_float(), box, sym)


def tilt(f: LatticeField, m) -> LatticeField:
    """Exponential tilt ``f(x) exp(m x_1)``."""
    if m < 0:
        raise ValueError("tilt parameter must be >= 0")
    if m == 0:
        return LatticeField(dict(f.items()), f.dim, f.symmetric)
    return LatticeField({x: v * math.exp(m * x[0]) for x, v in f.items()}, f.dim)


def fourier_eval(f: LatticeField, k) -> complex:
    """``sum_x f(x) exp(i k.x)`` for a single momentum ``k``."""
    k = np.asarray(k, dtype=float)
    if k.shape != (f.dim,):
        raise ValueError(f"momentum must have {f.dim} components")
    if not len(f):
        return 0j
    pts, vals = f.arrays()
    return complex(np.sum(vals * np.exp(1j * (pts @ k))))


def fourier_many(f: LatticeField, ks: np.ndarray) -> np.ndarray:
    """Vectorised :func:`fourier_eval` over an array of momenta of shape (n, d)."""
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    if not len(f):
        return np.zeros(len(ks), dtype=complex)
    pts, vals = f.arrays()
    out = np.empty(len(ks), dtype=complex)
    chunk = max(1, 2_000_000 // max(len(pts), 1))
    for s in range(0, len(ks), chunk):
        out[s:s + chunk] = np.exp(1j * (ks[s:s + chunk] @ pts.T)) @ vals
    return out


def fourier_real(f: LatticeField, k, rel_tol: float = ROUNDOFF_TOL) -> float:
    """Fourier transform of a symmetric field, checked to be real."""
    v = fourier_eval(f, k)
    scale = sum(abs(float(u)) for u in f.values()) or 1.0
    if abs(v.imag) > rel_tol * scale:
        raise ValueError(f"transform has imaginary part {v.imag:.3e} at k={tuple(k)}")
    return v.real


def moment_sum(f: LatticeField, a: float, m: float = 0.0) -> float:
    """``sum_x |x|^a |f(x) exp(m x_1)|``."""
    if a < 0 or m < 0:
        raise ValueError("moment order and tilt must be >= 0")
    total = 0.0
    for x, v in f.items():
        r = norm2(x)
        if r == 0:
            w = 1.0 if a == 0 else 0.0
        else:
            w = r ** a
        if w:
            total += w * abs(float(v)) * math.exp(m * x[0])
    return total


def exact_moment(f: LatticeField, power: int = 2):
    """``sum_x |x|^power f(x)`` for even integer ``power``, exact on exact fields."""
    if power % 2:
        raise ValueError("exact moments need an even power")
    h = power // 2
    return sum((sum(c * c for c in x) ** h * v for x, v in f.items()), 0)


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else str(v.numerator)
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.17g}"


def parse_value(s: str):
    if "/" in s:
        return Fraction(s)
    try:
        return int(s)
    except ValueError:
        return float(s)


def dumps_field(f: LatticeField, comments: Iterable[str] = ()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append(f"dim={f.dim}")
    for x in sorted(f.keys()):
        lines.append(" ".join(str(c) for c in x) + " " + format_value(f[x]))
    return "\n".join(lines) + "\n"


def loads_field(text: str) -> LatticeField:
    dim = None
    data = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("dim="):
            dim = int(line[4:])
            continue
        if dim is None:
            raise ValueError("missing dim=<d> header")
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(f"bad line {raw!r}: expected {dim} coordinates and a value")
        data[tuple(int(p) for p in parts[:dim])] = parse_value(parts[dim])
    if dim is None:
        raise ValueError("missing dim=<d> header")
    return LatticeField(data, dim)


def write_field(path, f: LatticeField, comments: Iterable[str] = ()) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_field(f, comments))


def read_field(path) -> LatticeField:
    with open(path) as fh:
        return loads_field(fh.read())
