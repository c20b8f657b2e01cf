"""Grand-canonical Monte Carlo for self-avoiding walks (Berretti-Sokal moves).

The chain lives on walks from the origin with stationary weight ``z^{|w|}``.
Each step proposes, with probability 1/2 each, appending a uniformly chosen
neighbour of the endpoint (accepted with ``min(1, 2dz)`` unless it
self-intersects) or deleting the last step (accepted with ``min(1, 1/(2dz))``).
Berretti-Sokal is used rather than pivot because it samples at fixed ``z``
directly.

Random numbers come from numpy's PCG64 through ``Generator.random()`` only,
so the compiled chain and the readable :func:`bs_step` consume identical
streams. Chain ``i`` of a run seeded with ``s`` uses
``SeedSequence(s).spawn(chains)[i]``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .enumeration import resolve_threads
from .lattice import LatticeField, format_value, torus_reduce, unit_vectors

RNG_ALGORITHM = "numpy.PCG64 via SeedSequence.spawn"
_BITS = 12                      # per coordinate in the hash key
_OFF = 1 << (_BITS - 1)
_NBUCKET = 1 << 16


# --------------------------------------------------------------------------
# readable reference chain
# --------------------------------------------------------------------------

@dataclass
class ChainState:
    """A walk from the origin on Z^d (``torus=None``) or on the torus of side ``torus``."""

    d: int
    z: float
    torus: int | None = None
    sites: list = field(default_factory=list)
    steps: int = 0
    max_len: int = 1 << 30

    def __post_init__(self):
        if not self.sites:
            self.sites = [(0,) * self.d]
        self._occ = set(self.sites)

    @property
    def length(self) -> int:
        return len(self.sites) - 1

    @property
    def endpoint(self):
        return self.sites[-1]

    def self_avoiding(self) -> bool:
        return len(set(self.sites)) == len(self.sites)


def bs_step(state: ChainState, rng: np.random.Generator) -> ChainState:
    """One append/delete move; mutates and returns ``state``."""
    d, z = state.d, state.z
    state.steps += 1
    a = 2 * d * z
    if rng.random() < 0.5:
        j = min(int(rng.random() * 2 * d), 2 * d - 1)
        if state.length >= state.max_len:
            return state
        e = unit_vectors(d)[j]
        y = tuple(p + q for p, q in zip(state.endpoint, e))
        if state.torus is not None:
            y = tuple(torus_reduce(c, state.torus) for c in y)
        if y in state._occ:
            return state
        if a < 1 and rng.random() >= a:
            return state
        state.sites.append(y)
        state._occ.add(y)
    else:
        if state.length == 0:
            return state
        if a > 1 and rng.random() >= 1 / a:
            return state
        state._occ.discard(state.sites.pop())
    return state


# --------------------------------------------------------------------------
# compiled chains
# --------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _key(x):
    k = 0
    for c in x:
        k = (k << _BITS) | (c + _OFF)
    return k


@numba.njit(nogil=True, cache=True)
def _bucket(k):
    h = (k ^ (k >> 29)) * 2654435761
    return (h >> 13) & (_NBUCKET - 1)


@numba.njit(nogil=True, cache=True)
def _run_zd(rng, d, z, n_steps, thin, record, sites, keys, head, nxt, n0,
            hist, ovf, radius, block_len, n_blocks, max_len):
    """Advance a Z^d chain by ``n_steps``; returns (n, stats).

    ``sites`` (max_len+1, d) holds the walk, ``keys`` its hash keys and
    ``head``/``nxt`` the chained hash table (insertions and deletions are LIFO,
    so a deleted site is always the head of its bucket).
    ``stats`` = [appends tried, appends accepted, deletes tried, deletes accepted,
    samples, overflow samples, sum of lengths, max_len hits].
    """
    stats = np.zeros(8, dtype=np.int64)
    a = 2.0 * d * z
    inv = 1.0 / a if a > 0 else np.inf
    n = n0
    side = 2 * radius + 1
    y = np.empty(d, dtype=np.int64)
    for t in range(n_steps):
        if rng.random() < 0.5:
            j = int(rng.random() * 2 * d)
            if j >= 2 * d:
                j = 2 * d - 1
            stats[0] += 1
            if n >= max_len:
                stats[7] += 1
            else:
                for i in range(d):
                    y[i] = sites[n, i]
                y[j // 2] += 1 - 2 * (j % 2)
                k = _key(y)
                b = _bucket(k)
                p = head[b]
                hit = False
                while p >= 0:
                    if keys[p] == k:
                        hit = True
                        break
                    p = nxt[p]
                if not hit and (a >= 1.0 or rng.random() < a):
                    n += 1
                    for i in range(d):
                        sites[n, i] = y[i]
                    keys[n] = k
                    nxt[n] = head[b]
                    head[b] = n
                    stats[1] += 1
        else:
            stats[2] += 1
            if n > 0 and (a <= 1.0 or rng.random() < inv):
                b = _bucket(keys[n])
                head[b] = nxt[n]
                n -= 1
                stats[3] += 1
        if record and (t + 1) % thin == 0:
            s = stats[4]
            stats[4] += 1
            stats[6] += n
            blk = s // block_len
            if blk >= n_blocks:
                blk = n_blocks - 1
            idx = 0
            inside = True
            for i in range(d):
                c = sites[n, i] + radius
                if c < 0 or c >= side:
                    inside = False
                    break
                idx = idx * side + c
            if inside:
                hist[blk, idx] += 1
            else:
                ovf[blk] += 1
                stats[5] += 1
    return n, stats


@numba.njit(nogil=True, cache=True)
def _run_torus(rng, d, z, r, n_steps, thin, record, sites, occ, n0,
               hist, block_len, n_blocks, max_len):
    """Torus chain; ``sites`` holds flat indices (mixed radix, coordinate c stored as c mod r)."""
    stats = np.zeros(8, dtype=np.int64)
    a = 2.0 * d * z
    inv = 1.0 / a if a > 0 else np.inf
    n = n0
    for t in range(n_steps):
        if rng.random() < 0.5:
            j = int(rng.random() * 2 * d)
            if j >= 2 * d:
                j = 2 * d - 1
            stats[0] += 1
            if n >= max_len:
                stats[7] += 1
            else:
                ax = j // 2
                stride = 1
                for i in range(d - 1 - ax):
                    stride *= r
                cur = sites[n]
                c = (cur // stride) % r
                nc = (c + 1 - 2 * (j % 2)) % r
                s = cur + (nc - c) * stride
                if occ[s] == 0 and (a >= 1.0 or rng.random() < a):
                    n += 1
                    sites[n] = s
                    occ[s] = 1
                    stats[1] += 1
        else:
            stats[2] += 1
            if n > 0 and (a <= 1.0 or rng.random() < inv):
                occ[sites[n]] = 0
                n -= 1
                stats[3] += 1
        if record and (t + 1) % thin == 0:
            s = stats[4]
            stats[4] += 1
            stats[6] += n
            blk = s // block_len
            if blk >= n_blocks:
                blk = n_blocks - 1
            hist[blk, sites[n]] += 1
    return n, stats


# --------------------------------------------------------------------------
# runs and histograms
# --------------------------------------------------------------------------

@dataclass
class EndpointHistogram:
    """Per-block endpoint counts.

    ``counts`` has shape ``(blocks, side, ..., side)``; for Z^d the box is
    ``[-radius, radius]^d`` (endpoints outside it are counted in
    ``overflow``), for the torus it is indexed by coordinates mod r.
    """

    d: int
    torus: int | None
    radius: int
    counts: np.ndarray
    overflow: np.ndarray
    thin: int
    meta: dict = field(default_factory=dict)

    @property
    def samples_per_block(self) -> np.ndarray:
        return self.counts.reshape(len(self.counts), -1).sum(1) + self.overflow

    @property
    def total(self) -> int:
        return int(self.samples_per_block.sum())

    def _index(self, x) -> tuple:
        if self.torus is not None:
            return tuple(c % self.torus for c in x)
        if max(abs(c) for c in x) > self.radius:
            raise KeyError(f"{x} outside the recorded box")
        return tuple(c + self.radius for c in x)

    def count(self, x) -> int:
        return int(self.counts[(slice(None),) + self._index(x)].sum())

    def merged(self, other: "EndpointHistogram") -> "EndpointHistogram":
        if (self.d, self.torus, self.radius, self.thin) != (other.d, other.torus, other.radius, other.thin):
            raise ValueError("histograms are not compatible")
        return EndpointHistogram(self.d, self.torus, self.radius,
                                 np.concatenate([self.counts, other.counts]),
                                 np.concatenate([self.overflow, other.overflow]), self.thin,
                                 {"merged": [self.meta, other.meta]})

    def coords(self) -> np.ndarray:
        """Lattice coordinates of every histogram cell, shape (side^d, d)."""
        side = self.counts.shape[1]
        g = np.indices((side,) * self.d).reshape(self.d, -1).T
        if self.torus is None:
            return g - self.radius
        r = self.torus
        return np.vectorize(lambda c: torus_reduce(int(c), r))(g) if len(g) else g

    # -- persistence ------------------------------------------------------

    def to_field(self) -> LatticeField:
        tot = self.counts.sum(0).reshape(-1)
        pts = self.coords()
        return LatticeField({tuple(int(c) for c in p): int(v) for p, v in zip(pts, tot) if v},
                            self.d)

    def sidecar(self) -> dict:
        return {"d": self.d, "torus": self.torus, "radius": self.radius, "thin": self.thin,
                "blocks": int(len(self.counts)), "total": self.total,
                "overflow": int(self.overflow.sum()), **self.meta}

    def dumps_blocks(self) -> str:
        """Sparse per-block counts: ``block x1 .. xd count`` lines, then ``overflow`` lines."""
        pts = self.coords()
        lines = []
        for b, blk in enumerate(self.counts.reshape(len(self.counts), -1)):
            for i in np.flatnonzero(blk):
                lines.append(f"{b} " + " ".join(str(int(c)) for c in pts[i]) + f" {int(blk[i])}")
        lines += [f"overflow {b} {int(v)}" for b, v in enumerate(self.overflow)]
        return "\n".join(lines) + "\n"

    def save(self, stem) -> None:
        """``<stem>.field`` (summed counts), ``<stem>.blocks`` (per block) and ``<stem>.json``."""
        from .lattice import write_field
        write_field(f"{stem}.field", self.to_field(), [f"endpoint counts, thin={self.thin}"])
        with open(f"{stem}.blocks", "w") as fh:
            fh.write(self.dumps_blocks())
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")

    @classmethod
    def load(cls, stem) -> "EndpointHistogram":
        with open(f"{stem}.json") as fh:
            meta = json.load(fh)
        d, radius, torus = meta["d"], meta["radius"], meta["torus"]
        side = torus if torus is not None else 2 * radius + 1
        counts = np.zeros((meta["blocks"],) + (side,) * d, dtype=np.int64)
        overflow = np.zeros(meta["blocks"], dtype=np.int64)
        with open(f"{stem}.blocks") as fh:
            for line in fh:
                parts = line.split()
                if parts[0] == "overflow":
                    overflow[int(parts[1])] = int(parts[2])
                    continue
                xs = [int(c) for c in parts[1:1 + d]]
                idx = tuple(c % torus if torus is not None else c + radius for c in xs)
                counts[(int(parts[0]),) + idx] = int(parts[-1])
        keys = {"d", "torus", "radius", "thin", "blocks", "total", "overflow"}
        return cls(d, torus, radius, counts, overflow, meta["thin"],
                   {k: v for k, v in meta.items() if k not in keys})


@dataclass
class RunConfig:
    d: int
    z: float
    torus: int | None = None
    steps: int = 10 ** 6
    burnin: int = 10 ** 6
    thin: int | None = None
    seed: int = 0
    chains: int = 1
    blocks: int = 16
    radius: int = 8
    max_len: int = 2000

    def validate(self):
        if self.z <= 0:
            raise ValueError("z must be positive")
        if self.torus is not None and self.torus < 3:
            raise ValueError("torus side must be >= 3")
        if self.torus is None and (self.max_len + 1) >= _OFF:
            raise ValueError(f"max_len must stay below {_OFF - 1} on Z^d")
        if self.d * _BITS > 62:
            raise ValueError("dimension too large for the hash key")
        if self.steps < self.blocks:
            raise ValueError("need at least one step per block")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.__dict__, sort_keys=True).encode()).hexdigest()[:16]


def _chain(cfg: RunConfig, seq: np.random.SeedSequence, probe_only: bool = False):
    rng = np.random.Generator(np.random.PCG64(seq))
    d = cfg.d
    L = cfg.max_len
    if cfg.torus is None:
        sites = np.zeros((L + 1, d), dtype=np.int64)
        keys = np.zeros(L + 1, dtype=np.int64)
        head = np.full(_NBUCKET, -1, dtype=np.int64)
        nxt = np.full(L + 1, -1, dtype=np.int64)
        keys[0] = _key(sites[0])
        head[_bucket(keys[0])] = 0
        side = 2 * cfg.radius + 1

        def go(n0, steps, thin, record, hist, ovf, block_len, blocks):
            return _run_zd(rng, d, cfg.z, steps, thin, record, sites, keys, head, nxt, n0,
                           hist, ovf, cfg.radius, block_len, blocks, L)
    else:
        r = cfg.torus
        sites = np.zeros(L + 1, dtype=np.int64)
        occ = np.zeros(r ** d, dtype=np.uint8)
        occ[0] = 1
        side = r

        def go(n0, steps, thin, record, hist, ovf, block_len, blocks):
            return _run_torus(rng, d, cfg.z, r, steps, thin, record, sites, occ, n0,
                              hist, block_len, blocks, L)
    n = 0
    if cfg.burnin:
        n, _ = go(n, cfg.burnin, 1, False, np.zeros((1, 1), np.int64), np.zeros(1, np.int64), 1, 1)
    mean_len = 0.0
    if cfg.thin is None:
        # probe the mean length to set the thinning interval; these steps are not recorded
        probe_steps = max(10 ** 4, min(10 ** 5, cfg.burnin))
        n, probe = go(n, probe_steps, 1, True, np.zeros((1, side ** d), np.int64),
                      np.zeros(1, np.int64), probe_steps, 1)
        mean_len = probe[6] / max(probe[4], 1)
    thin = cfg.thin or max(1, int(round(2 * d * max(mean_len, 0.5))))
    if probe_only:
        return thin
    n_samples = cfg.steps // thin
    block_len = max(1, -(-n_samples // cfg.blocks))
    hist = np.zeros((cfg.blocks, side ** d), dtype=np.int64)
    overflow = np.zeros(cfg.blocks, dtype=np.int64)
    n, st = go(n, cfg.steps, thin, True, hist, overflow, block_len, cfg.blocks)
    meta = {"seed_entropy": str(seq.entropy), "spawn_key": list(seq.spawn_key),
            "mean_length": float(st[6] / max(st[4], 1)), "burnin_mean_length": float(mean_len),
            "acceptance_append": float(st[1] / max(st[0], 1)),
            "acceptance_delete": float(st[3] / max(st[2], 1)), "max_len_hits": int(st[7]),
            "steps": cfg.steps, "samples": int(st[4])}
    return EndpointHistogram(d, cfg.torus, cfg.radius if cfg.torus is None else 0,
                             hist.reshape((cfg.blocks,) + (side,) * d), overflow.astype(np.int64),
                             thin, meta)


def run_chains(cfg: RunConfig, threads: int | None = None) -> EndpointHistogram:
    """Independent chains merged in chain order (so thread count does not matter)."""
    cfg.validate()
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    auto_thin = cfg.thin is None
    if auto_thin:
        # one shared interval so blocks from all chains carry equal weight
        cfg = dataclasses.replace(cfg, thin=_chain(cfg, seqs[0], probe_only=True))
    threads = min(resolve_threads(threads), cfg.chains)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda s: _chain(cfg, s), seqs))
    else:
        parts = [_chain(cfg, s) for s in seqs]
    h = parts[0]
    for p in parts[1:]:
        h = h.merged(p)
    h.meta = {"config": dict(cfg.__dict__), "config_hash": cfg.digest(), "auto_thin": auto_thin, "rng": RNG_ALGORITHM,
              "chains": [p.meta for p in parts]}
    return h


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------

def _jackknife(blocks: np.ndarray, est) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one-block jackknife of ``est(summed blocks)``."""
    B = len(blocks)
    tot = blocks.sum(0)
    full = est(tot)
    if B < 2:
        return full, np.full_like(np.asarray(full, dtype=float), np.nan)
    loo = np.stack([est(tot - blocks[b]) for b in range(B)])
    err = np.sqrt((B - 1) / B * ((loo - loo.mean(0)) ** 2).sum(0))
    return full, err


def _origin_index(h: EndpointHistogram) -> tuple:
    return (0,) * h.d if h.torus is not None else (h.radius,) * h.d


def estimate_two_point(h: EndpointHistogram, symmetrize: bool = False):
    """``G(x) = count(x) / count(0)`` with jackknife errors; returns (G, err) as fields."""
    o = _origin_index(h)
    c = h.counts.astype(float)
    if c[(slice(None),) + o].sum() == 0:
        raise ValueError("no samples at the origin; cannot normalise")
    if symmetrize:
        c = symmetrize_counts(c, h.torus)

    def est(t):
        return t / t[o]
    G, err = _jackknife(c, est)
    pts = h.coords()
    Gf = LatticeField({tuple(int(v) for v in p): float(g) for p, g in zip(pts, G.reshape(-1)) if g},
                      h.d, symmetric=symmetrize)
    Ef = LatticeField({tuple(int(v) for v in p): float(e) for p, e in zip(pts, err.reshape(-1)) if e},
                      h.d)
    return Gf, Ef


def symmetrize_counts(c: np.ndarray, torus: int | None) -> np.ndarray:
    """Average block counts over the hypercubic group (axis permutations and reflections)."""
    import itertools
    d = c.ndim - 1
    acc = np.zeros_like(c, dtype=float)
    n = 0
    for perm in itertools.permutations(range(d)):
        p = c.transpose((0,) + tuple(i + 1 for i in perm))
        for signs in itertools.product((False, True), repeat=d):
            q = p
            for ax, s in enumerate(signs):
                if s:
                    q = np.flip(q, axis=ax + 1)
                    if torus is not None:
                        # x -> -x mod r keeps index 0 fixed
                        q = np.roll(q, 1, axis=ax + 1)
            acc += q
            n += 1
    return acc / n


def estimate_chi(h: EndpointHistogram) -> tuple[float, float]:
    """``chi = 1 / P(endpoint = 0)`` with a jackknife error."""
    o = _origin_index(h)
    zero = h.counts[(slice(None),) + o].astype(float)
    tot = h.samples_per_block.astype(float)
    if zero.sum() == 0:
        raise ValueError("no samples at the origin")
    blocks = np.stack([tot, zero], axis=1)
    chi, err = _jackknife(blocks, lambda t: np.array(t[0] / t[1]))
    return float(chi), float(err)


def shell_means(h: EndpointHistogram, shells, domain: int | None = None) -> dict:
    """Mean of ``G-hat`` over ``{x : |x|_inf = s}`` (with jackknife error) for each s.

    ``domain=r`` keeps only sites of the torus fundamental domain
    ``[-floor(r/2), ceil(r/2) - 1]^d``, so Z^d and torus shells cover the same points.
    """
    o = _origin_index(h)
    pts = h.coords()
    ninf = np.abs(pts).max(1) if len(pts) else np.zeros(0, int)
    if domain is not None and len(pts):
        inside = ((pts >= -(domain // 2)) & (pts <= (domain + 1) // 2 - 1)).all(1)
        ninf = np.where(inside, ninf, -1)
    out = {}
    c = h.counts.reshape(len(h.counts), -1).astype(float)
    flat_o = np.ravel_multi_index(o, h.counts.shape[1:])
    for s in shells:
        mask = ninf == s
        if not mask.any():
            raise ValueError(f"shell {s} is not inside the recorded region")
        blocks = np.stack([c[:, mask].sum(1), c[:, flat_o]], axis=1)
        m, e = _jackknife(blocks, lambda t, k=mask.sum(): np.array(t[0] / t[1] / k))
        out[s] = (float(m), float(e), int(mask.sum()))
    return out


def dumps_histogram_csv(h: EndpointHistogram) -> str:
    """Rows ``x1,...,xd,count,G,err`` sorted by coordinates."""
    G, E = estimate_two_point(h)
    F = h.to_field()
    lines = [",".join([f"x{i + 1}" for i in range(h.d)] + ["count", "G", "err"])]
    for x in sorted(F.keys()):
        lines.append(",".join([str(c) for c in x] + [str(F[x]), format_value(G[x]),
                                                      format_value(E[x])]))
    return "\n".join(lines) + "\n"
