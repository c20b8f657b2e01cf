"""Compiled inner loops (numba). Nothing here allocates Python objects."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(nogil=True, cache=True)
def dfs_offsets(n_max, occ, steps, cls, n_cls, prefix):
    """Count self-avoiding extensions of ``prefix`` on a dense Z^d box.

    ``occ`` is a zeroed occupancy array over the flattened box, ``steps`` the
    flat-index offsets of the 2d neighbours and ``cls`` the symmetry class of
    every site. Returns ``counts[n, class]`` for walks of length
    ``len(prefix) - 1 .. n_max`` that begin with ``prefix``.
    """
    counts = np.zeros((n_max + 1, n_cls), dtype=np.int64)
    nsteps = steps.shape[0]
    pos = np.empty(n_max + 1, dtype=np.int64)
    nxt = np.zeros(n_max + 1, dtype=np.int64)
    base = prefix.shape[0] - 1
    for i in range(prefix.shape[0]):
        pos[i] = prefix[i]
        occ[prefix[i]] = 1
    counts[base, cls[pos[base]]] += 1
    depth = base
    nxt[depth] = 0
    while True:
        if depth == n_max or nxt[depth] == nsteps:
            if depth == base:
                break
            occ[pos[depth]] = 0
            depth -= 1
            continue
        k = nxt[depth]
        nxt[depth] = k + 1
        s = pos[depth] + steps[k]
        if occ[s]:
            continue
        depth += 1
        pos[depth] = s
        occ[s] = 1
        nxt[depth] = 0
        counts[depth, cls[s]] += 1
    for i in range(prefix.shape[0]):
        occ[prefix[i]] = 0
    return counts


@numba.njit(nogil=True, cache=True)
def dfs_table(n_max, occ, nbr, cls, n_cls, prefix):
    """As :func:`dfs_offsets` but with an explicit neighbour table (torus)."""
    counts = np.zeros((n_max + 1, n_cls), dtype=np.int64)
    nsteps = nbr.shape[1]
    pos = np.empty(n_max + 1, dtype=np.int64)
    nxt = np.zeros(n_max + 1, dtype=np.int64)
    base = prefix.shape[0] - 1
    for i in range(prefix.shape[0]):
        pos[i] = prefix[i]
        occ[prefix[i]] = 1
    counts[base, cls[pos[base]]] += 1
    depth = base
    nxt[depth] = 0
    while True:
        if depth == n_max or nxt[depth] == nsteps:
            if depth == base:
                break
            occ[pos[depth]] = 0
            depth -= 1
            continue
        k = nxt[depth]
        nxt[depth] = k + 1
        s = nbr[pos[depth], k]
        if occ[s]:
            continue
        depth += 1
        pos[depth] = s
        occ[s] = 1
        nxt[depth] = 0
        counts[depth, cls[s]] += 1
    for i in range(prefix.shape[0]):
        occ[prefix[i]] = 0
    return counts


@numba.njit(nogil=True, cache=True)
def sparse_convolve_int(ac, av, bc, bv, lo, shape):
    """Integer convolution of two sparse fields into a dense box.

    ``ac``/``bc`` are (n, d) coordinates, ``av``/``bv`` int64 values; the
    output box starts at ``lo`` with the given shape.
    """
    d = ac.shape[1]
    size = 1
    for j in range(d):
        size *= shape[j]
    out = np.zeros(size, dtype=np.int64)
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for j in range(d - 1, -1, -1):
        strides[j] = s
        s *= shape[j]
    for i in range(ac.shape[0]):
        va = av[i]
        for k in range(bc.shape[0]):
            idx = 0
            for j in range(d):
                idx += (ac[i, j] + bc[k, j] - lo[j]) * strides[j]
            out[idx] += va * bv[k]
    return out


@numba.njit(nogil=True, cache=True)
def sparse_convolve_float(ac, av, bc, bv, lo, shape):
    """Float convolution of two sparse fields, keeping only sites inside the box ``lo + shape``."""
    d = ac.shape[1]
    size = 1
    for j in range(d):
        size *= shape[j]
    out = np.zeros(size, dtype=np.float64)
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for j in range(d - 1, -1, -1):
        strides[j] = s
        s *= shape[j]
    for i in range(ac.shape[0]):
        va = av[i]
        for k in range(bc.shape[0]):
            idx = 0
            inside = True
            for j in range(d):
                c = ac[i, j] + bc[k, j] - lo[j]
                if c < 0 or c >= shape[j]:
                    inside = False
                    break
                idx += c * strides[j]
            if inside:
                out[idx] += va * bv[k]
    return out


@numba.njit(nogil=True, cache=True)
def gather_convolve(out_lo, out_shape, ac, av, b, b_lo):
    """``out(x) = sum_i av[i] b(x - ac[i])`` for every x in the output box; ``b`` is dense from ``b_lo``."""
    d = ac.shape[1]
    size = 1
    for j in range(d):
        size *= out_shape[j]
    bshape = b.shape
    flat_b = b.ravel()
    bstr = np.empty(d, dtype=np.int64)
    s = 1
    for j in range(d - 1, -1, -1):
        bstr[j] = s
        s *= bshape[j]
    out = np.zeros(size, dtype=np.float64)
    x = np.empty(d, dtype=np.int64)
    for o in range(size):
        rem = o
        for j in range(d - 1, -1, -1):
            x[j] = out_lo[j] + rem % out_shape[j]
            rem //= out_shape[j]
        acc = 0.0
        for i in range(ac.shape[0]):
            idx = 0
            inside = True
            for j in range(d):
                c = x[j] - ac[i, j] - b_lo[j]
                if c < 0 or c >= bshape[j]:
                    inside = False
                    break
                idx += c * bstr[j]
            if inside:
                acc += av[i] * flat_b[idx]
        out[o] = acc
    return out
