"""Compiled per-trial level sweeps.

A sweep walks the reachable simplex slab level by level.  Slab geometry
(flat indices into the dense box, packed site words, per-site levels) is
precomputed once per (d_star, T) and shared across trials; each trial only
differs in its hash keys.

The hash here must stay bit-identical to ``stats.chain``:

    draw(key, idx) = splitmix64_finalizer(key ^ (idx * PHI + SALT))
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit

U64 = np.uint64
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_PHI = U64(0x9E3779B97F4A7C15)
_SALT = U64(0x632BE59BD9B4E019)
_TO_UNIT = 2.0 ** -64

#: dense box cap for slab tables, ~160 MB of float64 per buffer
MAX_DENSE = 20_000_000


@njit(inline="always")
def _mix(x):
    x ^= x >> U64(30)
    x *= _M1
    x ^= x >> U64(27)
    x *= _M2
    x ^= x >> U64(31)
    return x


@njit(inline="always")
def _draw(key, idx):
    return _mix(key ^ (idx * _PHI + _SALT))


@lru_cache(maxsize=4)
def slab_tables(d_star: int, T: int):
    """Geometry of the nonnegative simplex slabs up to l1 level T.

    Returns (dense_size, flats, packed, levels, sizes, dir_strides, pshift)
    where rows are sorted by (level, flat) so the slab at level l is the
    prefix of length sizes[l].  ``dir_strides[k]`` moves a dense flat index
    one step in direction k (0 = stay); ``pshift[k]`` does the same in
    packed-word space for the embedded lattice site.
    """
    if d_star < 1 or d_star > 4:
        raise ValueError("compiled sweeps support 1 <= d_star <= 4")
    if T >= (1 << 15) - 1:
        raise ValueError("horizon too large for 16-bit site packing")
    S = T + 1
    if S ** d_star > MAX_DENSE:
        raise ValueError("horizon too large for the dense sweep buffers")
    grids = np.indices((S,) * d_star).reshape(d_star, -1)
    lvl = grids.sum(axis=0)
    keep = lvl <= T
    coords = grids[:, keep].astype(np.int64)
    lvl = lvl[keep].astype(np.int64)
    strides = np.array([S ** (d_star - 1 - i) for i in range(d_star)], dtype=np.int64)
    flats = (coords * strides[:, None]).sum(axis=0)
    order = np.lexsort((flats, lvl))
    coords, lvl, flats = coords[:, order], lvl[order], flats[order]
    packed = np.zeros(flats.shape, dtype=np.uint64)
    for i in range(d_star):
        packed |= coords[i].astype(np.uint64) << U64(16 * (d_star - 1 - i))
    counts = np.zeros(T + 1, dtype=np.int64)
    np.add.at(counts, lvl, 1)
    sizes = np.cumsum(counts)  # sizes[l] = number of sites with |z|_1 <= l
    # direction 0 stays put; direction k >= 1 steps along spatial axis k-1
    dir_strides = np.concatenate(([0], strides)).astype(np.int64)
    pshift = np.array([1 << (16 * (d_star - k)) for k in range(d_star + 1)],
                      dtype=np.uint64)
    return S ** d_star, flats, packed, lvl, sizes, dir_strides, pshift


@njit(cache=True)
def bern_scaled_totals(T, n_dirs, dense_size, flats, packed, sizes,
                       dir_strides, level_keys, thr, open_all, inv):
    """Normalized path-count totals under an i.i.d. Bernoulli bond field."""
    prev = np.zeros(dense_size, dtype=np.float64)
    nxt = np.zeros(dense_size, dtype=np.float64)
    totals = np.zeros(T + 1, dtype=np.float64)
    prev[0] = 1.0
    totals[0] = 1.0
    for t in range(1, T + 1):
        tot = 0.0
        for r in range(sizes[t - 1]):
            src = flats[r]
            v = prev[src]
            if v != 0.0:
                prev[src] = 0.0
                w = v * inv
                pk = packed[r]
                for k in range(n_dirs):
                    if open_all or _draw(level_keys[t - 1, k], pk) < thr:
                        nxt[src + dir_strides[k]] += w
                        tot += w
        totals[t] = tot
        if tot == 0.0:
            break
        tmp = prev
        prev = nxt
        nxt = tmp
    return totals


@njit(cache=True)
def bern_reach_level(T, n_dirs, dense_size, flats, packed, sizes,
                     dir_strides, level_keys, thr, open_all):
    """Highest level reached by the open cluster of the origin."""
    prev = np.zeros(dense_size, dtype=np.uint8)
    nxt = np.zeros(dense_size, dtype=np.uint8)
    prev[0] = 1
    reached = 0
    for t in range(1, T + 1):
        alive = False
        for r in range(sizes[t - 1]):
            src = flats[r]
            if prev[src] != 0:
                prev[src] = 0
                pk = packed[r]
                for k in range(n_dirs):
                    if open_all or _draw(level_keys[t - 1, k], pk) < thr:
                        nxt[src + dir_strides[k]] = 1
                        alive = True
        if not alive:
            return reached
        reached = t
        tmp = prev
        prev = nxt
        nxt = tmp
    return reached


@njit(inline="always")
def _coupled_open(xkey, ykey, pka, pkb, L, twoL):
    xo = np.float64(_draw(xkey, pka)) * _TO_UNIT * twoL - L
    if not xo >= 1.0 - L:
        return False
    yo = np.float64(_draw(ykey, pkb)) * _TO_UNIT * twoL - L
    return yo <= L - 1.0


@njit(cache=True)
def coupled_scaled_totals(T, n_dirs, dense_size, flats, packed, levels, sizes,
                          dir_strides, pshift, xkeys, ykeys, L, inv):
    """Normalized path-count totals under the embedded overlap-box field."""
    top = U64(16 * (n_dirs - 1))
    twoL = 2.0 * L
    prev = np.zeros(dense_size, dtype=np.float64)
    nxt = np.zeros(dense_size, dtype=np.float64)
    totals = np.zeros(T + 1, dtype=np.float64)
    prev[0] = 1.0
    totals[0] = 1.0
    for t in range(1, T + 1):
        tot = 0.0
        for r in range(sizes[t - 1]):
            src = flats[r]
            v = prev[src]
            if v != 0.0:
                prev[src] = 0.0
                w = v * inv
                a0 = U64(t - 1 - levels[r])
                pka = packed[r] + (a0 << top)
                for k in range(n_dirs):
                    if _coupled_open(xkeys[k], ykeys[k], pka, pka + pshift[k], L, twoL):
                        nxt[src + dir_strides[k]] += w
                        tot += w
        totals[t] = tot
        if tot == 0.0:
            break
        tmp = prev
        prev = nxt
        nxt = tmp
    return totals


@njit(cache=True)
def coupled_reach_level(T, n_dirs, dense_size, flats, packed, levels, sizes,
                        dir_strides, pshift, xkeys, ykeys, L):
    top = U64(16 * (n_dirs - 1))
    twoL = 2.0 * L
    prev = np.zeros(dense_size, dtype=np.uint8)
    nxt = np.zeros(dense_size, dtype=np.uint8)
    prev[0] = 1
    reached = 0
    for t in range(1, T + 1):
        alive = False
        for r in range(sizes[t - 1]):
            src = flats[r]
            if prev[src] != 0:
                prev[src] = 0
                a0 = U64(t - 1 - levels[r])
                pka = packed[r] + (a0 << top)
                for k in range(n_dirs):
                    if _coupled_open(xkeys[k], ykeys[k], pka, pka + pshift[k], L, twoL):
                        nxt[src + dir_strides[k]] = 1
                        alive = True
        if not alive:
            return reached
        reached = t
        tmp = prev
        prev = nxt
        nxt = tmp
    return reached
