"""NumPy implementations of the particle kernels.

Same contracts and the same floating-point operation order as ``_kernels.pyx``:
each per-particle sum adds the nonzero partner terms in increasing partner
index, so results match the compiled path bit for bit.
"""
from __future__ import annotations

import numpy as np


def _pair_values(pos, i, j, inv_eps):
    z0 = (pos[i, 0] - pos[j, 0]) * inv_eps
    if pos.shape[1] == 1:
        r2 = z0 * z0
    else:
        z1 = (pos[i, 1] - pos[j, 1]) * inv_eps
        r2 = z0 * z0 + z1 * z1
    t = 1.0 - r2
    return np.where(r2 < 1.0, t * t, 0.0)


def _sequential_rowsum(rows, cols, vals, nrows):
    """Per-row sums of ``vals`` taken in increasing ``cols`` order, left to right."""
    out = np.zeros(nrows)
    if rows.size == 0:
        return out
    order = np.lexsort((cols, rows))
    rows, vals = rows[order], vals[order]
    counts = np.bincount(rows, minlength=nrows)
    first = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rank = np.arange(rows.size) - first[rows]
    table = np.zeros((nrows, int(counts.max())))
    table[rows, rank] = vals
    for col in table.T:
        out = out + col
    return out


def profile_sums_direct(pos, inv_eps, threads=1):
    pos = np.ascontiguousarray(pos, dtype=float)
    N = pos.shape[0]
    idx = np.arange(N)
    out = np.zeros(N)
    for j in range(N):
        out = out + _pair_values(pos, idx, np.full(N, j), inv_eps)
    return out


def profile_sums_cells(pos, inv_eps, cell, threads=1, block=1024):
    pos = np.ascontiguousarray(pos, dtype=float)
    N, d = pos.shape
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    nc = (np.floor((hi - lo) / cell).astype(np.intp) + 1) if d == 2 else np.array(
        [int(np.floor((hi[0] - lo[0]) / cell)) + 1]
    )
    cidx = np.floor((pos - lo) / cell).astype(np.intp)
    nc1 = int(nc[1]) if d == 2 else 1
    key = cidx[:, 0] * nc1 + (cidx[:, 1] if d == 2 else 0)
    order = np.argsort(key, kind="stable")
    start = np.searchsorted(key[order], np.arange(int(nc[0]) * nc1 + 1))
    offsets = [(a, b) for a in (-1, 0, 1) for b in ((-1, 0, 1) if d == 2 else (0,))]
    out = np.zeros(N)
    for s in range(0, N, block):
        ii = np.arange(s, min(N, s + block))
        rows, cols = [], []
        for a, b in offsets:
            ca = cidx[ii, 0] + a
            cb = (cidx[ii, 1] + b) if d == 2 else np.zeros_like(ca)
            ok = (ca >= 0) & (ca < nc[0]) & (cb >= 0) & (cb < nc1)
            c = ca[ok] * nc1 + cb[ok]
            lens = start[c + 1] - start[c]
            owners = np.repeat(ii[ok], lens)
            base = np.repeat(start[c] - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
            cols.append(order[base + np.arange(lens.sum())])
            rows.append(owners)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = _pair_values(pos, rows, cols, inv_eps)
        keep = vals != 0.0
        out[ii] = _sequential_rowsum(rows[keep] - s, cols[keep], vals[keep], ii.size)
    return out


def deposit(pos, half_width, h, n, eps, inv_eps, normalize, raw_scale):
    pos = np.ascontiguousarray(pos, dtype=float)
    N, d = pos.shape
    width = int(np.ceil(2 * eps / h)) + 4
    lo = np.floor((pos - eps + half_width) / h).astype(np.intp) - 1
    st = np.arange(width)
    if d == 1:
        k0 = lo[:, :1] + st[None, :]
        valid = (k0 >= 0) & (k0 < n)
        z0 = ((-half_width + k0 * h) - pos[:, :1]) * inv_eps
        r2 = z0 * z0
        flat = k0
    else:
        k0 = (lo[:, 0, None] + st[None, :])[:, :, None] + np.zeros(width, dtype=np.intp)[None, None, :]
        k1 = (lo[:, 1, None] + st[None, :])[:, None, :] + np.zeros(width, dtype=np.intp)[None, :, None]
        valid = (k0 >= 0) & (k0 < n) & (k1 >= 0) & (k1 < n)
        z0 = ((-half_width + k0 * h) - pos[:, 0, None, None]) * inv_eps
        z1 = ((-half_width + k1 * h) - pos[:, 1, None, None]) * inv_eps
        r2 = z0 * z0 + z1 * z1
        valid, r2 = valid.reshape(N, -1), r2.reshape(N, -1)
        flat = (k0 * n + k1).reshape(N, -1)
    t = 1.0 - r2
    prof = np.where((r2 < 1.0) & valid, t * t, 0.0)
    S = np.zeros(N)
    for col in prof.T:
        S = S + col
    hd = h if d == 1 else h * h
    if normalize:
        with np.errstate(divide="ignore"):
            scale = 1.0 / ((float(N) * hd) * S)
    else:
        scale = np.full(N, raw_scale)
    scale = np.where(S == 0.0, 0.0, scale)
    w = scale[:, None] * prof
    keep = (prof != 0.0) & (S != 0.0)[:, None]
    out = np.zeros(n**d)
    np.add.at(out, flat[keep], w[keep])
    return out.reshape((n,) * d)
