"""Pure numpy/Python versions of the compiled TSP kernels.

Results are bit-identical to ``_ckernels``: every candidate cost is formed
with the same single addition and ties go to the lowest index.
"""

from __future__ import annotations

import numpy as np


def held_karp(dist: np.ndarray):
    n = dist.shape[0]
    m = n - 1
    full = (1 << m) - 1
    dp = np.full((full + 1, m), np.inf)
    parent = np.full((full + 1, m), -1, dtype=np.int8)
    bits = np.arange(m)
    for j in range(m):
        dp[1 << j, j] = dist[0, j + 1]
    masks = np.arange(full + 1)
    popcount = np.zeros(full + 1, dtype=np.int64)
    for j in range(m):
        popcount += (masks >> j) & 1
    step = dist[1:, 1:]
    # a layer only reads the layer below it, so vectorise per (size, last city)
    for size in range(2, m + 1):
        layer = masks[popcount == size]
        for j in range(m):
            sel = layer[(layer >> j) & 1 == 1]
            if sel.size == 0:
                continue
            prev = sel ^ (1 << j)
            cand = dp[prev] + step[:, j][None, :]
            inside = ((prev[:, None] >> bits[None, :]) & 1).astype(bool)
            cand[~inside] = np.inf
            k = np.argmin(cand, axis=1)
            dp[sel, j] = cand[np.arange(sel.size), k]
            parent[sel, j] = k
    closing = dp[full] + dist[1:, 0]
    last = int(np.argmin(closing))
    best = float(closing[last])
    order = np.empty(n, dtype=np.int64)
    order[0] = 0
    mask, j, pos = full, last, n - 1
    while j >= 0:
        order[pos] = j + 1
        prev_j = int(parent[mask, j])
        mask ^= 1 << j
        j = prev_j
        pos -= 1
    return best, order


def matching(dist: np.ndarray):
    k = dist.shape[0]
    full = (1 << k) - 1
    f = [np.inf] * (full + 1)
    choice = [-1] * (full + 1)
    f[0] = 0.0
    for mask in range(1, full + 1):
        i = (mask & -mask).bit_length() - 1
        best, best_j = np.inf, -1
        for j in range(i + 1, k):
            if (mask >> j) & 1:
                c = dist[i, j] + f[mask ^ (1 << i) ^ (1 << j)]
                if c < best:
                    best, best_j = c, j
        f[mask] = best
        choice[mask] = best_j
    pairs = []
    mask = full
    while mask:
        i = (mask & -mask).bit_length() - 1
        j = choice[mask]
        pairs.append((i, j))
        mask ^= (1 << i) | (1 << j)
    return float(f[full]), pairs


def closed_tour_length(points: np.ndarray, order: np.ndarray) -> float:
    total = 0.0
    n = len(order)
    for t in range(n):
        a, b = order[t], order[(t + 1) % n]
        dx = points[a, 0] - points[b, 0]
        dy = points[a, 1] - points[b, 1]
        total += float(np.sqrt(dx * dx + dy * dy))
    return total


def relu_bn_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float, out: np.ndarray):
    r = np.maximum(x, 0).astype(np.float64)
    mean = r.mean(axis=0)
    centered = r - mean
    var = (centered * centered).mean(axis=0)
    scale = gamma / np.sqrt(var + eps)
    out[...] = r * scale + (beta - mean * scale)
    return mean, var


def relu_bn_backward(x, g, gamma, mean, var, eps, gx):
    rows = x.shape[0]
    inv = 1.0 / np.sqrt(var + eps)
    positive = x > 0
    xhat = (np.maximum(x, 0) - mean) * inv
    g64 = g.astype(np.float64)
    gb = g64.sum(axis=0)
    gg = (g64 * xhat).sum(axis=0)
    gx[...] = np.where(positive, gamma * inv * (g64 - gb / rows - xhat * (gg / rows)), 0)
    return gg, gb
