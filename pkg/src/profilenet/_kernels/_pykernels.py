"""Pure-Python/numpy versions of the compiled kernels (same signatures)."""
from __future__ import annotations

import math

import numpy as np


def estep(X, means, linv, const_k, tau):
    K = means.shape[0]
    for k in range(K):
        z = (X - means[k]) @ linv[k].T
        tau[:, k] = const_k[k] - 0.5 * np.einsum("ij,ij->i", z, z)
    top = tau.max(axis=1)
    lse = top + np.log(np.exp(tau - top[:, None]).sum(axis=1))
    np.exp(tau - lse[:, None], out=tau)
    tau /= tau.sum(axis=1, keepdims=True)
    return math.fsum(lse)


def _soft(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


def glasso_cd(S, lam, W, B, tol, max_iter, inner_tol, inner_max):
    d = S.shape[0]
    s = S.tolist()
    w = W.tolist()
    b = B.tolist()
    n_iter, converged = 0, False
    for it in range(max_iter):
        n_iter = it + 1
        max_change = 0.0
        for j in range(d):
            others = [k for k in range(d) if k != j]
            for _ in range(inner_max):
                dlt = 0.0
                for k in others:
                    wk = w[k]
                    r = s[k][j]
                    for l in others:
                        if l != k:
                            r -= wk[l] * b[l][j]
                    new = _soft(r, lam) / wk[k]
                    old = b[k][j]
                    if new != old:
                        b[k][j] = new
                        if abs(new - old) > dlt:
                            dlt = abs(new - old)
                if dlt < inner_tol:
                    break
            for k in others:
                wk = w[k]
                new = 0.0
                for l in others:
                    new += wk[l] * b[l][j]
                if abs(new - wk[j]) > max_change:
                    max_change = abs(new - wk[j])
                wk[j] = new
                w[j][k] = new
        if max_change < tol:
            converged = True
            break
    W[...] = w
    B[...] = b
    return n_iter, converged


def brandes(weights, rel_tol):
    n = weights.shape[0]
    wts = weights.tolist()
    bc = [0.0] * n
    for s in range(n):
        dist = [math.inf] * n
        sigma = [0.0] * n
        delta = [0.0] * n
        done = [False] * n
        preds = [[] for _ in range(n)]
        dist[s], sigma[s] = 0.0, 1.0
        order = []
        while True:
            v, best = -1, math.inf
            for i in range(n):
                if not done[i] and dist[i] < best:
                    best, v = dist[i], i
            if v < 0:
                break
            done[v] = True
            order.append(v)
            for w in range(n):
                if w == v or done[w] or wts[v][w] == 0.0:
                    continue
                alt = dist[v] + 1.0 / abs(wts[v][w])
                tol_v = rel_tol * alt
                if alt < dist[w] - tol_v:
                    dist[w], sigma[w], preds[w] = alt, sigma[v], [v]
                elif abs(alt - dist[w]) <= tol_v:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        for w in reversed(order):
            # ascending predecessor order keeps float accumulation identical to the compiled loop
            for v in sorted(preds[w]):
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return np.array(bc) / 2.0
