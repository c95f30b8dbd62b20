# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: mixture E-step, graphical-lasso block coordinate
descent and weighted Brandes betweenness. Semantics match ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


def estep(const double[:, ::1] X, const double[:, ::1] means, const double[:, :, ::1] linv,
          const double[::1] const_k, double[:, ::1] tau):
    """Fill ``tau`` with normalized responsibilities; return the log-likelihood."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], K = means.shape[0]
    cdef Py_ssize_t i, j, l, k
    cdef double q, z, top, s, lse, total = 0.0, comp = 0.0, y, t
    cdef double[::1] diff = np.empty(d)
    with nogil:
        for i in range(n):
            top = -INFINITY
            for k in range(K):
                for j in range(d):
                    diff[j] = X[i, j] - means[k, j]
                q = 0.0
                for j in range(d):
                    z = 0.0
                    for l in range(j + 1):
                        z = z + linv[k, j, l] * diff[l]
                    q = q + z * z
                tau[i, k] = const_k[k] - 0.5 * q
                if tau[i, k] > top:
                    top = tau[i, k]
            s = 0.0
            for k in range(K):
                s = s + exp(tau[i, k] - top)
            lse = top + log(s)
            s = 0.0
            for k in range(K):
                tau[i, k] = exp(tau[i, k] - lse)
                s = s + tau[i, k]
            for k in range(K):
                tau[i, k] = tau[i, k] / s
            # Kahan summation of the per-row log densities
            y = lse - comp
            t = total + y
            comp = (t - total) - y
            total = t
    return total


cdef inline double _soft(double x, double lam) nogil:
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


def glasso_cd(const double[:, ::1] S, double lam, double[:, ::1] W, double[:, ::1] B,
              double tol, int max_iter, double inner_tol, int inner_max):
    """Block coordinate descent on ``W`` (covariance estimate) and ``B``
    (column regression coefficients), both updated in place.

    Returns ``(n_iter, converged)``.
    """
    cdef Py_ssize_t d = S.shape[0]
    cdef Py_ssize_t j, k, l
    cdef int it, inner, n_iter = 0
    cdef double max_change, dlt, r, new, old
    cdef bint converged = False
    with nogil:
        for it in range(max_iter):
            n_iter = it + 1
            max_change = 0.0
            for j in range(d):
                for inner in range(inner_max):
                    dlt = 0.0
                    for k in range(d):
                        if k == j:
                            continue
                        r = S[k, j]
                        for l in range(d):
                            if l != j and l != k:
                                r = r - W[k, l] * B[l, j]
                        new = _soft(r, lam) / W[k, k]
                        old = B[k, j]
                        if new != old:
                            B[k, j] = new
                            if fabs(new - old) > dlt:
                                dlt = fabs(new - old)
                    if dlt < inner_tol:
                        break
                for k in range(d):
                    if k == j:
                        continue
                    new = 0.0
                    for l in range(d):
                        if l != j:
                            new = new + W[k, l] * B[l, j]
                    if fabs(new - W[k, j]) > max_change:
                        max_change = fabs(new - W[k, j])
                    W[k, j] = new
                    W[j, k] = new
            if max_change < tol:
                converged = True
                break
    return n_iter, bool(converged)


def brandes(const double[:, ::1] weights, double rel_tol):
    """Undirected betweenness with edge length ``1/|w|`` (zero weights absent)."""
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t s, v, w, i, top, u
    cdef double best, alt, tol_v, coeff
    cdef double[::1] dist = np.empty(n)
    cdef double[::1] sigma = np.empty(n)
    cdef double[::1] delta = np.empty(n)
    cdef double[::1] bc = np.zeros(n)
    cdef int[::1] done = np.empty(n, dtype=np.intc)
    cdef Py_ssize_t[::1] order = np.empty(n, dtype=np.intp)
    cdef int[:, ::1] pred = np.empty((n, n), dtype=np.intc)
    with nogil:
        for s in range(n):
            for i in range(n):
                dist[i] = INFINITY
                sigma[i] = 0.0
                delta[i] = 0.0
                done[i] = 0
                for u in range(n):
                    pred[i, u] = 0
            dist[s] = 0.0
            sigma[s] = 1.0
            top = 0
            while True:
                v = -1
                best = INFINITY
                for i in range(n):
                    if not done[i] and dist[i] < best:
                        best = dist[i]
                        v = i
                if v < 0:
                    break
                done[v] = 1
                order[top] = v
                top += 1
                for w in range(n):
                    if w == v or done[w] or weights[v, w] == 0.0:
                        continue
                    alt = dist[v] + 1.0 / fabs(weights[v, w])
                    tol_v = rel_tol * alt
                    if alt < dist[w] - tol_v:
                        dist[w] = alt
                        sigma[w] = sigma[v]
                        for u in range(n):
                            pred[w, u] = 0
                        pred[w, v] = 1
                    elif fabs(alt - dist[w]) <= tol_v:
                        sigma[w] = sigma[w] + sigma[v]
                        pred[w, v] = 1
            while top > 0:
                top -= 1
                w = order[top]
                for v in range(n):
                    if pred[w, v]:
                        coeff = sigma[v] / sigma[w] * (1.0 + delta[w])
                        delta[v] = delta[v] + coeff
                if w != s:
                    bc[w] = bc[w] + delta[w]
    out = np.asarray(bc) / 2.0
    return out
