# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: atom potential sums, literal pairwise singular
quadrature, and the Gray-code exhaustive labeling enumerator.

Signatures mirror fracvar._kernels._fallback exactly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt

BACKEND = "cython"


def atom_potential_sum(points, positions, weights, double power, double scale,
                       double self_tol=0.0):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t npts = pts.shape[0]
    cdef Py_ssize_t ndim = pts.shape[1]
    cdef Py_ssize_t natoms = pos.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    out_arr = np.zeros((npts, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, a, d, c
    cdef double d2, diff, inv
    cdef double half_power = 0.5 * power
    cdef double tol2 = self_tol * self_tol
    for p in range(npts):
        for a in range(natoms):
            d2 = 0.0
            for d in range(ndim):
                diff = pts[p, d] - pos[a, d]
                d2 += diff * diff
            if tol2 > 0.0 and d2 <= tol2:
                continue
            inv = pow(d2, -half_power)
            for c in range(m):
                out[p, c] += w[a, c] * inv
    for p in range(npts):
        for c in range(m):
            out[p, c] *= scale
    return out_arr


def min_atom_distance(points, positions):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t npts = pts.shape[0]
    cdef Py_ssize_t ndim = pts.shape[1]
    cdef Py_ssize_t natoms = pos.shape[0]
    out_arr = np.empty(npts, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, a, d
    cdef double best, d2, diff
    for p in range(npts):
        best = -1.0
        for a in range(natoms):
            d2 = 0.0
            for d in range(ndim):
                diff = pts[p, d] - pos[a, d]
                d2 += diff * diff
            if best < 0.0 or d2 < best:
                best = d2
        out[p] = sqrt(best) if best >= 0.0 else 0.0
    return out_arr


def direct_vector_sum(values, second, centers, double q, double cell_weight):
    cdef const double[::1] vals = np.ascontiguousarray(
        np.asarray(values, dtype=np.float64).ravel())
    cdef const double[:, ::1] ctr = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t npts = ctr.shape[0]
    cdef Py_ssize_t ndim = ctr.shape[1]
    out_arr = np.zeros((npts, ndim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef bint has_second = second is not None
    cdef const double[::1] sec
    if has_second:
        sec = np.ascontiguousarray(np.asarray(second, dtype=np.float64).ravel())
    else:
        sec = vals
    cdef Py_ssize_t i, j, d
    cdef double dist2, fac, diff
    cdef double half_q = 0.5 * q
    for i in range(npts):
        for j in range(npts):
            if j == i:
                continue
            dist2 = 0.0
            for d in range(ndim):
                diff = ctr[j, d] - ctr[i, d]
                dist2 += diff * diff
            fac = (vals[j] - vals[i]) * pow(dist2, -half_q)
            if has_second:
                fac *= sec[j] - sec[i]
            for d in range(ndim):
                out[i, d] += fac * (ctr[j, d] - ctr[i, d])
    for i in range(npts):
        for d in range(ndim):
            out[i, d] *= cell_weight
    return out_arr


def exhaustive_binary_min(int nbits, edges_a, edges_b, edge_w, unary0, unary1):
    """Gray-code walk over all 2**nbits labelings with incremental updates."""
    cdef const long long[::1] ea = np.ascontiguousarray(edges_a, dtype=np.int64)
    cdef const long long[::1] eb = np.ascontiguousarray(edges_b, dtype=np.int64)
    cdef const double[::1] ew = np.ascontiguousarray(edge_w, dtype=np.float64)
    cdef const double[::1] u0 = np.ascontiguousarray(unary0, dtype=np.float64)
    cdef const double[::1] u1 = np.ascontiguousarray(unary1, dtype=np.float64)
    cdef Py_ssize_t nedges = ea.shape[0]
    cdef Py_ssize_t b, e, k

    # Adjacency in CSR form: for each bit, the incident edges and partners.
    counts = np.zeros(nbits + 1, dtype=np.int64)
    cdef long long[::1] cnt = counts
    for e in range(nedges):
        cnt[ea[e] + 1] += 1
        cnt[eb[e] + 1] += 1
    for b in range(nbits):
        cnt[b + 1] += cnt[b]
    adj_edge_arr = np.zeros(2 * nedges, dtype=np.int64)
    adj_other_arr = np.zeros(2 * nedges, dtype=np.int64)
    fill = counts.copy()
    cdef long long[::1] adj_edge = adj_edge_arr
    cdef long long[::1] adj_other = adj_other_arr
    cdef long long[::1] fl = fill
    for e in range(nedges):
        adj_edge[fl[ea[e]]] = e
        adj_other[fl[ea[e]]] = eb[e]
        fl[ea[e]] += 1
        adj_edge[fl[eb[e]]] = e
        adj_other[fl[eb[e]]] = ea[e]
        fl[eb[e]] += 1

    state_arr = np.zeros(nbits, dtype=np.int8)
    cdef signed char[::1] state = state_arr
    cdef double energy = 0.0
    for b in range(nbits):
        energy += u0[b]

    cdef double best_e = energy
    cdef unsigned long long best_x = 0
    cdef unsigned long long gray = 0
    cdef unsigned long long i, total = (<unsigned long long> 1) << nbits
    cdef unsigned long long v
    cdef int flip
    cdef double delta
    cdef signed char newbit
    for i in range(1, total):
        # Bit flipped between consecutive Gray codes: trailing zeros of i.
        v = i
        flip = 0
        while (v & 1) == 0:
            v >>= 1
            flip += 1
        newbit = 1 - state[flip]
        delta = (u1[flip] - u0[flip]) if newbit else (u0[flip] - u1[flip])
        for k in range(cnt[flip], cnt[flip + 1]):
            if state[adj_other[k]] == newbit:
                delta -= ew[adj_edge[k]]
            else:
                delta += ew[adj_edge[k]]
        state[flip] = newbit
        energy += delta
        gray ^= (<unsigned long long> 1) << flip
        if energy < best_e:
            best_e = energy
            best_x = gray
    return best_e, int(best_x)
