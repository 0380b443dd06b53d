"""Pure-numpy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
FRACVAR_PURE_PYTHON is set).  Must stay result-identical to
``fracvar._kernels._core`` up to floating-point roundoff; the test suite
compares both lanes directly.
"""

import numpy as np

BACKEND = "numpy"

# Labelings per vectorized chunk in the exhaustive enumerator; bounds memory
# at roughly chunk * nbits bytes.
_ENUM_CHUNK = 1 << 18


def atom_potential_sum(points, positions, weights, power, scale, self_tol=0.0):
    """Sum of power-law atom contributions at arbitrary evaluation points.

    out[p, c] = scale * sum_a weights[a, c] / |points[p] - positions[a]|**power

    points: (P, n), positions: (A, n), weights: (A, m).  Returns (P, m).
    Atoms closer to an evaluation point than ``self_tol`` are skipped
    (leave-one-out evaluation at the atoms themselves); with the default 0
    no atom is ever skipped and atoms must not coincide with points.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    npts = points.shape[0]
    m = weights.shape[1]
    out = np.zeros((npts, m))
    tol2 = self_tol * self_tol
    # Loop over atoms (usually far fewer atoms than points).
    for a in range(positions.shape[0]):
        d2 = np.zeros(npts)
        for d in range(points.shape[1]):
            diff = points[:, d] - positions[a, d]
            d2 += diff * diff
        if tol2 > 0.0:
            skip = d2 <= tol2
            d2[skip] = 1.0
            inv = d2 ** (-0.5 * power)
            inv[skip] = 0.0
        else:
            inv = d2 ** (-0.5 * power)
        for c in range(m):
            out[:, c] += weights[a, c] * inv
    out *= scale
    return out


def min_atom_distance(points, positions):
    """Euclidean distance from each point to its nearest atom, shape (P,)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    best = np.full(points.shape[0], np.inf)
    for a in range(positions.shape[0]):
        d2 = np.zeros(points.shape[0])
        for d in range(points.shape[1]):
            diff = points[:, d] - positions[a, d]
            d2 += diff * diff
        np.minimum(best, d2, out=best)
    return np.sqrt(best)


def direct_vector_sum(values, second, centers, q, cell_weight):
    """Literal pairwise singular-kernel sum, O(N^2).

    out[i, d] = cell_weight * sum_{j != i}
        (values[j]-values[i]) * (second[j]-second[i] if second else 1)
        * (centers[j]-centers[i])_d / |centers[j]-centers[i]|**q

    Reference path for the offset-table evaluation; use on small grids only.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    npts, ndim = centers.shape
    out = np.zeros((npts, ndim))
    sec = None if second is None else np.asarray(second, dtype=np.float64).ravel()
    for i in range(npts):
        diff = centers - centers[i]
        dist2 = np.sum(diff * diff, axis=1)
        dist2[i] = 1.0
        kern = dist2 ** (-0.5 * q)
        kern[i] = 0.0
        fac = (values - values[i]) * kern
        if sec is not None:
            fac *= sec - sec[i]
        out[i] = diff.T @ fac
    out *= cell_weight
    return out


def exhaustive_binary_min(nbits, edges_a, edges_b, edge_w, unary0, unary1):
    """Exact minimum of a binary pairwise energy over all 2**nbits labelings.

    Energy(x) = sum_e edge_w[e] * (x[ea] != x[eb])
              + sum_b (unary1[b] if x[b] else unary0[b])

    Returns (min_energy, argmin_bitmask).  Vectorized over chunks of
    labelings; the compiled lane walks a Gray code instead.
    """
    edges_a = np.asarray(edges_a, dtype=np.int64)
    edges_b = np.asarray(edges_b, dtype=np.int64)
    edge_w = np.asarray(edge_w, dtype=np.float64)
    unary0 = np.asarray(unary0, dtype=np.float64)
    unary1 = np.asarray(unary1, dtype=np.float64)
    total = 1 << nbits
    base = float(unary0.sum())
    udiff = unary1 - unary0
    best_e = np.inf
    best_x = 0
    for start in range(0, total, _ENUM_CHUNK):
        idx = np.arange(start, min(start + _ENUM_CHUNK, total), dtype=np.uint64)
        bits = ((idx[:, None] >> np.arange(nbits, dtype=np.uint64)[None, :]) & 1).astype(
            np.float64
        )
        energy = bits @ udiff
        energy += np.abs(bits[:, edges_a] - bits[:, edges_b]) @ edge_w
        k = int(np.argmin(energy))
        if energy[k] < best_e:
            best_e = float(energy[k])
            best_x = int(idx[k])
    return best_e + base, best_x
