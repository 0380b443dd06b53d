#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the three hot kernels on representative workloads and verifies that
both lanes agree to roundoff.  Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fracvar._kernels import _fallback

try:
    from fracvar._kernels import _core
except ImportError:
    _core = None


def timeit(fn, *args, repeat=3, **kw):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        best = min(best, time.perf_counter() - t0)
    return best, out


def rel_diff(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def bench(name, fn_name, args, kw=None):
    kw = kw or {}
    t_fb, out_fb = timeit(getattr(_fallback, fn_name), *args, **kw)
    row = f"{name:34s} numpy {t_fb * 1e3:9.1f} ms"
    if _core is not None:
        t_c, out_c = timeit(getattr(_core, fn_name), *args, **kw)
        if fn_name == "exhaustive_binary_min":
            agree = abs(out_c[0] - out_fb[0])
        else:
            agree = rel_diff(out_c, out_fb)
        row += f"   cython {t_c * 1e3:9.1f} ms   speedup {t_fb / t_c:6.1f}x   agree {agree:.1e}"
    print(row)


def main():
    rng = np.random.default_rng(7)
    print(f"compiled core available: {_core is not None}")

    # Atom potential sums: ~1450 atoms (a 512^2 circle interface) on a
    # 512^2 evaluation grid, n = 2.
    npts, natoms = 512 * 512 // 4, 1450  # quarter grid keeps numpy lane sane
    points = rng.uniform(-2, 2, (npts, 2))
    positions = rng.uniform(-1, 1, (natoms, 2))
    weights = rng.normal(size=(natoms, 2)) * 0.01
    bench(
        f"atom_potential_sum {npts}x{natoms}",
        "atom_potential_sum",
        (points, positions, weights, 1.01, 1.0),
    )
    bench(
        f"min_atom_distance  {npts}x{natoms}",
        "min_atom_distance",
        (points, positions),
    )

    # Literal pairwise singular quadrature on a 48^2 grid.
    m = 48
    ax = (np.arange(m) + 0.5) / m
    xs, ys = np.meshgrid(ax, ax, indexing="ij")
    centers = np.stack([xs.ravel(), ys.ravel()], axis=-1)
    values = np.exp(-((centers[:, 0] - 0.5) ** 2 + (centers[:, 1] - 0.5) ** 2) / 0.02)
    bench(
        f"direct_vector_sum  {m * m} cells",
        "direct_vector_sum",
        (values, None, centers, 3.6, (1.0 / m) ** 2),
    )

    # Exhaustive enumeration: 2^22 labelings of a stencil graph.
    nb = 22
    ea, eb = np.triu_indices(nb, k=1)
    sel = rng.random(ea.size) < 0.25
    ea, eb = ea[sel].astype(np.int64), eb[sel].astype(np.int64)
    ew = rng.random(ea.size)
    u0, u1 = rng.random(nb), rng.random(nb)
    bench(
        f"exhaustive_binary_min 2^{nb}",
        "exhaustive_binary_min",
        (nb, ea, eb, ew, u0, u1),
    )


if __name__ == "__main__":
    main()
