"""Uniform-approximation machinery for oscillating densities.

Periodic densities are decomposed as sums b^i(x) phi^i(xi) with a smooth
partition of unity (the b^i) subordinate to a cover of the period cell and
frozen-center direction parts phi^i = psi(x^i, .).  The decomposition
quality is certified by a dense scan.  The coupling between the fractional
order and the oscillation scale is expressed through the radius of uniform
continuity of the weights and checked by the mollification bound for
I^alpha (b phi) - b phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import specfun
from .bvops import Density, homogeneous_density
from .fracops import FracOperatorConfig, riesz_potential_field
from .grid import Grid, ScalarField


def radius_uniform_continuity(
    b,
    eta: float,
    domain_size,
    n: int = 1,
    periodic: bool = True,
    init_samples: int = 256,
    max_samples: int = 4096,
) -> float:
    """Largest delta in (0, 1] with |b(x) - b(y)| <= eta whenever
    |x - y| <= delta, estimated on lattice samples.

    ``b`` maps an (P, n) point array to (P,) or (P, K) values (the K axis
    models a sup over directions).  Under-sampling overestimates the
    radius, so sampling refines until the spacing is below an eighth of
    the estimate (or the sample budget is reached).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    size = np.broadcast_to(np.asarray(domain_size, dtype=float), (n,))
    m = init_samples if n == 1 else min(init_samples, 96)
    cap = max_samples if n == 1 else min(max_samples, 384)
    prev = None
    while True:
        est = _radius_on_lattice(b, eta, size, n, m, periodic)
        spacing = float(np.max(size)) / m
        stable = prev is not None and abs(est - prev) <= 2.0 * spacing
        if spacing <= est / 8.0 + 1e-15 or est <= 0 or m >= cap or stable:
            return min(est, 1.0)
        prev = est
        m = min(cap, max(2 * m, int(8.0 * np.max(size) / max(est, 1e-12))))


def _radius_on_lattice(b, eta, size, n, m, periodic):
    axes = [np.arange(m) * (size[d] / m) for d in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in mesh], axis=-1)
    vals = np.asarray(b(pts), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    # A globally small oscillation makes the constraint vacuous.
    if float(np.max(vals.max(axis=0) - vals.min(axis=0))) <= eta:
        return 1.0
    grid_vals = vals.reshape(*(m,) * n, vals.shape[-1])
    spacing = size / m
    max_off = [min(m - 1, int(math.ceil(1.0 / spacing[d]))) for d in range(n)]
    if not periodic:
        max_off = [min(o, m // 2) for o in max_off]
    # Offsets sorted by distance; rolls evaluated lazily so the scan stops
    # at the first violating distance.
    offsets = []
    if n == 1:
        for o in range(1, max_off[0] + 1):
            d = o * spacing[0]
            if d <= 1.0 + spacing[0]:
                offsets.append((d, (o,)))
    else:
        for o0 in range(0, max_off[0] + 1):
            for o1 in range(-max_off[1], max_off[1] + 1):
                if o0 == 0 and o1 <= 0:
                    continue
                d = math.hypot(o0 * spacing[0], o1 * spacing[1])
                if d <= 1.0 + float(np.max(spacing)):
                    offsets.append((d, (o0, o1)))
    offsets.sort(key=lambda e: e[0])
    for d, off in offsets:
        if n == 1:
            shifted = np.roll(grid_vals, -off[0], axis=0)
            if periodic:
                osc = float(np.max(np.abs(shifted - grid_vals)))
            else:
                osc = float(np.max(np.abs(shifted[: -off[0]] - grid_vals[: -off[0]])))
        else:
            shifted = np.roll(grid_vals, (-off[0], -off[1]), axis=(0, 1))
            osc = float(np.max(np.abs(shifted - grid_vals)))
        if osc > eta:
            return max(min(d - float(np.min(spacing)) / 2.0, 1.0), 0.0)
    return 1.0


def _bump(t):
    """C-infinity bump on (-1, 1), 1 at the center."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class ConditionADecomposition:
    delta: float
    centers: np.ndarray  # (N, n) frozen points on the period cell
    radius: float  # support radius of the partition bumps
    period: float
    direction_parts: tuple  # phi^i Density objects (x-independent)
    n_terms: int
    scan_error: float

    def weight_values(self, points):
        """Partition-of-unity weights, shape (N, P): normalized smooth
        bumps on the torus, subordinate to the cover balls."""
        points = np.asarray(points, dtype=float)
        if self.n_terms == 1:
            return np.ones((1, points.shape[0]))
        diff = points[None, :, :] - self.centers[:, None, :]
        diff = diff - self.period * np.round(diff / self.period)
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        raw = _bump(dist / self.radius)
        total = raw.sum(axis=0)
        if np.any(total <= 0):
            raise RuntimeError("partition bumps fail to cover the period cell")
        return raw / total

    @property
    def weight_fns(self):
        return tuple(
            (lambda pts, i=i: self.weight_values(pts)[i]) for i in range(self.n_terms)
        )

    def evaluate(self, points, unit_dir):
        """sum_i b^i(x) phi^i(nu) on an array of points."""
        points = np.asarray(points, dtype=float)
        weights = self.weight_values(points)
        phis = np.array(
            [phi.eval_dir(points[:1], unit_dir)[0] for phi in self.direction_parts]
        )
        return phis @ weights


def decompose_condition_A(
    psi: Density,
    delta: float,
    n_dirs: int = 64,
    scan_points: int = 128,
) -> ConditionADecomposition:
    """Partition-of-unity decomposition of a periodic density.

    Covers the period cell with balls whose radius is the uniform-
    continuity radius of x -> psi(x, .) at level delta/2 (sup over sampled
    directions), freezes the direction part at the ball centers, and
    certifies the sup error <= delta by a dense scan (raising on failure
    with the worst point reported).
    """
    if psi.periodic_cell is None:
        raise ValueError("the decomposition is built for periodic densities")
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = 2
    period = float(np.max(np.atleast_1d(psi.periodic_cell)))
    theta = np.linspace(0.0, 2.0 * math.pi, n_dirs, endpoint=False)
    dirs = np.stack([np.sin(theta), np.cos(theta)], axis=-1)

    def profile(points):
        return np.stack([psi.eval_dir(points, d) for d in dirs], axis=-1)

    osc = _sup_oscillation(profile, period, n)
    if osc <= delta / 2.0:
        phi = _frozen_direction_part(psi, np.zeros(n), dirs)
        dec = ConditionADecomposition(
            delta, np.zeros((1, n)), 1.0, period, (phi,), 1, 0.0
        )
        return _certify(dec, psi, dirs, delta, period, scan_points)

    r_delta = radius_uniform_continuity(
        profile, delta / 2.0, (period,) * n, n=n, periodic=True, init_samples=64
    )
    r_delta = min(r_delta, period / 2.0)
    # Lattice of centers: nearest-center distance stays below the cover
    # radius so the normalizer is bounded away from zero.
    spacing = r_delta
    m = max(2, int(math.ceil(period / spacing)))
    ax = np.arange(m) * (period / m)
    mesh = np.meshgrid(*([ax] * n), indexing="ij")
    centers = np.stack([a.ravel() for a in mesh], axis=-1)
    parts = tuple(_frozen_direction_part(psi, c, dirs) for c in centers)
    dec = ConditionADecomposition(
        delta, centers, r_delta, period, parts, len(parts), 0.0
    )
    return _certify(dec, psi, dirs, delta, period, scan_points)


def _frozen_direction_part(psi: Density, center, dirs) -> Density:
    center = np.asarray(center, dtype=float)

    def phi(d):
        pts = np.broadcast_to(center, np.asarray(d).shape)
        return psi.direction_fn(pts, np.asarray(d))

    lam, Lam = psi.lam, psi.Lam
    return homogeneous_density(phi, lam, Lam, name=f"frozen@{center}")


def _sup_oscillation(profile, period, n, m=64):
    ax = np.arange(m) * (period / m)
    mesh = np.meshgrid(*([ax] * n), indexing="ij")
    pts = np.stack([a.ravel() for a in mesh], axis=-1)
    vals = profile(pts)
    return float(np.max(vals.max(axis=0) - vals.min(axis=0)))


def _certify(dec, psi, dirs, delta, period, scan_points):
    ax = (np.arange(scan_points) + 0.3) * (period / scan_points)
    mesh = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([a.ravel() for a in mesh], axis=-1)
    weights = dec.weight_values(pts)  # (N, P), shared across directions
    phis = np.stack(
        [
            np.array([phi.eval_dir(pts[:1], d)[0] for phi in dec.direction_parts])
            for d in dirs
        ],
        axis=0,
    )  # (ndirs, N)
    worst = 0.0
    worst_at = None
    for di, d in enumerate(dirs):
        target = psi.eval_dir(pts, d)
        got = phis[di] @ weights
        err = np.abs(target - got)
        k = int(np.argmax(err))
        if err[k] > worst:
            worst = float(err[k])
            worst_at = (tuple(pts[k]), tuple(d))
    if worst > delta:
        raise RuntimeError(
            f"decomposition misses the target {delta:g}: error {worst:g} at "
            f"x={worst_at[0]}, nu={worst_at[1]}"
        )
    return ConditionADecomposition(
        dec.delta,
        dec.centers,
        dec.radius,
        dec.period,
        dec.direction_parts,
        dec.n_terms,
        worst,
    )


# ---------------------------------------------------------------------------
# Compatibility schedules


@dataclass(frozen=True)
class CompatibilitySchedule:
    eps_k: tuple
    s_k: tuple
    diagnostic: tuple  # (1 - s_k) log eps_k
    flagged: tuple  # indices where |diagnostic| grew
    converges: bool


def build_compatibility_schedule(eps_k, policy="adaptive") -> CompatibilitySchedule:
    """Fractional orders paired to an oscillation schedule.

    policy "adaptive" (default): s_k = 1 - 1/(k (1 + |log eps_k|)), which
    sends the diagnostic (1 - s_k) log eps_k to zero for any sub-
    exponential eps_k.  policy "naive": s_k = 1 - 1/k (a negative control
    for exponentially shrinking eps_k).  An explicit sequence of s-values
    is also accepted.
    """
    eps = [float(e) for e in eps_k]
    if any(e <= 0 for e in eps):
        raise ValueError("eps_k must be positive")
    ks = np.arange(1, len(eps) + 1, dtype=float)
    if policy == "adaptive":
        s = 1.0 - 1.0 / (ks * (1.0 + np.abs(np.log(eps))))
    elif policy == "naive":
        s = 1.0 - 1.0 / ks
    else:
        s = np.asarray([float(v) for v in policy])
        if s.shape != ks.shape:
            raise ValueError("explicit s_k schedule has the wrong length")
    s = np.clip(s, 1e-9, 1.0 - 1e-12)
    diag = (1.0 - s) * np.log(eps)
    mags = np.abs(diag)
    peak = int(np.argmax(mags))
    flagged = tuple(
        int(i) for i in range(peak + 1, len(mags)) if mags[i] > mags[i - 1] + 1e-15
    )
    peak_val = float(mags[peak])
    converges = not flagged and (
        mags[-1] <= 0.5 * max(peak_val, 1e-300) or mags[-1] < 1e-3
    )
    return CompatibilitySchedule(
        tuple(eps),
        tuple(float(v) for v in s),
        tuple(float(v) for v in diag),
        flagged,
        bool(converges),
    )


# ---------------------------------------------------------------------------
# Mollification bound


@dataclass(frozen=True)
class LemmaCheckConfig:
    n: int = 1
    resolution: int = 4096
    box_factor: float = 3.0


def smooth_bump_field(grid: Grid, radius: float, center=None) -> ScalarField:
    center = np.zeros(grid.n) if center is None else np.asarray(center, dtype=float)
    diff = grid.cell_centers() - center
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    return ScalarField(grid, _bump(dist / radius))


def mollification_bound_check(
    b_fn,
    R: float,
    alpha: float,
    eta: float,
    lemma_cfg: LemmaCheckConfig = LemmaCheckConfig(),
    op_cfg: FracOperatorConfig = None,
    phi_radius: float = None,
    b_period: float = 1.0,
) -> dict:
    """Sup-norm distance between I^alpha(b phi) and b phi against its
    four-term bound.

    lhs: sampled sup over the box of |I^alpha(b phi) - b phi| with phi a
    smooth bump supported in B_R.  rhs terms use the measured radius of
    uniform continuity r_b(eta) and the sampled sup norms:

      T1 = max((3R)^alpha - r^alpha, alpha R^alpha / n)
           * omega_n/(alpha gamma_alpha) ||b|| ||phi||
      T2 = |1 - omega_n r^alpha / (alpha gamma_alpha)| ||b|| ||phi||
      T3 = omega_n r^alpha eta / (alpha gamma_alpha) ||phi||
      T4 = omega_n r^(alpha+1) / ((alpha+1) gamma_alpha) ||b|| ||grad phi||

    holds with no slack: the analytic bound must dominate discretization.
    """
    if R <= 1.0:
        raise ValueError("the bound is stated for R > 1")
    n = lemma_cfg.n
    if op_cfg is None:
        op_cfg = FracOperatorConfig()
    side = 2.0 * lemma_cfg.box_factor * R
    from .grid import centered_grid  # local import avoids a cycle at module load

    grid = centered_grid(n, lemma_cfg.resolution, side)
    phi_radius = R if phi_radius is None else phi_radius
    phi = smooth_bump_field(grid, phi_radius)
    pts = grid.cell_centers_flat()
    b_vals = np.asarray(b_fn(pts), dtype=float).reshape(grid.shape)
    product = ScalarField(grid, b_vals * phi.values)
    pot = riesz_potential_field(product, alpha, op_cfg)
    lhs = float(np.max(np.abs(pot.values - product.values)))

    r_b = radius_uniform_continuity(
        b_fn, eta, (b_period,) * n, n=n, periodic=True
    )
    om = specfun.omega_n(n)
    ga = specfun.gamma_alpha(n, alpha)
    sup_b = float(np.max(np.abs(b_vals)))
    sup_phi = float(np.max(np.abs(phi.values)))
    grad = np.gradient(phi.values, grid.h)
    if isinstance(grad, np.ndarray):
        grad = [grad]
    sup_grad = float(np.max(np.sqrt(sum(g**2 for g in grad))))
    t1 = (
        max((3.0 * R) ** alpha - r_b**alpha, alpha * R**alpha / n)
        * om
        / (alpha * ga)
        * sup_b
        * sup_phi
    )
    t2 = abs(1.0 - om * r_b**alpha / (alpha * ga)) * sup_b * sup_phi
    t3 = om * r_b**alpha * eta / (alpha * ga) * sup_phi
    t4 = om * r_b ** (alpha + 1.0) / ((alpha + 1.0) * ga) * sup_b * sup_grad
    rhs = t1 + t2 + t3 + t4
    return {
        "lhs": lhs,
        "rhs": rhs,
        "terms": (t1, t2, t3, t4),
        "r_b": r_b,
        "holds": lhs <= rhs,
    }
