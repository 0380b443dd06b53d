import math

import numpy as np
import pytest

from fracvar import approx, bvops


def test_rb_constant_is_capped():
    const = lambda pts: np.ones(np.asarray(pts).shape[0])
    assert approx.radius_uniform_continuity(const, 0.1, (1.0,), n=1) == 1.0


def test_rb_sawtooth_slope():
    # Slope-L sawtooth: r_b(eta) = eta / L, up to one sample spacing.
    L = 4.0
    saw = lambda pts: L * np.abs(np.mod(np.asarray(pts)[..., 0], 1.0) - 0.5)
    for eta in (0.25, 0.5, 1.0):
        rb = approx.radius_uniform_continuity(saw, eta, (1.0,), n=1)
        assert rb == pytest.approx(eta / L, abs=2.0 / 1024)


def test_rb_vacuous_when_eta_dominates():
    saw = lambda pts: 0.3 * np.abs(np.mod(np.asarray(pts)[..., 0], 1.0) - 0.5)
    assert approx.radius_uniform_continuity(saw, 0.5, (1.0,), n=1) == 1.0


def test_rb_monotone_in_eta():
    b = lambda pts: np.sin(2 * math.pi * np.asarray(pts)[..., 0]) ** 2
    values = [
        approx.radius_uniform_continuity(b, eta, (1.0,), n=1)
        for eta in (0.05, 0.1, 0.2, 0.5, 1.1)
    ]
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(values, values[1:]))


def test_rb_vector_valued_sup_metric():
    # Oscillation measured as a sup over the trailing axis.
    def b(pts):
        x = np.asarray(pts)[..., 0]
        return np.stack([np.zeros_like(x), 2.0 * np.abs(np.mod(x, 1.0) - 0.5)], axis=-1)

    rb = approx.radius_uniform_continuity(b, 0.2, (1.0,), n=1)
    assert rb == pytest.approx(0.1, abs=2.0 / 1024)


def test_decompose_x_independent_single_term():
    iso = bvops.isotropic_density()
    iso_periodic = bvops.Density(
        iso.direction_fn, 1.0, 1.0, periodic_cell=1.0, name="iso"
    )
    dec = approx.decompose_condition_A(iso_periodic, 0.1)
    assert dec.n_terms == 1
    assert dec.scan_error == 0.0
    pts = np.array([[0.2, 0.4], [0.9, 0.9]])
    np.testing.assert_allclose(dec.weight_values(pts), 1.0)


def test_decompose_laminate_certificate():
    lam = bvops.laminate_density(1.0, 2.0, period=1.0, smooth=0.25)
    dec = approx.decompose_condition_A(lam, 0.3)
    assert dec.scan_error <= 0.3
    assert dec.n_terms > 1
    # Partition of unity: weights sum to one everywhere.
    pts = np.random.default_rng(5).uniform(0, 1, (64, 2))
    W = dec.weight_values(pts)
    np.testing.assert_allclose(W.sum(axis=0), 1.0, atol=1e-10)
    assert np.all(W >= 0.0)


def test_decompose_delta_halved_grows():
    lam = bvops.laminate_density(1.0, 2.0, period=1.0, smooth=0.25)
    coarse = approx.decompose_condition_A(lam, 0.4)
    fine = approx.decompose_condition_A(lam, 0.2)
    assert fine.n_terms >= coarse.n_terms
    assert fine.scan_error <= 0.2


def test_decompose_direction_parts_inherit_bounds(rng):
    lam = bvops.laminate_density(1.0, 2.0, period=1.0, smooth=0.25)
    dec = approx.decompose_condition_A(lam, 0.3)
    theta = rng.uniform(0, 2 * math.pi, 16)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    pts = rng.uniform(0, 1, (8, 2))
    for phi in dec.direction_parts[: min(6, dec.n_terms)]:
        for d in dirs:
            vals = phi.eval_dir(pts, d)
            assert np.all(vals >= lam.lam - 1e-10)
            assert np.all(vals <= lam.Lam + 1e-10)


def test_decompose_needs_period():
    iso = bvops.isotropic_density()
    with pytest.raises(ValueError):
        approx.decompose_condition_A(iso, 0.1)


def test_schedule_one_over_k():
    sch = approx.build_compatibility_schedule([1.0 / k for k in range(1, 40)])
    assert sch.flagged == ()
    assert sch.converges
    # Closed form: diagnostic = -log k / (k (1 + log k)).
    k = 20
    expected = -math.log(k) / (k * (1.0 + math.log(k)))
    assert sch.diagnostic[k - 1] == pytest.approx(expected, rel=1e-9)


def test_schedule_negative_control():
    sch = approx.build_compatibility_schedule(
        [2.0**-k for k in range(1, 31)], policy="naive"
    )
    # (1/k) log 2^-k = -log 2 for every k (k = 1 sits at the s-clip).
    for d in sch.diagnostic[1:]:
        assert d == pytest.approx(-math.log(2.0), rel=1e-9)
    assert not sch.converges


def test_schedule_constant_eps():
    sch = approx.build_compatibility_schedule([0.3] * 25, policy="naive")
    assert sch.converges
    assert abs(sch.diagnostic[-1]) < abs(sch.diagnostic[0])


def test_schedule_explicit_and_errors():
    sch = approx.build_compatibility_schedule([0.5, 0.25], policy=[0.5, 0.75])
    assert sch.s_k == (0.5, 0.75)
    with pytest.raises(ValueError):
        approx.build_compatibility_schedule([-1.0])
    with pytest.raises(ValueError):
        approx.build_compatibility_schedule([0.5, 0.25], policy=[0.5])


CONST_B = staticmethod(lambda pts: np.ones(np.asarray(pts).shape[0]))


def test_mollification_bound_constant_b():
    cfg = approx.LemmaCheckConfig(n=1, resolution=8192)
    rep = approx.mollification_bound_check(
        lambda pts: np.ones(np.asarray(pts).shape[0]), R=1.5, alpha=0.3, eta=0.1,
        lemma_cfg=cfg,
    )
    assert rep["r_b"] == 1.0
    assert rep["holds"]
    assert rep["lhs"] > 0.0


def test_mollification_bound_2d():
    cfg = approx.LemmaCheckConfig(n=2, resolution=192)
    rep = approx.mollification_bound_check(
        lambda pts: np.ones(np.asarray(pts).shape[0]), R=1.2, alpha=0.4, eta=0.1,
        lemma_cfg=cfg,
    )
    assert rep["holds"]


def test_mollification_requires_R_above_one():
    cfg = approx.LemmaCheckConfig(n=1, resolution=1024)
    with pytest.raises(ValueError):
        approx.mollification_bound_check(
            lambda pts: np.ones(np.asarray(pts).shape[0]), R=0.8, alpha=0.3, eta=0.1,
            lemma_cfg=cfg,
        )


def test_mollification_schedules():
    # Valid coupling: sup distance decays along k.  Exponential eps with
    # s_k = 1 - 1/k: the distance stalls at a positive floor (resolvable
    # oscillations only; the floor is the hallmark of the broken coupling).
    cfg = approx.LemmaCheckConfig(n=1, resolution=65536)
    valid = []
    invalid = []
    for k in (4, 6, 8, 10):
        eps_v = 1.0 / k
        s_v = 1.0 - 1.0 / (k * (1.0 + abs(math.log(eps_v))))
        b_v = lambda p, e=eps_v: 0.5 * (
            1.0 + np.cos(2.0 * math.pi * np.asarray(p)[..., 0] / e)
        )
        valid.append(
            approx.mollification_bound_check(
                b_v, R=1.25, alpha=1.0 - s_v, eta=0.1, lemma_cfg=cfg, b_period=eps_v
            )
        )
        eps_n = 2.0**-k
        s_n = 1.0 - 1.0 / k
        b_n = lambda p, e=eps_n: 0.5 * (
            1.0 + np.cos(2.0 * math.pi * np.asarray(p)[..., 0] / e)
        )
        invalid.append(
            approx.mollification_bound_check(
                b_n, R=1.25, alpha=1.0 - s_n, eta=0.1, lemma_cfg=cfg, b_period=eps_n
            )
        )
    v = [r["lhs"] for r in valid]
    i = [r["lhs"] for r in invalid]
    assert all(b < a for a, b in zip(v, v[1:]))  # decay
    assert v[-1] < 0.08
    assert min(i) > 0.25  # positive floor
    assert all(r["holds"] for r in valid + invalid)
