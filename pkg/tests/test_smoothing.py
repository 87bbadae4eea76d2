import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from densgroup.clustering import Partition
from densgroup.density import Grid, kernel
from densgroup.exceptions import EmptyWindowError, GridMismatchError
from densgroup.smoothing import (
    Bandwidths,
    additive_partial_residual,
    cv_bandwidths,
    cv_score,
    default_bandwidths,
    estimate_group_curve,
    estimate_refined_additive,
    group_curves,
    group_partial_residual,
    local_linear_weights,
    refine,
    u_smoothing_weights,
)
from densgroup.splines import fit_initial

GRID = Grid(41)
U = GRID.points


def test_bandwidth_validation_and_defaults():
    with pytest.raises(ValueError):
        Bandwidths(0.0)
    with pytest.raises(ValueError):
        Bandwidths(0.2, (0.1,), ())
    with pytest.raises(ValueError):
        Bandwidths(0.2, (0.1,), (1.2,))
    b = default_bandwidths(100, 100, 2)
    assert b.h0 == pytest.approx(10_000 ** -0.2)
    assert b.h_lu == pytest.approx((100 ** -0.2,) * 2)
    assert b.scaled(2, 0.5, 1).h0 == pytest.approx(2 * b.h0)


@given(st.floats(0.05, 0.5), st.floats(0.0, 1.0))
def test_local_linear_weight_identities(h, x):
    w = local_linear_weights(np.array([x]), U, h)[0]
    assert w.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.dot(w, U - x) == pytest.approx(0.0, abs=1e-10)


def test_empty_window():
    with pytest.raises(EmptyWindowError):
        local_linear_weights(U, U, 0.001)
    with pytest.raises(EmptyWindowError):
        u_smoothing_weights(GRID, 0.001, u=np.array([0.0125]))


def test_group_curve_reproduces_lines_at_interior_points():
    part = Partition(np.array([1, 1, 2, 2, 2]))
    R = np.vstack([1.5 * U - 0.2] * 2 + [-U + 3] * 3)
    curves = group_curves(R, part, 0.15, GRID)
    interior = (U >= 0.15) & (U <= 0.85)
    np.testing.assert_allclose(curves[0, interior], (1.5 * U - 0.2)[interior], atol=1e-10)
    np.testing.assert_allclose(curves[1, interior], (-U + 3)[interior], atol=1e-10)


def test_group_curve_reproduces_constants_everywhere():
    part = Partition(np.ones(4, dtype=int))
    curves = group_curves(np.full((4, GRID.count), 2.5), part, 0.1, GRID)
    np.testing.assert_allclose(curves, 2.5, atol=1e-12)


def test_group_curve_pools_members():
    rng = np.random.default_rng(0)
    R = rng.normal(size=(6, GRID.count))
    part = Partition(np.array([1, 2, 1, 2, 2, 1]))
    curves = group_curves(R, part, 0.2, GRID)
    for k in (1, 2):
        np.testing.assert_allclose(curves[k - 1], estimate_group_curve(R, part, k, U, 0.2), atol=1e-12)
    # pooled smoother of the members equals the smoother of their mean curve
    W = local_linear_weights(U, U, 0.2)
    np.testing.assert_allclose(curves[0], W @ R[[0, 2, 5]].mean(axis=0), atol=1e-12)
    assert isinstance(estimate_group_curve(R, part, 1, 0.5, 0.2), float)


def test_refined_additive_reproduces_affine_in_x():
    rng = np.random.default_rng(1)
    x_obs = rng.uniform(size=60)
    R = np.tile((2.0 * x_obs - 0.7)[:, None], (1, GRID.count))
    xs = np.linspace(0.1, 0.9, 9)
    surf = estimate_refined_additive(R, x_obs, None, xs, 0.2, 0.3)
    np.testing.assert_allclose(surf, np.tile((2 * xs - 0.7)[:, None], (1, GRID.count)), atol=1e-10)


def test_refined_additive_reproduces_affine_in_u_at_interior():
    x_obs = np.linspace(0, 1, 30)
    R = np.tile(0.8 * U + 0.1, (30, 1))
    surf = estimate_refined_additive(R, x_obs, None, np.array([0.5]), 0.2, 0.3)[0]
    interior = (U >= 0.2) & (U <= 0.8)
    np.testing.assert_allclose(surf[interior], (0.8 * U + 0.1)[interior], atol=1e-10)


def test_refined_additive_constant():
    x_obs = np.random.default_rng(2).uniform(size=25)
    surf = estimate_refined_additive(np.full((25, GRID.count), -1.25), x_obs, None, x_obs, 0.1, 0.4)
    np.testing.assert_allclose(surf, -1.25, atol=1e-12)


def test_u_weights_integrate_the_kernel():
    W = u_smoothing_weights(GRID, 0.2)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    row = kernel((0.5 - U) / 0.2) * GRID.trapezoid_weights()
    np.testing.assert_allclose(W[20], row / row.sum(), atol=1e-14)


def test_group_partial_residual_without_covariates():
    F = np.random.default_rng(3).normal(size=(5, GRID.count))
    fit = fit_initial(F, None, grid=GRID)
    np.testing.assert_array_equal(group_partial_residual(F, fit), F)
    with pytest.raises(GridMismatchError):
        group_partial_residual(F[:, :-1], fit)


def test_group_partial_residual_recovers_planted_subject_curves():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(20, 1))
    template = fit_initial(np.zeros((20, GRID.count)), X, grid=GRID, u_knots=2, x_knots=1)
    load = template.cov_bases[0](X[:, 0])
    v = rng.normal(size=(20, template.u_basis.dimension))
    bu = template.u_design()
    F = (v + load @ (load.T @ v)) @ bu.T
    fit = fit_initial(F, X, grid=GRID, u_knots=2, x_knots=1)
    np.testing.assert_allclose(group_partial_residual(F, fit), v @ bu.T, atol=1e-8)


def test_additive_partial_residual_with_true_group_curves():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(12, 1))
    part = Partition(np.repeat([1, 2], 6))
    m = np.vstack([np.sin(2 * np.pi * U), np.cos(2 * np.pi * U)])
    g1 = np.sin(2 * np.pi * U)[None, :] * (2 * X[:, :1] - 1)
    F = m[part.labels - 1] + g1
    fit = fit_initial(F, X, grid=GRID)
    np.testing.assert_allclose(additive_partial_residual(F, fit, m, part, 0), g1, atol=1e-12)
    zero = np.zeros_like(F)
    fit0 = fit_initial(zero, X, grid=GRID)
    np.testing.assert_array_equal(
        additive_partial_residual(zero, fit0, np.zeros((2, GRID.count)), part, 0), zero
    )


def test_refine_outputs(small_dataset, small_lqd):
    _, F = small_lqd
    fit = fit_initial(F, small_dataset.X, grid=small_dataset.grid, n_obs=80)
    res = refine(F, fit, small_dataset.truth)
    assert res.group_curves.shape == (3, small_dataset.grid.count)
    assert res.fitted().shape == F.shape
    assert np.all(np.isfinite(res.fitted()))
    lattice = res.x_lattice(0)
    assert lattice.size == 51
    assert lattice[0] == pytest.approx(small_dataset.X[:, 0].min())
    surf = res.additive_surface(0, lattice)
    assert surf.shape == (51, small_dataset.grid.count)
    np.testing.assert_allclose(res.fitted(covariates=[]), res.subject_curves())


def test_refined_additive_roughly_centered(small_dataset, small_lqd):
    _, F = small_lqd
    fit = fit_initial(F, small_dataset.X, grid=small_dataset.grid, n_obs=80)
    res = refine(F, fit, small_dataset.truth)
    for l in range(2):
        assert np.max(np.abs(res.additive_at_subjects(l).mean(axis=0))) <= 0.1


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

def naive_cv(F, fit, part, bw):
    """Leave-one-grid-point-out CV computed by explicit re-estimation."""
    n, T = F.shape
    labels = part.labels - 1
    add = [fit.additive_at_subjects(j) for j in range(fit.n_covariates)]
    R0 = F - sum(add) if add else F.copy()
    means = np.vstack([R0[g].mean(axis=0) for g in part.groups])
    pred = np.zeros_like(F)
    for t in range(T):
        keep = np.ones(T)
        keep[t] = 0.0
        W = local_linear_weights(U, U, bw.h0, mask=keep[None, :])
        m = means @ W.T
        pred[:, t] = m[labels, t]
        for l in range(fit.n_covariates):
            resid = F - m[labels] - (sum(add) - add[l])
            wu = kernel((U[t] - U) / bw.h_lu[l]) * GRID.trapezoid_weights() * keep
            s = resid @ (wu / wu.sum())
            Wx = local_linear_weights(fit.X[:, l], fit.X[:, l], bw.h_lx[l])
            pred[:, t] += Wx @ s
    return np.mean((F - pred) ** 2)


def test_cv_score_matches_explicit_leave_one_out():
    rng = np.random.default_rng(6)
    n = 16
    X = rng.uniform(size=(n, 2))
    part = Partition(np.repeat([1, 2], n // 2))
    F = np.vstack([np.sin(2 * np.pi * U), U])[part.labels - 1] \
        + np.sin(np.pi * U)[None, :] * X[:, :1] + 0.1 * rng.normal(size=(n, GRID.count))
    fit = fit_initial(F, X, grid=GRID, u_knots=1, x_knots=1)
    bw = Bandwidths(0.12, (0.2, 0.3), (0.5, 0.6))
    assert cv_score(F, fit, part, bw) == pytest.approx(naive_cv(F, fit, part, bw), rel=1e-10)


def test_cv_prefers_largest_h0_for_noise():
    rng = np.random.default_rng(7)
    for _ in range(3):
        F = rng.normal(size=(30, GRID.count))
        fit = fit_initial(F, None, grid=GRID)
        part = Partition(np.repeat([1, 2, 3], 10))
        base = default_bandwidths(30, GRID.count, 0)
        best, scores = cv_bandwidths(F, fit, part, base=base)
        assert best.h0 == pytest.approx(2 * base.h0)


def test_cv_prefers_small_h0_for_wiggly_curves():
    rng = np.random.default_rng(8)
    fine = Grid(101)
    u = fine.points
    part = Partition(np.repeat([1, 2], 10))
    wiggly = np.vstack([np.sin(8 * np.pi * u), np.cos(8 * np.pi * u)])
    F = wiggly[part.labels - 1] + 0.05 * rng.normal(size=(20, fine.count))
    fit = fit_initial(F, None, grid=fine)
    base = Bandwidths(0.1)
    best, _ = cv_bandwidths(F, fit, part, base=base)
    assert best.h0 == pytest.approx(0.05)


def test_cv_selected_is_argmin(small_dataset, small_lqd):
    _, F = small_lqd
    fit = fit_initial(F, small_dataset.X, grid=small_dataset.grid, n_obs=80)
    best, scores = cv_bandwidths(F, fit, small_dataset.truth)
    chosen = [s for b, s in scores if b == best]
    assert chosen and chosen[0] <= min(s for _, s in scores)
    assert len(scores) == 27


def test_cv_flat_surface_returns_base():
    F = np.zeros((6, GRID.count))
    fit = fit_initial(F, None, grid=GRID)
    base = Bandwidths(0.2)
    best, scores = cv_bandwidths(F, fit, Partition(np.repeat([1, 2], 3)), base=base)
    assert best == base
    assert all(s == 0.0 for _, s in scores)


def test_cv_explicit_candidates():
    F = np.random.default_rng(9).normal(size=(6, GRID.count))
    fit = fit_initial(F, None, grid=GRID)
    cands = [Bandwidths(0.1), Bandwidths(0.3)]
    best, scores = cv_bandwidths(F, fit, Partition(np.ones(6, dtype=int)), candidates=cands)
    assert [b for b, _ in scores] == cands
    with pytest.raises(ValueError):
        cv_bandwidths(F, fit, Partition(np.ones(6, dtype=int)), candidates=[])
