"""Sector operators: kernels, factorization, inversion, ladders, generators."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlheat.constants import ModelInput
from nlheat.groundstate import RadialProfile, compute_ground_state
from nlheat.grids import RadialGrid, fit_powerlaw, radial_integral
from nlheat.spectral import (BranchAmbiguous, GridMismatch,
                             OriginDecayViolated, apply_operators,
                             build_ladder, build_phi_basis, closed_t0,
                             ground_series, invert_H, kernel_pair,
                             kernel_series, orthogonality_matrix,
                             orthogonality_report, scaling_exponent)

D = 13


def bump(grid, n, center, width):
    """r^n * exp(-(r-center)^2/width) with analytic derivatives."""
    r = grid.r
    e = np.exp(-(r - center) ** 2 / width)
    de = -2.0 * (r - center) / width * e
    d2e = (-2.0 / width + 4.0 * (r - center) ** 2 / width ** 2) * e
    if n == 0:
        v, d1, d2 = e, de, d2e
    else:
        rn = r ** n
        rn1 = n * r ** (n - 1)
        rn2 = n * (n - 1) * r ** (n - 2) if n >= 2 else np.zeros_like(r)
        v = rn * e
        d1 = rn1 * e + rn * de
        d2 = rn2 * e + 2.0 * rn1 * de + rn * d2e
    parity = 1 if n % 2 == 0 else -1
    return RadialProfile(grid=grid, values=v, d1=d1, d2=d2, parity=parity)


def wnorm(grid, y, d=D):
    return np.sqrt(radial_integral(grid, y ** 2, d))


# ------------------------------------------------------------ series seeds

def test_ground_series_low_order():
    # closed-form Taylor data: q1 = -1/(2d), q2 = p/(8 d (d+2))
    for d, p in ((13, 5), (11, 7)):
        q = ground_series(d, p, 12)
        assert q[0] == 1.0
        assert q[1] == pytest.approx(-1.0 / (2 * d), rel=1e-14)
        assert q[2] == pytest.approx(p / (8.0 * d * (d + 2)), rel=1e-14)


def test_kernel_series_leading_correction():
    # regular element: a1 = -p/(2d + 4n); singular: a1 = p/(8 - 2d - 4n)
    for n in (0, 1, 2):
        a = kernel_series(13, 5, n, float(n), 12)
        assert a[1] == pytest.approx(-5.0 / (2 * 13 + 4 * n), rel=1e-13)
        b = kernel_series(13, 5, n, float(2 - 13 - n), 12)
        dj = (2.0 - 13 - n + 2) * (2.0 - 13 - n + 2 + 11) - n * (n + 11)
        assert b[1] == pytest.approx(-5.0 / dj, rel=1e-13)


# -------------------------------------------------------- kernel elements

@pytest.mark.parametrize("n,scale", [(0, 0.5), (1, 1.0 / 13.0)])
def test_kernel_matches_closed_form(kernels135, ground135, n, scale):
    # the ODE-built element and the symmetry mode are the same solution;
    # a_0 = 1 pins the ratio to sp (n=0) and 1/d (n=1)
    pair = kernels135[n]
    cf = closed_t0(ground135, n)
    r = ground135.grid.r
    i1 = np.argmin(np.abs(r - 1.0))
    fitted = cf.values[i1] / pair.T0.values[i1]
    assert fitted == pytest.approx(scale, rel=1e-7)
    sel = (r >= 0.1) & (r <= 100.0)
    dev = np.abs(pair.T0.values[sel] * fitted - cf.values[sel]) \
        / np.abs(cf.values[sel])
    assert dev.max() < 1e-6


def test_kernel_tail_exponents(kernels135, ground135):
    for n in (0, 1, 2):
        pair = kernels135[n]
        gamma_n = ground135.table.mode_tail_exp[n]
        tol = max(0.05 * abs(gamma_n), 0.01)
        assert abs(pair.T0.tail.e_hat + gamma_n) < tol
        assert abs(pair.Gamma.tail.e_hat + gamma_n) < tol
    # the near-flat sector decay is resolved in absolute terms
    assert abs(kernels135[2].T0.tail.e_hat
               + ground135.table.mode_tail_exp[2]) < 0.01


def test_singular_element_origin(kernels135):
    for n in (0, 1, 2):
        e0 = kernels135[n].meta["gamma_origin_fit"][0]
        assert e0 == pytest.approx(2 - D - n, abs=0.02)


def test_kernel_positivity(kernels135):
    for n in (0, 1, 2):
        t0 = kernels135[n].T0
        assert np.all(t0.values[1:] > 0.0)
        if n == 0:
            assert t0.values[0] > 0.0


def test_wronskian_invariant(kernels135, ground135):
    # r^{d-1} (T0 Gamma' - T0' Gamma) = -(d - 2 + 2n) for a_0 = 1 seeds;
    # checked only where the two products do not cancel catastrophically
    r = ground135.grid.r
    for n in (0, 1, 2):
        pair = kernels135[n]
        a = r[1:] ** (D - 1) * pair.T0.values[1:] * pair.Gamma.d1[1:]
        b = r[1:] ** (D - 1) * pair.T0.d1[1:] * pair.Gamma.values[1:]
        expect = -(D - 2 + 2 * n)
        cond = (np.abs(a) + np.abs(b)) < 1e4 * abs(expect)
        assert cond.sum() > 100
        assert np.max(np.abs((a - b)[cond] - expect)) < 1e-6 * abs(expect)


def test_log_derivative_asymptotes(kernels135, ground135):
    r = ground135.grid.r
    for n in (0, 1, 2):
        w = kernels135[n].W.values
        io = np.argmin(np.abs(r - 0.05))
        it = np.argmin(np.abs(r - 1e4))
        assert r[io] * w[io] == pytest.approx(n, abs=2e-3)
        gamma_n = ground135.table.mode_tail_exp[n]
        assert r[it] * w[it] == pytest.approx(-gamma_n, abs=2e-3)


def test_kernel_closed_basis_option(ground135):
    pair = kernel_pair(ground135, 0, basis="closed")
    cf = closed_t0(ground135, 0)
    assert np.array_equal(pair.T0.values, cf.values)
    assert abs(pair.T0.tail.e_hat + 3.5) < 0.05


# ---------------------------------------------------------- operator alg

def test_annihilates_kernel(kernels135, ground135):
    for n in (0, 1, 2):
        pair = kernels135[n]
        out = apply_operators(pair, pair.T0, "A")
        scale = np.abs(pair.T0.d1[1:]) \
            + np.abs(pair.W.values[1:] * pair.T0.values[1:])
        assert np.max(np.abs(out.values[1:]) / (scale + 1e-300)) < 1e-12


def test_fd_route_annihilates_kernel(kernels135, ground135):
    # H via stencils is an independent route; on T0 it only sees the
    # construction error
    grid = ground135.grid
    for n in (0, 1):
        pair = kernels135[n]
        out = apply_operators(pair, pair.T0, "H")
        sel = grid.mask(0.1, 1e3)
        rel = wnorm(grid, out.values * sel) / wnorm(grid,
                                                    pair.T0.values * sel)
        assert rel < 1e-5


def test_factorization_matches_fd(kernels135, ground135):
    # A*(A f) from stored derivatives against H f from stencils
    grid = ground135.grid
    for n in (0, 1, 2):
        pair = kernels135[n]
        f = bump(grid, n, 3.0, 2.0)
        two_step = apply_operators(pair, apply_operators(pair, f, "A"), "A*")
        direct = apply_operators(pair, f, "H")
        rel = wnorm(grid, two_step.values - direct.values) \
            / wnorm(grid, direct.values)
        assert rel < 1e-6


def test_adjunction(kernels135, ground135):
    grid = ground135.grid
    for n in (0, 1, 2):
        pair = kernels135[n]
        f = bump(grid, n, 3.0, 2.0)
        g = bump(grid, n, 5.0, 3.0)
        lhs = radial_integral(grid, apply_operators(pair, f, "A").values
                              * g.values, D)
        rhs = radial_integral(grid, f.values
                              * apply_operators(pair, g, "A*").values, D)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_scaling_commutator(kernels135, ground135):
    # H(Lam u) - Lam(H u) - 2 H u + (2V + r V') u = 0
    gs = ground135
    grid, r, sp = gs.grid, gs.grid.r, gs.table.scale_pow
    pair = kernels135[0]
    u = bump(grid, 0, 4.0, 1.5)
    lam_u = RadialProfile(grid=grid, values=sp * u.values + r * u.d1,
                          d1=(sp + 1.0) * u.d1 + r * u.d2, parity=1)
    h_lam = apply_operators(pair, lam_u, "H")
    hu = apply_operators(pair, u, "H")
    lam_hu = sp * hu.values + r * grid.diff(hu.values, 1, parity=1)
    resid = h_lam.values - lam_hu - 2.0 * hu.values \
        + (2.0 * gs.v.values + r * gs.v.d1) * u.values
    assert wnorm(grid, resid) / wnorm(grid, hu.values) < 1e-6


def test_grid_mismatch_rejected(kernels135):
    other = RadialGrid(core_h=1.0 / 64)
    f = bump(other, 1, 3.0, 2.0)
    with pytest.raises(GridMismatch):
        apply_operators(kernels135[1], f, "A")
    with pytest.raises(GridMismatch):
        invert_H(kernels135[1], f)


# ------------------------------------------------------------- inversion

def test_roundtrip_compact_source(kernels135, ground135):
    grid = ground135.grid
    for n in (0, 1, 2):
        pair = kernels135[n]
        f = bump(grid, n, 3.0, 2.0)
        u = invert_H(pair, f)
        assert u.meta["branch"] == "exterior"
        hu = apply_operators(pair, u, "H")
        rel = wnorm(grid, hu.values - f.values) / wnorm(grid, f.values)
        assert rel < 1e-5


def test_roundtrip_grid_doubling():
    # coarse enough that stencil truncation dominates; the error law then
    # gives far more than the factor-8 floor
    errs = []
    for core_h, npd in ((1.0 / 16, 20), (1.0 / 32, 40)):
        grid = RadialGrid(core_h=core_h, nodes_per_decade=npd)
        gs = compute_ground_state(ModelInput(13, 5, 2, 4), grid=grid,
                                  use_cache=False)
        pair = kernel_pair(gs, 1)
        f = bump(grid, 1, 3.0, 2.0)
        u = invert_H(pair, f)
        hu = apply_operators(pair, u, "H")
        errs.append(wnorm(grid, hu.values - f.values, D)
                    / wnorm(grid, f.values, D))
    assert errs[0] / errs[1] > 8.0


def test_inverse_derivative_consistency(kernels135, ground135):
    # returned d1 is quadrature-analytic; stencils of the values agree
    grid = ground135.grid
    pair = kernels135[1]
    u = invert_H(pair, bump(grid, 1, 3.0, 2.0))
    fd = grid.diff(u.values, 1, parity=u.parity)
    sel = grid.mask(0.5, 50.0)
    dev = np.abs(fd - u.d1)[sel] / np.max(np.abs(u.d1))
    assert dev.max() < 1e-6


def test_interior_branch_growth(kernels135, ground135):
    # inverting the kernel element itself: source tail is too fat for the
    # exterior integral, the result grows two powers over the input
    pair = kernels135[0]
    u = invert_H(pair, pair.T0)
    assert u.meta["branch"] == "interior"
    e, _, _ = fit_powerlaw(ground135.grid.r, u.values, 1e2, 1e4)
    assert e == pytest.approx(-1.5, abs=0.02 * 1.5)


def test_branch_dead_zone(kernels135, ground135):
    # u1/T0 ~ 1/r sits exactly on the undecidable line
    grid = ground135.grid
    r = grid.r
    t0 = kernels135[0].T0
    vals = t0.values / (1.0 + r ** 2)
    d1 = t0.d1 / (1.0 + r ** 2) - t0.values * 2.0 * r / (1.0 + r ** 2) ** 2
    f = RadialProfile(grid=grid, values=vals, d1=d1, parity=1)
    with pytest.raises(BranchAmbiguous):
        invert_H(kernels135[0], f)


def test_origin_decay_guard(kernels135, ground135):
    # sector 2 inputs must vanish like r^2
    grid = ground135.grid
    f = RadialProfile(grid=grid, values=np.ones_like(grid.r),
                      d1=np.zeros_like(grid.r), parity=1)
    with pytest.raises(OriginDecayViolated):
        invert_H(kernels135[2], f)


@settings(max_examples=15, deadline=None)
@given(center=st.floats(2.0, 7.0), width=st.floats(0.5, 2.5),
       n=st.integers(0, 2))
def test_roundtrip_property(kernels135, ground135, center, width, n):
    grid = ground135.grid
    pair = kernels135[n]
    f = bump(grid, n, center, width)
    u = invert_H(pair, f)
    hu = apply_operators(pair, u, "H")
    assert wnorm(grid, hu.values - f.values) / wnorm(grid, f.values) < 1e-4


# ---------------------------------------------------------------- ladder

def test_ladder_tail_law(ladder135, ground135):
    # tail exponent climbs by exactly 2 per rung
    for n in (0, 1, 2):
        lad = ladder135[n]
        gamma_n = ground135.table.mode_tail_exp[n]
        for i, t in enumerate(lad.profiles):
            expect = -gamma_n + 2.0 * i
            assert t.tail.e_hat == pytest.approx(
                expect, abs=0.02 * max(abs(expect), 1.0))


def test_ladder_second_rung_example(ladder135):
    # frozen: two inversions of the scaling sector flip the tail to +1/2
    assert ladder135[0].profiles[2].tail.e_hat == pytest.approx(0.5,
                                                                abs=0.01)


def test_ladder_defect_decay(ladder135, ground135):
    # Theta_i must decay distinctly faster than T_i
    gap = ground135.table.defect_gap
    for n in (0, 1, 2):
        gamma_n = ground135.table.mode_tail_exp[n]
        for i, theta in enumerate(ladder135[n].thetas):
            bound = -gamma_n + 2.0 * i - gap
            assert theta.tail.e_hat <= bound + 0.05


def test_ladder_origin_order(ladder135, ground135):
    # each rung gains two powers of r at the origin as well; a sloppy
    # first quadrature would instead leave an O(1) kernel admixture here
    r = ground135.grid.r
    for n in (0, 1, 2):
        t1 = ladder135[n].profiles[1]
        e, _, resid = fit_powerlaw(r, np.abs(t1.values), r[1], 0.2)
        assert e == pytest.approx(n + 2, abs=0.05)


def test_ladder_cache_roundtrip(ground135, shared_cache):
    lad1 = build_ladder(ground135, 1, depth=2, use_cache=True)
    lad2 = build_ladder(ground135, 1, depth=2, use_cache=True)
    for a, b in zip(lad1.profiles, lad2.profiles):
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.d1, b.d1)
    assert lad2.meta["branches"] == lad1.meta["branches"]


# ------------------------------------------------------------ generators

def test_generator_coefficients_structure(kernels135, ladder135):
    basis = build_phi_basis(kernels135[0], ladder135[0], 40.0)
    assert basis.coeffs[0] == 1.0
    assert basis.g00 > 0.0
    # recursion zeroes <phi, T_i> for every i >= 1
    g = orthogonality_matrix(basis, ladder135[0])
    for i in range(1, g.shape[1]):
        assert abs(g[0, i]) < 1e-8 * basis.g00


def test_generator_support(kernels135, ladder135):
    basis = build_phi_basis(kernels135[1], ladder135[1], 40.0)
    ru = basis.grid_u.r
    out = np.abs(basis.phi[ru > 80.0])
    assert out.max() <= 1e-12 * np.abs(basis.phi).max()
    # plateau is untouched: phi = T0 there
    inner = ru < 20.0
    t0_plateau = basis.powers[0][inner]
    assert np.array_equal(basis.phi[inner], t0_plateau)


def test_gram_matrix_identity(kernels135, ladder135):
    for n in (0, 1, 2):
        rep = orthogonality_report(ladder=ladder135[n],
                                   basis=build_phi_basis(kernels135[n],
                                                         ladder135[n], 40.0),
                                   pair=kernels135[n])
        assert rep["diag_spread"] < 1e-10
        assert rep["max_offdiag"] < 1e-4
        assert rep["adjointness"] < 1e-9
        assert rep["fd_deviation"] < 5e-4


def test_gram_scaling_with_cut_radius(kernels135, ladder135, ground135):
    # <chi_M T0, T0> grows like M^{d - 2 gamma_n}
    for n in (0, 1, 2):
        e, vals = scaling_exponent(kernels135[n], ladder135[n])
        expect = D - 2.0 * ground135.table.mode_tail_exp[n]
        assert e == pytest.approx(expect, rel=0.05)
        assert np.all(np.diff(vals) > 0)


def test_generator_cut_inside_grid(kernels135, ladder135):
    with pytest.raises(ValueError):
        build_phi_basis(kernels135[0], ladder135[0], 6e4)
