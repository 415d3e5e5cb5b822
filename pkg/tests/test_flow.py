"""Parameter flow: closed solutions, linearization, tube runs, shooting."""
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlheat.constants import (BadEll, ModelInput, derive_constants,
                              instability_count)
from nlheat.flow import (BlowupOfParameters, FlowState, HorizonTooShort,
                         NoSignChange, closed_eigenvalues, flow_csv, flow_rhs,
                         integrate_flow, linearize, mode_matrix,
                         renormalized_path, shoot_trapped,
                         special_blowup_time, special_coeffs,
                         special_scale_of_time, special_solution,
                         system_matrix, tube_csv, tube_run)
from nlheat.profile import ParamFamily


@pytest.fixture(scope="module")
def t135():
    return derive_constants(ModelInput(13, 5, 2, 4))


@pytest.fixture(scope="module")
def t135_l3():
    return derive_constants(ModelInput(13, 5, 3, 4))


@pytest.fixture(scope="module")
def t117():
    return derive_constants(ModelInput(11, 7, 3, 3))


def special_rate(table, ell, s):
    """d/ds of the closed solution: -i c_i / s^(i+1), padded to depth."""
    depth = table.model.depth
    c = np.zeros(depth)
    c[:ell] = special_coeffs(table, ell)
    i = np.arange(1.0, depth + 1.0)
    return -i * c / s ** (i + 1.0)


# -------------------------------------------------------- closed solutions

def test_special_coeffs_closed_values(t135, t117):
    # hand recursion: c_1 = ell/(2ell - alpha), c_{i+1} = -alpha(ell-i)c_i/(2ell-alpha)
    assert special_coeffs(t135, 2) == pytest.approx([2.0, -6.0], rel=1e-13)
    assert special_coeffs(t135, 3) == pytest.approx([1.0, -2.0, 2.0], rel=1e-13)
    assert special_coeffs(t117, 3) == pytest.approx([1.5, -6.0, 12.0], rel=1e-12)


def test_special_coeffs_recursion_identity(t135):
    # equivalent form c_{i+1} = ((2i - alpha) c_1 - i) c_i
    c = special_coeffs(t135, 4)
    alpha = t135.tail_gap
    for i in range(1, 4):
        assert c[i] == pytest.approx(((2 * i - alpha) * c[0] - i) * c[i - 1],
                                     rel=1e-13)


def test_special_coeffs_rejects_small_ell(t135, t117):
    with pytest.raises(BadEll):
        special_coeffs(t135, 1)          # 2*1 < 3
    with pytest.raises(BadEll):
        special_coeffs(t117, 2)          # 2*2 = 4 exactly: degenerate
    # t117 has tail gap 4, so ell = 3 must be fine
    special_coeffs(t117, 3)


def test_special_solution_values_and_padding(t135):
    fam = special_solution(t135, 2, 10.0)
    assert isinstance(fam, ParamFamily)
    assert fam.depth == 4
    assert fam.radial == pytest.approx([0.2, -0.06, 0.0, 0.0], abs=1e-15)
    assert fam.b(3) == 0.0 and fam.b(5) == 0.0


def test_special_solution_guards(t135):
    with pytest.raises(ValueError):
        special_solution(t135, 2, 0.0)
    with pytest.raises(ValueError):
        special_solution(t135, 2, -3.0)
    with pytest.raises(BadEll):
        special_solution(t135, 5, 10.0)  # deeper than the family


def test_special_solution_solves_flow(t135, t117):
    for table, ell in ((t135, 2), (t135, 3), (t117, 3)):
        for s in (3.7, 10.0, 77.0):
            state = FlowState(s, special_solution(table, ell, s))
            rates = flow_rhs(state, table)
            want = special_rate(table, ell, s)
            scale = np.max(np.abs(want))
            assert np.max(np.abs(rates.radial - want)) <= 1e-13 * scale
            assert rates.lam_s == pytest.approx(-state.b.b1, rel=1e-14)
            assert np.all(rates.z_s == 0.0)


@settings(max_examples=50, deadline=None)
@given(ell=st.sampled_from([2, 3, 4]), s=st.floats(1.5, 500.0))
def test_special_solution_residual_property(t135, ell, s):
    state = FlowState(s, special_solution(t135, ell, s))
    rates = flow_rhs(state, t135)
    want = special_rate(t135, ell, s)
    assert np.max(np.abs(rates.radial - want)) <= 1e-11 * np.max(np.abs(want))


def test_special_blowup_time_and_scale(t135):
    # scale catches up with the closed trajectory: lam(t(s)) = (s/s0)^-2
    T = special_blowup_time(t135, 2, 10.0)
    assert T == pytest.approx(10.0 / 3.0, rel=1e-14)
    assert special_scale_of_time(t135, 2, 10.0, 0.0) == pytest.approx(1.0)
    t30 = (10.0 / 3.0) * (1.0 - (10.0 / 30.0) ** 3)   # int lam^2 ds to s = 30
    assert special_scale_of_time(t135, 2, 10.0, t30) == pytest.approx(
        1.0 / 9.0, rel=1e-12)


# ------------------------------------------------------------ vector field

def test_flow_rhs_fixed_point_and_feeding(t135):
    zero = FlowState(5.0, ParamFamily(np.zeros(4)), lam=2.0)
    rates = flow_rhs(zero, t135)
    assert np.all(rates.radial == 0.0) and rates.lam_s == 0.0

    state = FlowState(5.0, ParamFamily([0.1, 0.0, 0.0, 0.2]), lam=2.0)
    rates = flow_rhs(state, t135)
    # -(2i-3) b1 b_i + b_{i+1}, nothing feeds the deepest slot
    assert rates.radial == pytest.approx([0.01, 0.0, 0.2, -0.1], abs=1e-16)
    assert rates.lam_s == pytest.approx(-0.2, rel=1e-15)


def test_flow_rhs_translation_block(t135):
    tr = np.zeros((13, 3))
    tr[0] = [0.3, -0.1, 0.05]
    state = FlowState(5.0, ParamFamily([0.2, 0.0, 0.0, 0.0], translation=tr),
                      lam=1.5, z=np.zeros(13))
    rates = flow_rhs(state, t135)
    # degree-1 gap is 1: rates -(2i-1) b1 tr_i + tr_{i+1}
    assert rates.translation[0] == pytest.approx([-0.16, 0.11, -0.05],
                                                 abs=1e-15)
    assert np.all(rates.translation[1:] == 0.0)
    assert rates.z_s[0] == pytest.approx(-0.45, rel=1e-15)
    assert np.all(rates.z_s[1:] == 0.0)


# -------------------------------------------------------------- integration

def test_integrate_flow_matches_closed_scale(t135):
    # the closed solution has lam(t) = (1 - t/T)^(2/3); the +6 rate makes
    # injected roundoff grow like (s/s0)^6, so the horizon stays at 10 s0
    s0, ell = 10.0, 2
    fam = special_solution(t135, ell, s0)
    traj = integrate_flow(FlowState(s0, fam), 100.0, t135,
                          rtol=1e-12, atol=1e-15)
    T = special_blowup_time(t135, ell, s0)
    lam_closed = special_scale_of_time(t135, ell, s0, traj.t)
    assert np.max(np.abs(traj.lam / lam_closed - 1.0)) <= 1e-6

    # local exponent of lam against T - t over the last decade
    sel = traj.s >= 10.0 * s0 / 10.0 ** 0.5
    slope = np.polyfit(np.log(T - traj.t[sel]), np.log(traj.lam[sel]), 1)[0]
    assert slope == pytest.approx(2.0 / 3.0, abs=1e-4)

    # coefficients track c_i/s^i and lam * s^2 is conserved
    i = np.arange(1.0, 5.0)
    b_closed = np.zeros(4)
    b_closed[:2] = special_coeffs(t135, 2)
    want = b_closed[None, :] / traj.s[:, None] ** i[None, :]
    assert np.max(np.abs(traj.b[:, :2] - want[:, :2])) <= 1e-6 * np.max(want)
    assert np.max(np.abs(traj.b[:, 2:])) <= 1e-10
    inv = traj.lam * traj.s ** 2
    assert np.max(np.abs(inv / inv[0] - 1.0)) <= 1e-6

    assert traj.t[0] == 0.0 and np.all(np.diff(traj.t) > 0.0)
    assert traj.t[-1] < T
    assert traj.z is None and traj.translation is None


def test_integrate_flow_sampling(t135):
    fam = special_solution(t135, 2, 10.0)
    traj = integrate_flow(FlowState(10.0, fam), 40.0, t135, samples=101)
    assert len(traj.s) == 101
    assert traj.s[0] == 10.0 and traj.s[-1] == 40.0
    ratios = traj.s[1:] / traj.s[:-1]
    assert np.max(ratios) - np.min(ratios) <= 1e-12    # geometric sampling


def test_integrate_flow_translation_powerlaw(t135):
    # deepest degree-1 slot set: it decays as s^(-(2 L1 - 1) c_1) and feeds
    # the slot above, which mixes the two closed power laws
    s0 = 10.0
    fam = special_solution(t135, 2, s0)
    tr = np.zeros((13, 3))
    tr[0, 2] = 1e-3
    fam.translation = tr
    z0 = np.full(13, 0.25)
    traj = integrate_flow(FlowState(s0, fam, z=z0), 30.0, t135,
                          rtol=1e-12, atol=1e-16)
    assert traj.translation.shape == (len(traj.s), 13, 3)
    s = traj.s
    assert traj.translation[:, 0, 2] == pytest.approx(
        1e-3 * (s / s0) ** (-10.0), rel=1e-8)
    fed = (1e-3 / 3.0) * (s0 ** 7 / s ** 6 - s0 ** 10 / s ** 9)
    assert traj.translation[:, 0, 1] == pytest.approx(fed, rel=1e-7)
    assert np.max(np.abs(traj.translation[:, 1:, :])) == 0.0

    # leading slot set, nothing feeding it: the center moves by the closed
    # quadrature of -lam * (leading slot)
    fam = special_solution(t135, 2, s0)
    tr = np.zeros((13, 3))
    b0 = 1e-3
    tr[0, 0] = b0
    fam.translation = tr
    traj = integrate_flow(FlowState(s0, fam, z=z0), 30.0, t135,
                          rtol=1e-12, atol=1e-16)
    z_want = z0[0] - (b0 * s0 / 3.0) * (1.0 - (s0 / traj.s) ** 3)
    assert traj.z[:, 0] == pytest.approx(z_want, rel=1e-9)
    assert np.max(np.abs(traj.z[:, 1:] - 0.25)) <= 1e-12


def test_integrate_flow_overflow_guard(t135):
    # b1 = 1 at s0 = 1 sits far above the decaying family and runs away
    fam = ParamFamily([1.0, 0.0, 0.0, 0.0])
    with pytest.raises(BlowupOfParameters, match="s ="):
        integrate_flow(FlowState(1.0, fam), 100.0, t135)


def test_integrate_flow_rejects_bad_window(t135):
    fam = special_solution(t135, 2, 10.0)
    with pytest.raises(ValueError):
        integrate_flow(FlowState(10.0, fam), 5.0, t135)


# ------------------------------------------------- renormalized coordinates

def test_renormalized_zero_on_closed_solution(t135):
    s0 = 10.0
    fam = special_solution(t135, 2, s0)
    traj = integrate_flow(FlowState(s0, fam), 60.0, t135,
                          rtol=1e-12, atol=1e-15)
    U = renormalized_path(traj, t135, 2)
    assert np.max(np.abs(U)) <= 1e-4      # pure integration drift, amplified


def test_renormalized_consistency_algebraic(t135):
    # dU/ds from the coefficient field must equal A U / s - (2i-alpha) U1 U / s
    s0, ell = 20.0, 2
    fam = special_solution(t135, ell, s0)
    fam.radial = fam.radial + np.array([1e-4, -2e-6, 1e-7, -1e-8])
    state = FlowState(s0, fam)
    U = state.U(t135, ell)
    rates = flow_rhs(state, t135)
    i = np.arange(1.0, 5.0)
    c = np.zeros(4)
    c[:ell] = special_coeffs(t135, ell)
    dU_field = rates.radial * s0 ** i + i * c / s0 + i * U / s0
    A = system_matrix(t135, ell, 4)
    dU_matrix = (A @ U - (2.0 * i - t135.tail_gap) * U[0] * U) / s0
    assert np.max(np.abs(dU_field - dU_matrix)) <= 1e-14


def test_renormalized_consistency_along_trajectory(t135):
    # finite differences of U against A U / s, residual bounded by C |U|^2 / s
    # with C stable under sample doubling
    s0, ell = 20.0, 2
    fitted = {}
    for samples in (256, 512):
        fam = special_solution(t135, ell, s0)
        fam.radial = fam.radial + np.array([1e-4, -2e-6, 1e-7, -1e-8])
        traj = integrate_flow(FlowState(s0, fam), 60.0, t135,
                              samples=samples, rtol=1e-12, atol=1e-15)
        U = renormalized_path(traj, t135, ell)
        A = system_matrix(t135, ell, 4)
        resid = np.abs(np.gradient(U, traj.s, axis=0) - (A @ U.T).T /
                       traj.s[:, None])
        quad = (np.max(np.abs(U), axis=1) ** 2 / traj.s)[:, None]
        fitted[samples] = np.max(resid[2:-2] / quad[2:-2])
    assert fitted[256] <= 6.0 and fitted[512] <= 6.0
    assert abs(fitted[512] / fitted[256] - 1.0) <= 0.2


# ------------------------------------------------------------ linearization

def test_system_matrix_frozen(t135):
    A = system_matrix(t135, 2, 4)
    want = np.array([[5.0, 1.0, 0.0, 0.0],
                     [6.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, -3.0, 1.0],
                     [0.0, 0.0, 0.0, -6.0]])
    assert np.allclose(A, want, atol=1e-12)


def test_system_matrix_guards(t135, t117):
    with pytest.raises(BadEll):
        system_matrix(t117, 2, 4)
    with pytest.raises(ValueError):
        system_matrix(t135, 3, 2)


def test_mode_matrix_shapes_and_diagonals(t135):
    # degree 1 drops its leading row (that slot is the center shift)
    M1 = mode_matrix(t135, 2, 1)
    assert M1.shape == (3, 3)
    assert np.diag(M1) == pytest.approx([0.0, -3.0, -6.0], abs=1e-12)
    assert np.diag(M1, 1) == pytest.approx([1.0, 1.0])
    M2 = mode_matrix(t135, 2, 2)
    assert M2.shape == (3, 3)
    cut2 = 2.0 - 0.5 * (t135.tail_exp - t135.mode_tail_exp[2])
    assert np.diag(M2) == pytest.approx(3.0 * (cut2 - np.arange(3.0)),
                                        rel=1e-12)


def test_closed_eigenvalues_frozen(t135, t117):
    got = np.sort(closed_eigenvalues(t135, 2, 4))
    assert got == pytest.approx([-6.0, -3.0, -1.0, 6.0], abs=1e-12)
    got = np.sort(closed_eigenvalues(t117, 3, 5))
    assert got == pytest.approx([-4.0, -2.0, -1.0, 4.0, 6.0], rel=1e-10)


def test_linearize_frozen_values(t135):
    rep = linearize(t135, 2, 4)
    assert rep.eig_deviation <= 1e-10
    assert rep.charpoly_deviation <= 1e-10
    assert rep.charpoly_closed == pytest.approx([1.0, -5.0, -6.0], abs=1e-12)
    assert rep.top_eigvals == pytest.approx([-1.0, 6.0], abs=1e-10)
    assert 7.0 * rep.P_inv == pytest.approx(np.array([[1.0, -1.0],
                                                      [6.0, 1.0]]), abs=1e-9)
    # one slow/fast pair in the radial block, one marginal zero per ladder
    assert rep.nonneg_counts == rep.nonneg_expected
    assert rep.nonneg_counts[0] == 1
    assert rep.nonneg_counts[1] == 1 and rep.strict_counts[1] == 0
    assert rep.nonneg_counts[2] == 1 and rep.strict_counts[2] == 1


def test_linearize_sweep_matches_closed_forms(t135, t117):
    for table, ells in ((t135, (2, 3)), (t117, (3,))):
        for ell in ells:
            for L in range(ell + 1, 7):
                rep = linearize(table, ell, L)
                assert rep.eig_deviation <= 1e-10, (ell, L)
                assert rep.charpoly_deviation <= 1e-10, (ell, L)
                assert max(rep.block_eig_deviation.values()) <= 1e-10, (ell, L)
                assert rep.nonneg_counts == rep.nonneg_expected, (ell, L)


def test_linearize_charpoly_117(t117):
    rep = linearize(t117, 3, 5)
    assert rep.charpoly_closed == pytest.approx([1.0, -9.0, 14.0, 24.0],
                                                rel=1e-10)
    assert rep.top_eigvals == pytest.approx([-1.0, 4.0, 6.0], rel=1e-10)


def test_instability_count_cross_check(t135, t117):
    # weighted strict-positive totals reproduce the combinatorial count
    rep = linearize(t135, 2)
    assert rep.total_unstable(t135) == instability_count(t135) == 91
    rep = linearize(t117, 3)
    assert rep.total_unstable(t117) == instability_count(t117) == 353


def test_top_transform_roundtrip(t135):
    rep = linearize(t135, 2, 4)
    rng = np.random.default_rng(7)
    U = rng.standard_normal((5, 4))
    V = rep.to_top(U)
    assert V.shape == (5, 2)
    assert np.allclose(rep.from_top(V), U[:, :2], atol=1e-12)


def test_linearize_report_serializes(t135):
    rep = linearize(t135, 2, 4)
    d = json.loads(json.dumps(rep.to_dict(), sort_keys=True))
    assert d["ell"] == 2 and d["L"] == 4
    assert d["eig_deviation"] <= 1e-10


# ----------------------------------------------------------------- tube runs

def test_tube_run_on_manifold_stays(t135):
    run = tube_run(t135, 2, 20.0, 400.0, np.zeros(2))
    assert run.trapped and run.s_exit is None
    assert np.max(np.abs(run.U)) <= 1e-12
    assert run.lam == pytest.approx((run.s / 20.0) ** -2.0, rel=1e-10)
    assert run.tube == pytest.approx(run.s ** -0.05, rel=1e-13)
    b = run.b_path(t135, 2)
    want = np.zeros(4)
    want[:2] = special_coeffs(t135, 2)
    assert np.allclose(b, want[None, :] / run.s[:, None] **
                       np.arange(1.0, 5.0)[None, :], atol=1e-14)


def test_tube_run_endpoint_exits(t135):
    B0 = 20.0 ** -0.05
    for sign in (1.0, -1.0):
        run = tube_run(t135, 2, 20.0, 400.0, np.array([0.0, sign * B0]))
        assert not run.trapped
        assert run.s_exit == pytest.approx(20.0)
        assert run.binding == "V2" and run.exit_sign == sign


def test_tube_run_exit_ordering(t135):
    B0 = 20.0 ** -0.05
    runs = [tube_run(t135, 2, 20.0, 4000.0, np.array([0.0, f * B0]))
            for f in (0.3, 0.6)]
    for run in runs:
        assert not run.trapped and run.binding == "V2"
        assert run.exit_sign == 1.0 and run.s_exit > 20.0
    assert runs[0].s_exit > runs[1].s_exit


def test_tube_run_tail_bound(t135):
    run = tube_run(t135, 2, 20.0, 400.0, np.zeros(2),
                   u_tail_init=np.array([10.0, 0.0]))
    assert not run.trapped and run.binding == "U3"
    assert run.s_exit == pytest.approx(20.0)


def test_tube_run_linear_growth_rate(t135):
    # fast coordinate grows at the closed +6 rate when the quadratic term
    # is switched off
    delta = 1e-6 * 20.0 ** -0.05
    run = tube_run(t135, 2, 20.0, 4000.0, np.array([0.0, delta]),
                   linear_only=True, rtol=1e-12, atol=1e-16)
    sel = run.V[:, 1] > 0
    want = delta * (run.s[sel] / 20.0) ** 6
    assert run.V[sel, 1] == pytest.approx(want, rel=1e-6)
    assert not run.trapped and run.binding == "V2"


# ------------------------------------------------------------------ shooting

def test_shoot_trapped_brackets_manifold(t135):
    B0 = 20.0 ** -0.05
    res = shoot_trapped(t135, 2, 20.0, 2000.0,
                        np.array([0.05 * B0, 0.02, -0.02]))
    assert res.certificate.trapped
    assert res.width <= 1e-12
    assert res.v_unstable[0] == pytest.approx(-6.7029133e-4, abs=1e-7)
    assert res.runs <= 60

    # endpoint runs demonstrate the sign structure
    lo, hi = res.endpoints
    assert lo.exit_sign == -1.0 and hi.exit_sign == 1.0
    assert lo.binding == "V2" and hi.binding == "V2"

    # certificate respects the tube with a margin on every coordinate
    cert = res.certificate
    assert np.max(np.abs(cert.V[:, 1]) / cert.tube) <= 0.5
    assert np.max(np.abs(cert.U[:, 2:]) / (0.5 * cert.tube[:, None])) <= 0.5

    # scale follows the closed rate along the trapped trajectory
    sel = cert.s >= 2000.0 / 10.0
    inv = cert.lam[sel] * cert.s[sel] ** 2
    assert np.max(inv) / np.min(inv) - 1.0 <= 0.1


def test_shoot_trapped_perturbations_escape(t135):
    B0 = 20.0 ** -0.05
    res = shoot_trapped(t135, 2, 20.0, 2000.0,
                        np.array([0.05 * B0, 0.02, -0.02]))
    signs = {}
    for off in (-10.0 * res.width, 10.0 * res.width):
        v = np.array([0.05 * B0, res.v_unstable[0] + off])
        run = tube_run(t135, 2, 20.0, 2000.0, v,
                       u_tail_init=np.array([0.02, -0.02]))
        assert not run.trapped and run.binding == "V2"
        assert run.s_exit > 200.0          # leaves only deep into the run
        signs[off] = run.exit_sign
    assert signs[-10.0 * res.width] == -signs[10.0 * res.width]


def test_shoot_rejects_unbracketable(t135):
    # a stable coordinate outside its tube binds at both endpoints
    with pytest.raises(NoSignChange):
        shoot_trapped(t135, 2, 20.0, 2000.0, np.array([0.0, 10.0, 0.0]))


def test_shoot_guards(t135):
    with pytest.raises(HorizonTooShort):
        shoot_trapped(t135, 2, 20.0, 100.0)
    with pytest.raises(ValueError):
        shoot_trapped(t135, 1, 20.0, 2000.0)
    with pytest.raises(ValueError):
        shoot_trapped(t135, 2, 20.0, 2000.0, np.zeros(5))


def test_shoot_nested_symmetric_manifold(t135_l3):
    # two unstable coordinates, symmetric data: the nest lands on the origin
    res = shoot_trapped(t135_l3, 3, 20.0, 200.0, bracket_tol=1e-3)
    assert res.certificate.trapped
    assert np.allclose(res.v_unstable, 0.0, atol=1e-12)
    assert res.runs >= 5


def test_shoot_nested_reports_when_unresolvable(t135_l3):
    # off-manifold stable data: quadratic cross-talk between the two
    # unstable rates caps the nested refinement; the honest outcome is a
    # report, not a guess
    with pytest.raises(NoSignChange):
        shoot_trapped(t135_l3, 3, 20.0, 200.0, np.array([0.0, 2e-4]),
                      bracket_tol=1e-3)


# ----------------------------------------------------------------- exports

def test_flow_csv_roundtrip(t135):
    fam = special_solution(t135, 2, 10.0)
    traj = integrate_flow(FlowState(10.0, fam), 40.0, t135, samples=16)
    rep = linearize(t135, 2, 4)
    buf = io.StringIO()
    flow_csv(traj, buf, table=t135, ell=2, report=rep)
    lines = buf.getvalue().strip().splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["s", "t", "lam"]
    assert "b1" in header and "U4" in header and "V2" in header
    assert len(lines) == 17
    row = [float(x) for x in lines[1].split(",")]
    assert row[0] == traj.s[0] and row[2] == traj.lam[0]


def test_tube_csv_roundtrip(t135):
    run = tube_run(t135, 2, 20.0, 400.0, np.zeros(2), samples=32)
    buf = io.StringIO()
    tube_csv(run, buf, t135, 2)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0].split(",") == ["s", "t", "lam", "b1", "b2", "b3", "b4",
                                   "U1", "U2", "U3", "U4", "V1", "V2", "tube"]
    assert len(lines) == len(run.s) + 1
    row = [float(x) for x in lines[-1].split(",")]
    assert row[0] == run.s[-1] and row[-1] == run.tube[-1]


def test_shoot_result_serializes(t135):
    res = shoot_trapped(t135, 2, 20.0, 200.0)
    d = json.loads(json.dumps(res.to_dict(), sort_keys=True))
    assert d["trapped"] is True
    assert len(d["endpoint_exits"]) == 2
