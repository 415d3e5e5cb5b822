"""Finite-dimensional dynamics of the blow-up parameters.

Projecting the evolution of the approximate profile onto the ladder modes
closes into an ODE system for the scale lam, the center z and the ladder
coefficients b (renormalized time s):

    lam_s / lam = -b_1,
    z_s / lam   = -(degree-1 block of b_1),
    b_{i,s}     = -(2i - alpha_n) b_1 b_i + b_{i+1},   b_{L_n+1} = 0,

with alpha_n = mode_gap[n] and alpha = tail_gap on the radial sector.  The
system admits exact power-law solutions  b_i = c_i / s^i  (i <= ell) whose
scale obeys lam ~ s^{-ell/(2 ell - alpha)}, i.e. a blow-up rate strictly
between the self-similar one and the ones of the slower regimes.

This module evaluates those special solutions, integrates the system with
physical-time reconstruction t = int lam^2 ds, linearizes around the special
solution in the renormalized variables U_i = (b_i - c_i/s^i) s^i (radial
sector; general sectors carry the extra weight s^{(tail_exp -
mode_tail_exp[n])/2}), and realizes the trapped regime by shooting on the
unstable coordinates of the linearization.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .constants import BadEll, int_part
from .profile import ParamFamily

ETA_TILDE = 0.05      # tube decay exponent s^{-eta~} of the trapped regime
EPS_STABLE = 0.5      # slack factor on the stable-coordinate tube bounds
BRACKET_TOL = 1e-12
PARAM_CAP = 1e6       # |b| overflow guard of integrate_flow


class BlowupOfParameters(RuntimeError):
    """A ladder coefficient ran past the overflow guard during integration."""


class EigenSolverFailure(RuntimeError):
    """The dense eigensolver returned non-finite or non-real spectra."""


class NoSignChange(RuntimeError):
    """Bisection endpoints exit the tube on the same side: cannot bracket."""


class HorizonTooShort(ValueError):
    """Shooting horizon below the required multiple of the start time."""


# ---------------------------------------------------------------------------
# special power-law solutions


def special_coeffs(table, ell):
    """Coefficients c_i of the exact solution b_i = c_i/s^i, i = 1..ell.

    c_1 = ell/(2 ell - alpha), c_{i+1} = -alpha (ell - i) c_i / (2 ell - alpha);
    the recursion closes because c_{ell+1} carries the factor (ell - ell).
    """
    alpha = table.tail_gap
    gap = 2.0 * ell - alpha
    # the resonant case 2*ell = alpha only misses by float fuzz; snap it
    if gap <= 1e-9 * max(1.0, alpha):
        raise BadEll(f"need 2*ell > tail_gap: ell={ell}, tail_gap={alpha}")
    c = np.empty(ell)
    c[0] = ell / gap
    for i in range(1, ell):
        c[i] = -alpha * (ell - i) * c[i - 1] / gap
    return c


def special_solution(table, ell, s):
    """ParamFamily b(s) of the power-law solution at renormalized time s."""
    if not s > 0.0:
        raise ValueError(f"renormalized time must be positive, got {s}")
    depth = table.model.depth
    if not 1 <= ell <= depth:
        raise BadEll(f"need 1 <= ell <= depth: ell={ell}, depth={depth}")
    c = special_coeffs(table, ell)
    radial = np.zeros(depth)
    radial[:ell] = c / s ** np.arange(1.0, ell + 1.0)
    return ParamFamily(radial)


def special_blowup_time(table, ell, s0):
    """Physical blow-up time of the special solution started at lam(s0) = 1."""
    alpha = table.tail_gap
    return (2.0 * ell - alpha) * s0 / alpha


def special_scale_of_time(table, ell, s0, t):
    """Closed-form lam(t) of the special solution, lam = 1 at t = 0 (s = s0).

    lam(s) = (s/s0)^{-c_1} and t = int_{s0}^{s} lam^2 ds integrate to
    lam(t) = (1 - t/T)^{ell/alpha} with T = special_blowup_time.
    """
    T = special_blowup_time(table, ell, s0)
    return (1.0 - np.asarray(t, dtype=float) / T) ** (ell / table.tail_gap)


# ---------------------------------------------------------------------------
# the flow field and its integration


@dataclass
class FlowState:
    """One point of the parameter flow: time s, coefficients b, scale, center."""

    s: float
    b: ParamFamily
    lam: float = 1.0
    z: np.ndarray = None

    def __post_init__(self):
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float)
        if not self.lam > 0.0:
            raise ValueError(f"scale must be positive, got {self.lam}")

    def U(self, table, ell):
        """Renormalized radial perturbation U_i = (b_i - c_i/s^i) s^i."""
        c = np.zeros(self.b.depth)
        c[:ell] = special_coeffs(table, ell)
        pw = self.s ** np.arange(1.0, self.b.depth + 1.0)
        return self.b.radial * pw - c


@dataclass
class FlowRates:
    lam_s: float
    z_s: np.ndarray
    radial: np.ndarray
    translation: np.ndarray = None


def flow_rhs(state, table):
    """Exact right side of the parameter system at one state."""
    if not state.lam > 0.0:
        raise ValueError("scale must stay positive")
    b = state.b.radial
    alpha = table.tail_gap
    L = len(b)
    i = np.arange(1.0, L + 1.0)
    db = -(2.0 * i - alpha) * b[0] * b
    db[:-1] += b[1:]
    lam_s = -b[0] * state.lam
    tr = state.b.translation
    if tr is None:
        d = table.model.d
        z_s = np.zeros(d)
        dtr = None
    else:
        alpha1 = table.mode_gap[1]
        i1 = np.arange(1.0, tr.shape[1] + 1.0)
        dtr = -(2.0 * i1 - alpha1) * b[0] * tr
        dtr[:, :-1] += tr[:, 1:]
        z_s = -state.lam * tr[:, 0]
    return FlowRates(lam_s, z_s, db, dtr)


@dataclass
class FlowTrajectory:
    """Sampled solution of the parameter flow.

    s, t, lam are (N,); b is (N, L); z and translation are present only when
    the initial state carried a degree-1 block.  t is physical time with
    t(s0) = 0, reconstructed by the quadrature t = int lam^2 ds.
    """

    s: np.ndarray
    t: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    z: np.ndarray = None
    translation: np.ndarray = None
    meta: dict = field(default_factory=dict)


def integrate_flow(initial, s_end, table, samples=256, rtol=1e-11,
                   atol=1e-13, param_cap=PARAM_CAP):
    """Integrate the parameter flow from initial.s to s_end.

    Physical time is reconstructed alongside.  Raises BlowupOfParameters
    when any coefficient exceeds param_cap before s_end.
    """
    s0 = initial.s
    if not 0.0 < s0 < s_end:
        raise ValueError(f"need 0 < s0 < s_end, got ({s0}, {s_end})")
    b0 = initial.b.radial
    L = len(b0)
    tr0 = initial.b.translation
    d = table.model.d
    alpha = table.tail_gap
    iidx = np.arange(1.0, L + 1.0)
    with_tr = tr0 is not None
    if with_tr:
        alpha1 = table.mode_gap[1]
        L1 = tr0.shape[1]
        i1 = np.arange(1.0, L1 + 1.0)

    def pack(lam, t, b, z, tr):
        parts = [np.atleast_1d(lam), np.atleast_1d(t), b]
        if with_tr:
            parts += [z, tr.ravel()]
        return np.concatenate(parts)

    def rhs(s, y):
        lam, b = y[0], y[2:2 + L]
        db = -(2.0 * iidx - alpha) * b[0] * b
        db[:-1] += b[1:]
        out = np.empty_like(y)
        out[0] = -b[0] * lam
        out[1] = lam * lam
        out[2:2 + L] = db
        if with_tr:
            tr = y[2 + L + d:].reshape(d, L1)
            dtr = -(2.0 * i1 - alpha1) * b[0] * tr
            dtr[:, :-1] += tr[:, 1:]
            out[2 + L:2 + L + d] = -lam * tr[:, 0]
            out[2 + L + d:] = dtr.ravel()
        return out

    def overflow(s, y):
        return param_cap - np.max(np.abs(y[2:]))
    overflow.terminal = True

    z0 = np.zeros(d) if initial.z is None else initial.z
    y0 = pack(initial.lam, 0.0, b0, z0, tr0 if with_tr else None)
    s_eval = np.geomspace(s0, s_end, samples)
    sol = solve_ivp(rhs, (s0, s_end), y0, method="DOP853", rtol=rtol,
                    atol=atol, t_eval=s_eval, events=overflow)
    if sol.status == 1:
        s_stop = sol.t_events[0][0]
        raise BlowupOfParameters(
            f"|b| exceeded {param_cap:g} at s = {s_stop:.6g} "
            f"(started from s0 = {s0:g})")
    if sol.status != 0:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    y = sol.y
    traj = FlowTrajectory(
        s=sol.t, t=y[1], lam=y[0], b=y[2:2 + L].T,
        meta={"s0": s0, "s_end": s_end, "rtol": rtol, "atol": atol,
              "method": "DOP853", "param_cap": param_cap})
    if with_tr:
        traj.z = y[2 + L:2 + L + d].T
        traj.translation = y[2 + L + d:].T.reshape(-1, d, L1)
    elif initial.z is not None:
        traj.z = np.tile(initial.z, (len(sol.t), 1))
    return traj


def renormalized_path(traj, table, ell):
    """U_i(s) = (b_i - c_i/s^i) s^i along a radial trajectory, shape (N, L)."""
    L = traj.b.shape[1]
    c = np.zeros(L)
    c[:ell] = special_coeffs(table, ell)
    pw = traj.s[:, None] ** np.arange(1.0, L + 1.0)[None, :]
    return traj.b * pw - c[None, :]


# ---------------------------------------------------------------------------
# linearization around the special solution


def system_matrix(table, ell, L):
    """Constant matrix A of the renormalized linear flow U' = A U / s (radial).

    Row i (1-based): diagonal alpha (ell - i)/(2 ell - alpha), superdiagonal 1,
    and a first-column term -(2i - alpha) c_i for i <= ell.  The first row's
    two contributions overlap at (1, 1).
    """
    alpha = table.tail_gap
    gap = 2.0 * ell - alpha
    if gap <= 1e-9 * max(1.0, alpha):
        raise BadEll(f"need 2*ell > tail_gap: ell={ell}, tail_gap={alpha}")
    if L < ell:
        raise ValueError(f"need L >= ell, got L={L}, ell={ell}")
    c = special_coeffs(table, ell)
    A = np.zeros((L, L))
    for i in range(1, L + 1):
        A[i - 1, i - 1] = alpha * (ell - i) / gap
        if i < L:
            A[i - 1, i] = 1.0
        if i <= ell:
            A[i - 1, 0] += -(2.0 * i - alpha) * c[i - 1]
    return A


def mode_matrix(table, ell, n):
    """Triangular block of the degree-n sector linearization.

    Rows are indexed by i = 1..L_1 on the degree-1 sector (the i = 0 slot is
    the center z, handled separately) and by i = 0..L_n for n >= 2; the
    diagonal is alpha (cut_n - i)/(2 ell - alpha) with superdiagonal 1, where
    cut_n = ell - (tail_exp - mode_tail_exp[n])/2.
    """
    alpha = table.tail_gap
    gap = 2.0 * ell - alpha
    cut = ell - 0.5 * (table.tail_exp - table.mode_tail_exp[n])
    if n == 1:
        rows = np.arange(1, table.ladder_depth[1] + 1)
    else:
        rows = np.arange(0, table.ladder_depth[n] + 1)
    m = len(rows)
    B = np.zeros((m, m))
    for j, i in enumerate(rows):
        B[j, j] = alpha * (cut - i) / gap
        if j + 1 < m:
            B[j, j + 1] = 1.0
    return B


def closed_eigenvalues(table, ell, L):
    """Closed-form spectrum of the radial block in row order i = 1..L."""
    alpha = table.tail_gap
    gap = 2.0 * ell - alpha
    out = [-1.0]
    out += [i * alpha / gap for i in range(2, ell + 1)]
    out += [alpha * (ell - i) / gap for i in range(ell + 1, L + 1)]
    return np.array(out)


@dataclass
class LinearizationReport:
    """Spectral data of the linearized parameter flow around b = c_i/s^i.

    The radial block is the dense L x L matrix; higher sectors reduce to
    upper-bidiagonal blocks whose spectra are their diagonals.  P holds the
    eigenvectors of the top-left ell x ell radial block (columns sorted by
    increasing eigenvalue, first component normalized to 1); the coordinates
    V = P^{-1} (U_1..U_ell) diagonalize the leading radial dynamics.
    """

    ell: int
    L: int
    A: np.ndarray
    blocks: dict
    eig_numeric: np.ndarray
    eig_closed: np.ndarray
    eig_deviation: float
    top_eigvals: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    charpoly_numeric: np.ndarray
    charpoly_closed: np.ndarray
    charpoly_deviation: float
    block_eig_deviation: dict
    nonneg_counts: dict
    nonneg_expected: dict
    strict_counts: dict
    cuts: dict
    meta: dict = field(default_factory=dict)

    def to_top(self, U):
        """Map U (.., L) to the diagonalizing coordinates V (.., ell)."""
        U = np.asarray(U)
        return U[..., :self.ell] @ self.P_inv.T

    def from_top(self, V):
        return np.asarray(V) @ self.P.T

    def total_unstable(self, table):
        """Strictly-unstable direction count with harmonic multiplicities."""
        total = self.strict_counts[0]
        for n in sorted(self.blocks):
            total += table.harmonic_dim[n] * self.strict_counts[n]
        return total

    def to_dict(self):
        out = {
            "ell": self.ell, "L": self.L,
            "radial_matrix": self.A.tolist(),
            "eig_numeric": sorted(self.eig_numeric.tolist()),
            "eig_closed": sorted(self.eig_closed.tolist()),
            "eig_deviation": self.eig_deviation,
            "charpoly_numeric": self.charpoly_numeric.tolist(),
            "charpoly_closed": self.charpoly_closed.tolist(),
            "charpoly_deviation": self.charpoly_deviation,
            "P": self.P.tolist(),
        }
        for n in sorted(self.blocks):
            out[f"block_{n}"] = {
                "matrix": self.blocks[n].tolist(),
                "cut": self.cuts[n],
                "eig_deviation": self.block_eig_deviation[n],
                "nonneg": self.nonneg_counts[n],
                "nonneg_expected": self.nonneg_expected[n],
                "strict": self.strict_counts[n],
            }
        out["nonneg_radial"] = self.nonneg_counts[0]
        out["nonneg_radial_expected"] = self.nonneg_expected[0]
        return out


def _real_spectrum(M, what):
    try:
        vals, vecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverFailure(f"{what}: {exc}") from exc
    if not np.all(np.isfinite(vals.view(float))):
        raise EigenSolverFailure(f"{what}: non-finite eigenvalues")
    scale = max(1.0, np.max(np.abs(vals)))
    if np.max(np.abs(vals.imag)) > 1e-8 * scale:
        raise EigenSolverFailure(
            f"{what}: complex pair in an expected-real spectrum")
    return vals.real, vecs.real


def linearize(table, ell, L=None):
    """Spectral report of the linearization around the special solution."""
    if L is None:
        L = table.model.depth
    A = system_matrix(table, ell, L)
    eig_closed = closed_eigenvalues(table, ell, L)
    vals, _ = _real_spectrum(A, "radial block")
    eig_dev = float(np.max(np.abs(np.sort(vals) - np.sort(eig_closed))))

    top = A[:ell, :ell]
    tvals, tvecs = _real_spectrum(top, "top radial block")
    order = np.argsort(tvals)
    tvals = tvals[order]
    P = tvecs[:, order]
    # first components never vanish (the superdiagonal chain would collapse)
    P = P / P[0, :][None, :]
    if np.linalg.cond(P) > 1e12:
        raise EigenSolverFailure("top-block eigenvectors nearly dependent")
    P_inv = np.linalg.inv(P)

    cp_num = np.poly(top)
    cp_closed = np.poly(eig_closed[:ell])
    cp_dev = float(np.max(np.abs(cp_num - cp_closed)))

    tol = 1e-9
    nonneg = {0: int(np.sum(vals >= -tol))}
    strict = {0: int(np.sum(vals > tol))}
    expected = {0: ell - 1}
    blocks, cuts, block_dev = {}, {}, {}
    for n in range(1, table.mode_cutoff + 1):
        B = mode_matrix(table, ell, n)
        cut = ell - 0.5 * (table.tail_exp - table.mode_tail_exp[n])
        bvals, _ = _real_spectrum(B, f"degree-{n} block")
        blocks[n] = B
        cuts[n] = cut
        block_dev[n] = float(np.max(np.abs(
            np.sort(bvals) - np.sort(np.diag(B)))))
        nonneg[n] = int(np.sum(bvals >= -tol))
        strict[n] = int(np.sum(bvals > tol))
        if n == 1:
            expected[n] = max(int_part(cut), 0)
        else:
            expected[n] = max(int_part(cut) + 1, 0)

    return LinearizationReport(
        ell=ell, L=L, A=A, blocks=blocks,
        eig_numeric=vals, eig_closed=eig_closed, eig_deviation=eig_dev,
        top_eigvals=tvals, P=P, P_inv=P_inv,
        charpoly_numeric=cp_num, charpoly_closed=cp_closed,
        charpoly_deviation=cp_dev,
        block_eig_deviation=block_dev,
        nonneg_counts=nonneg, nonneg_expected=expected,
        strict_counts=strict, cuts=cuts,
        meta={"d": table.model.d, "p": table.model.p})


# ---------------------------------------------------------------------------
# trapped-regime shooting


@dataclass
class TubeRun:
    """One renormalized trajectory against the trapped-regime tube.

    Arrays are sampled along tau = ln s; V = P^{-1} U on the first ell
    coordinates.  When the run exits, binding names the bound that broke
    ("V2", "U3", ...), s_exit the exit time and exit_sign the sign of the
    binding coordinate there; trapped runs carry s_exit = None.
    """

    trapped: bool
    s_exit: float
    binding: str
    exit_sign: float
    v_init: np.ndarray
    u_tail_init: np.ndarray
    s: np.ndarray
    t: np.ndarray
    lam: np.ndarray
    U: np.ndarray
    V: np.ndarray
    tube: np.ndarray
    exit_state: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def b_path(self, table, ell):
        """Reassembled coefficients b_i = (c_i + U_i)/s^i along the run."""
        L = self.U.shape[1]
        c = np.zeros(L)
        c[:ell] = special_coeffs(table, ell)
        pw = self.s[:, None] ** np.arange(1.0, L + 1.0)[None, :]
        return (c[None, :] + self.U) / pw


class _TubeProblem:
    """Precomputed data shared by every trajectory of one shooting setup."""

    def __init__(self, table, ell, eta_tilde, eps_stable, report=None):
        if report is None:
            report = linearize(table, ell, table.model.depth)
        self.table = table
        self.ell = ell
        self.L = report.L
        self.report = report
        self.A = report.A
        self.P = report.P
        self.P_inv = report.P_inv
        self.eta = eta_tilde
        self.eps = eps_stable
        alpha = table.tail_gap
        self.c1 = ell / (2.0 * ell - alpha)
        self.quad = 2.0 * np.arange(1.0, self.L + 1.0) - alpha
        self.labels = ([f"V{j}" for j in range(1, ell + 1)] +
                       [f"U{i}" for i in range(ell + 1, self.L + 1)])

    def coord(self, U, j):
        """Monitored coordinate number j (0-based over labels)."""
        if j < self.ell:
            return self.P_inv[j] @ U[:self.ell]
        return U[j]

    def bound(self, j, tau):
        base = math.exp(-self.eta * tau)
        return base if j < self.ell else self.eps * base


def tube_run(table, ell, s0, s_horizon, v_init, u_tail_init=None,
             eta_tilde=ETA_TILDE, eps_stable=EPS_STABLE, linear_only=False,
             lam0=1.0, rtol=1e-10, atol=1e-14, samples=400, problem=None):
    """Integrate the renormalized perturbation and watch the tube bounds.

    v_init gives (V_1 .. V_ell) at s0 and u_tail_init the remaining stable
    coordinates (U_{ell+1} .. U_L).  The run terminates at the first bound
    crossing; tube holds the V-bound s^{-eta_tilde} along the samples.
    """
    if problem is None:
        problem = _TubeProblem(table, ell, eta_tilde, eps_stable)
    L, P = problem.L, problem.P
    v_init = np.atleast_1d(np.asarray(v_init, dtype=float))
    if len(v_init) != ell:
        raise ValueError(f"v_init must have length ell={ell}")
    if u_tail_init is None:
        u_tail_init = np.zeros(L - ell)
    u_tail_init = np.atleast_1d(np.asarray(u_tail_init, dtype=float))
    if len(u_tail_init) != L - ell:
        raise ValueError(f"u_tail_init must have length {L - ell}")
    U0 = np.concatenate([P @ v_init, u_tail_init])
    tau0, tau1 = math.log(s0), math.log(s_horizon)

    meta = {"s0": s0, "s_horizon": s_horizon, "eta_tilde": problem.eta,
            "eps_stable": problem.eps, "ell": ell, "L": L,
            "linear_only": linear_only, "lam0": lam0}

    def finish(taus, ys, exited, tau_exit, j_exit):
        s = np.exp(taus)
        U = ys[:, :L]
        V = U[:, :ell] @ problem.P_inv.T
        run = TubeRun(
            trapped=not exited,
            s_exit=math.exp(tau_exit) if exited else None,
            binding=problem.labels[j_exit] if exited else None,
            exit_sign=None, v_init=v_init, u_tail_init=u_tail_init,
            s=s, t=ys[:, L + 1], lam=lam0 * np.exp(ys[:, L]),
            U=U, V=V, tube=np.exp(-problem.eta * taus),
            exit_state=U[-1] if exited else None, meta=meta)
        if exited:
            run.exit_sign = math.copysign(
                1.0, problem.coord(ys[-1, :L], j_exit))
        return run

    # bounds already touched at the start: classify without integrating
    g0 = [abs(problem.coord(U0, j)) - problem.bound(j, tau0)
          for j in range(L)]
    jworst = int(np.argmax(g0))
    if g0[jworst] >= -1e-12:
        y0 = np.concatenate([U0, [0.0, 0.0]])
        return finish(np.array([tau0]), y0[None, :], True, tau0, jworst)

    A, quad, c1 = problem.A, problem.quad, problem.c1

    def rhs(tau, y):
        U = y[:L]
        dU = A @ U
        if not linear_only:
            dU -= quad * (U[0] * U)
        lam2 = math.exp(2.0 * y[L])
        return np.concatenate([dU, [-(c1 + U[0]), lam2 * math.exp(tau)]])

    events = []
    for j in range(L):
        def ev(tau, y, j=j):
            return abs(problem.coord(y[:L], j)) - problem.bound(j, tau)
        ev.terminal = True
        ev.direction = 1
        events.append(ev)

    y0 = np.concatenate([U0, [0.0, 0.0]])
    sol = solve_ivp(rhs, (tau0, tau1), y0, method="DOP853", rtol=rtol,
                    atol=atol, t_eval=np.linspace(tau0, tau1, samples),
                    events=events, max_step=0.1)
    if sol.status == -1:
        raise RuntimeError(f"tube integration failed: {sol.message}")
    taus, ys = sol.t, sol.y.T
    if sol.status == 1:
        fired = [(te[0], j) for j, te in enumerate(sol.t_events) if len(te)]
        tau_exit, j_exit = min(fired)
        y_exit = sol.y_events[j_exit][0]
        if len(taus) == 0 or taus[-1] < tau_exit:
            taus = np.append(taus, tau_exit)
            ys = np.vstack([ys, y_exit]) if len(taus) > 1 else y_exit[None, :]
        return finish(taus, ys, True, tau_exit, j_exit)
    return finish(taus, ys, False, None, None)


@dataclass
class ShootResult:
    """Outcome of the trapped-regime shooting.

    v_unstable holds the found initial values (V_2 .. V_ell) at s0;
    bracket is the final (lo, hi) of the outermost bisection and width its
    length; certificate is the surviving trajectory, endpoints the two
    initial bracket runs of the outermost level (their exits demonstrate
    the sign structure), and runs the total trajectory count.
    """

    v_unstable: np.ndarray
    bracket: tuple
    width: float
    certificate: TubeRun
    endpoints: tuple
    runs: int
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        cert = self.certificate
        return {
            "v_unstable": self.v_unstable.tolist(),
            "bracket": list(self.bracket),
            "width": self.width,
            "runs": self.runs,
            "trapped": bool(cert.trapped),
            "s_final": float(cert.s[-1]),
            "endpoint_exits": [
                {"s_exit": r.s_exit, "binding": r.binding,
                 "sign": r.exit_sign} for r in self.endpoints],
            **{k: v for k, v in self.meta.items()},
        }


def shoot_trapped(table, ell, s0, s_horizon, stable_init=None,
                  eta_tilde=ETA_TILDE, eps_stable=EPS_STABLE,
                  bracket_tol=BRACKET_TOL, max_iter=80, probe_factor=20.0,
                  rtol=1e-10, atol=1e-14, samples=400):
    """Bisect the unstable coordinates until the trajectory stays in the tube.

    stable_init packs the free stable coordinates [V_1, U_{ell+1} .. U_L] at
    s0 (zeros when omitted).  One 1-D bisection per unstable coordinate,
    outermost on the fastest mode V_ell, each over [-s0^-eta, s0^-eta].
    Raises NoSignChange when the endpoint exits cannot bracket a sign flip
    and HorizonTooShort when s_horizon < 10 s0.

    With a single unstable pair (ell = 2) the sign test is clean.  For
    ell >= 3 the nested 1-D sweeps are best-effort: the quadratic coupling
    feeds V_j**2 content into faster modes at twice the V_j rate, so once the
    inner bracket rails against a foreign exit the outer sign can be polluted
    near the trapped manifold.  In that regime the chase loop reports
    NoSignChange rather than guessing.
    """
    if s_horizon < 10.0 * s0:
        raise HorizonTooShort(
            f"need s_horizon >= 10*s0 = {10.0 * s0:g}, got {s_horizon:g}")
    if ell < 2:
        raise ValueError("no unstable coordinate to shoot below ell = 2")
    problem = _TubeProblem(table, ell, eta_tilde, eps_stable)
    L = problem.L
    if stable_init is None:
        stable_init = np.zeros(1 + L - ell)
    stable_init = np.asarray(stable_init, dtype=float)
    if len(stable_init) != 1 + L - ell:
        raise ValueError(
            f"stable_init must pack [V_1, U_{ell + 1}..U_{L}]: "
            f"length {1 + L - ell}")
    v1, u_tail = stable_init[0], stable_init[1:]
    B0 = s0 ** (-eta_tilde)
    counter = {"runs": 0}

    def run_at(xs, horizon=s_horizon):
        v = np.empty(ell)
        v[0] = v1
        for j in range(2, ell + 1):
            v[j - 1] = xs[j]
        counter["runs"] += 1
        return tube_run(table, ell, s0, horizon, v, u_tail,
                        linear_only=False, rtol=rtol, atol=atol,
                        samples=samples, problem=problem)

    def classify(run, j, xs):
        # sign for the level-j bisection; 0 = numerically on the manifold
        if run.trapped:
            probe = run_at(xs, horizon=probe_factor * s_horizon)
            if not probe.trapped and probe.binding == f"V{j}":
                return probe.exit_sign
            return 0.0
        if run.binding == f"V{j}":
            return run.exit_sign
        return None

    def solve(j, outer):
        # bisection for V_j with coordinates above j fixed by `outer`;
        # returns (values for levels <= j, run, (lo, hi), endpoints, s_lo)
        def feval(x):
            xs = dict(outer)
            xs[j] = x
            if j == 2:
                run = run_at(xs)
                return xs, run
            xs_inner, run, _, _, _ = solve(j - 1, xs)
            return xs_inner, run

        lo, hi = -B0, B0
        xs_lo, run_lo = feval(lo)
        s_lo = classify(run_lo, j, xs_lo)
        xs_hi, run_hi = feval(hi)
        s_hi = classify(run_hi, j, xs_hi)
        ends = (run_lo, run_hi)
        if s_lo == 0.0:
            return xs_lo, run_lo, (lo, lo), ends, None
        if s_hi == 0.0:
            return xs_hi, run_hi, (hi, hi), ends, None
        if s_lo is None or s_hi is None or s_lo == s_hi:
            raise NoSignChange(
                f"level V{j}: endpoint exits ({run_lo.binding}, "
                f"sign {s_lo}) / ({run_hi.binding}, sign {s_hi}) "
                "do not bracket the trapped set")
        xs_mid, run_mid = xs_lo, run_lo
        for _ in range(max_iter):
            if hi - lo <= bracket_tol:
                break
            x = 0.5 * (lo + hi)
            xs_mid, run_mid = feval(x)
            sm = classify(run_mid, j, xs_mid)
            if sm == 0.0:
                lo = x - 0.5 * bracket_tol
                hi = x + 0.5 * bracket_tol
                break
            if sm is None:
                # a coordinate of an outer level binds before V_j can be
                # read off: this level cannot refine further, hand the run
                # up for the outer bisection to classify
                break
            if sm == s_lo:
                lo = x
            else:
                hi = x
        x = 0.5 * (lo + hi)
        xs_mid, run_mid = feval(x)
        return xs_mid, run_mid, (lo, hi), ends, s_lo

    xs, run, bracket, ends, s_low = solve(ell, {})
    # chase the certificate: keep halving until the midpoint itself survives
    lo, hi = bracket
    extra = 0
    while not run.trapped and s_low is not None and extra < max_iter:
        sm = classify(run, ell, xs)
        if sm is None or sm == 0.0:
            break
        if sm == s_low:
            lo = xs[ell]
        else:
            hi = xs[ell]
        x_mid = 0.5 * (lo + hi)
        if ell == 2:
            xs = {2: x_mid}
            run = run_at(xs)
        else:
            xs, run, _, _, _ = solve(ell - 1, {ell: x_mid})
        extra += 1
    if not run.trapped:
        raise NoSignChange(
            "certificate trajectory still exits after bracket refinement; "
            f"last exit at s = {run.s_exit:.6g} via {run.binding}")
    v_unstable = np.array([xs[j] for j in range(2, ell + 1)])
    return ShootResult(
        v_unstable=v_unstable, bracket=(lo, hi), width=hi - lo,
        certificate=run, endpoints=ends, runs=counter["runs"],
        meta={"s0": s0, "s_horizon": s_horizon, "eta_tilde": eta_tilde,
              "eps_stable": eps_stable, "stable_init": stable_init.tolist(),
              "bracket_tol": bracket_tol})


# ---------------------------------------------------------------------------
# exports


def flow_csv(traj, fileobj, table=None, ell=None, report=None):
    """Write a flow trajectory as CSV; U/V columns appear when ell is given."""
    L = traj.b.shape[1]
    header = ["s", "t", "lam"] + [f"b{i}" for i in range(1, L + 1)]
    U = V = None
    if table is not None and ell is not None:
        U = renormalized_path(traj, table, ell)
        header += [f"U{i}" for i in range(1, L + 1)]
        if report is not None:
            V = U[:, :ell] @ report.P_inv.T
            header += [f"V{i}" for i in range(1, ell + 1)]
    w = csv.writer(fileobj)
    w.writerow(header)
    for k in range(len(traj.s)):
        # repr of the builtin float round-trips exactly
        row = [traj.s[k], traj.t[k], traj.lam[k], *traj.b[k]]
        if U is not None:
            row += list(U[k])
        if V is not None:
            row += list(V[k])
        w.writerow([repr(float(x)) for x in row])


def tube_csv(run, fileobj, table, ell):
    """Write a tube run as CSV with reassembled coefficients."""
    L = run.U.shape[1]
    b = run.b_path(table, ell)
    header = (["s", "t", "lam"] + [f"b{i}" for i in range(1, L + 1)] +
              [f"U{i}" for i in range(1, L + 1)] +
              [f"V{i}" for i in range(1, ell + 1)] + ["tube"])
    w = csv.writer(fileobj)
    w.writerow(header)
    for k in range(len(run.s)):
        row = [run.s[k], run.t[k], run.lam[k], *b[k], *run.U[k],
               *run.V[k], run.tube[k]]
        w.writerow([repr(float(x)) for x in row])
