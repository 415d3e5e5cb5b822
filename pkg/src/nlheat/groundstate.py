"""The radial ground state Q of  Lap(Q) + Q^p = 0, Q(0) = 1, Q'(0) = 0.

Above the Joseph-Lundgren exponent the solution is globally positive,
strictly below the singular steady state, and approaches it monotonically:

    Q(r) = sing_coeff * r^{-2/(p-1)} + a1 * r^{-tail_exp} + O(r^{-tail_exp - decay_gap})

with a nonzero correction coefficient a1.  This module integrates the ODE
once at high accuracy, samples it (values plus ODE-exact first and second
derivatives) on a composite grid, verifies the pointwise barrier bounds and
the potential asymptotics, and extracts the tail data by log-log fits.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import cache
from .constants import ModelInput, derive_constants
from .grids import RadialGrid, fit_powerlaw

R_SEED = 1e-3     # hand-off radius from the origin series to the integrator
RTOL = 1e-10
ATOL = 1e-12


class IntegratorFailure(RuntimeError):
    """The radial ODE solver did not reach the end of the grid."""


class NegativeQ(RuntimeError):
    """Q lost positivity: (d, p) outside the monotone supercritical range."""


@dataclass
class TailFit:
    """Log-log tail fit of a radial profile.

    e_hat / c_hat describe the leading power c_hat * r^e_hat on
    window = (r_lo, r_hi); sub_e / sub_c describe the correction after the
    prescribed leading part is removed (None when not requested), and
    sub_nonzero records whether the correction rose above the noise floor.
    """
    window: tuple
    e_hat: float
    c_hat: float
    resid: float
    sub_window: tuple = None
    sub_e: float = None
    sub_c: float = None
    sub_resid: float = None
    sub_nonzero: bool = False


@dataclass
class RadialProfile:
    """Nodal samples of a radial function with derivative samples.

    d1 is always populated (analytically, never by finite differences);
    d2 is populated when the generating equation provides it.
    """
    grid: RadialGrid
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray = None
    parity: int = 1            # (-1)^n of the harmonic sector
    meta: dict = field(default_factory=dict)
    tail: TailFit = None


@dataclass
class BoundReport:
    positive: bool             # 0 < Q everywhere
    below_singular: bool       # Q < sing_coeff r^{-2/(p-1)} at every r > 0
    potential_negative: bool   # V < 0 at every node
    hardy_margin: float        # inf_r [ r^2 V + (d-2)^2/4 ]  (> 0 expected)
    potential_tail: TailFit    # fit of r^2 V + p c_inf^{p-1}, exponent ~ -tail_gap
    ok: bool


class WindowTooShort(ValueError):
    """Fit window contains too few grid samples."""


class DegenerateFit(RuntimeError):
    """Requested tail correction is below the integrator noise floor."""


def series_q(d, p, r):
    """Origin series Q = 1 - r^2/(2d) + p r^4 / (8 d (d+2)) + O(r^6)."""
    r2 = r * r
    q = 1.0 - r2 / (2.0 * d) + p * r2 * r2 / (8.0 * d * (d + 2.0))
    dq = -r / d + p * r * r2 / (2.0 * d * (d + 2.0))
    return q, dq


class GroundState:
    """Bundles the constants table, the grid and the sampled profiles.

    Besides Q itself this carries `gap`, the barrier distance
    sing_coeff * r^{-2/(p-1)} - Q, integrated as its own ODE component: the
    naive subtraction loses all digits once the gap decays below the
    integrator noise on Q, while the difference equation keeps full relative
    accuracy out to the end of the grid.
    """

    def __init__(self, table, grid, q, gap, dense=None):
        self.table = table
        self.model = table.model
        self.grid = grid
        self.q = q
        self.gap = gap
        self.dense = dense
        d, p = table.model.d, table.model.p
        qv = q.values
        self.v = RadialProfile(
            grid=grid,
            values=-p * qv ** (p - 1),
            d1=-p * (p - 1) * qv ** (p - 2) * q.d1,
            parity=1,
            meta={"kind": "potential"},
        )

    def eval_q(self, r):
        """Q and Q' at arbitrary radii (needs the in-memory dense solution)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.dense is None:
            raise RuntimeError("dense evaluation unavailable on cache-loaded state")
        q = np.empty_like(r)
        dq = np.empty_like(r)
        small = r < R_SEED
        q[small], dq[small] = series_q(self.model.d, self.model.p, r[small])
        if np.any(~small):
            out = self.dense(r[~small])
            q[~small], dq[~small] = out[0], out[1]
        return q, dq


def _integrate(d, p, c_inf, scale_pow, r_end):
    # state (Q, Q', w, w'); w = c_inf r^{-2/(p-1)} - Q solves
    # Lap w = -((Q+w)^p - Q^p) = -w * sum_k (Q+w)^k Q^{p-1-k}
    # (exact integer-power algebra: no cancellation anywhere).
    def rhs(r, y):
        q, dq, w, dw = y
        s = q + w
        lin = sum(s ** k * q ** (p - 1 - k) for k in range(p))
        return (dq, -(d - 1) / r * dq - q ** p,
                dw, -(d - 1) / r * dw - w * lin)

    def hit_zero(r, y):
        return y[0]
    hit_zero.terminal = True
    hit_zero.direction = -1

    q0, dq0 = series_q(d, p, R_SEED)
    w0 = c_inf * R_SEED ** (-scale_pow) - q0
    dw0 = -scale_pow * c_inf * R_SEED ** (-scale_pow - 1.0) - dq0
    sol = solve_ivp(rhs, (R_SEED, r_end), [q0, dq0, w0, dw0], method="RK45",
                    rtol=RTOL, atol=ATOL, dense_output=True, events=hit_zero)
    if sol.t_events[0].size:
        raise NegativeQ(f"Q vanished at r = {sol.t_events[0][0]:.6g} (d={d}, p={p})")
    if not sol.success or sol.t[-1] < r_end:
        raise IntegratorFailure(sol.message)
    return sol


def compute_ground_state(model, grid=None, use_cache=True):
    """Integrate (or load) the ground state on a composite grid.

    The cached entry stores nodal Q and Q'; the second derivative is always
    recomputed from the ODE so it stays exactly consistent with the samples.
    """
    if not isinstance(model, ModelInput):
        raise TypeError("model must be a ModelInput")
    table = derive_constants(model)
    grid = grid or RadialGrid()
    d, p = model.d, model.p
    config = {"kind": "ground_state", "d": d, "p": p,
              "grid": [grid.core_end, grid.core_h, grid.r_max, grid.nodes_per_decade],
              "rtol": RTOL, "atol": ATOL, "r_seed": R_SEED}

    payload = cache.load("groundstate", config) if use_cache else None
    dense = None
    if payload is not None:
        qv, dq = payload["q"], payload["q_d1"]
        wv, dw = payload["gap"], payload["gap_d1"]
    else:
        sol = _integrate(d, p, table.sing_coeff, table.scale_pow, grid.r_max)
        r = grid.r
        out = sol.sol(r[1:])
        qv = np.concatenate([[1.0], out[0]])
        dq = np.concatenate([[0.0], out[1]])
        wv = np.concatenate([[np.inf], out[2]])   # barrier gap blows up at 0
        dw = np.concatenate([[-np.inf], out[3]])
        dense = sol.sol
        if use_cache:
            cache.save("groundstate", config,
                       {"q": qv, "q_d1": dq, "gap": wv, "gap_d1": dw})
    if np.any(qv <= 0.0):
        raise NegativeQ(f"nonpositive ground-state sample for d={d}, p={p}")

    d2 = np.empty_like(qv)
    d2[0] = -1.0 / d
    d2[1:] = -(d - 1) / grid.r[1:] * dq[1:] - qv[1:] ** p
    prof = RadialProfile(grid=grid, values=qv, d1=dq, d2=d2, parity=1,
                         meta={"kind": "ground_state", "d": d, "p": p})
    gap = RadialProfile(grid=grid, values=wv, d1=dw, parity=1,
                        meta={"kind": "barrier_gap"})
    return GroundState(table, grid, prof, gap, dense=dense)


def noise_floor(values, rtol=RTOL):
    """Crude absolute error estimate of the integrated samples."""
    return 100.0 * rtol * np.abs(values)


def fit_tail(gs, window=(1e2, 1e3), sub_window=(1e2, 10 ** 4.5)):
    """Tail fits of Q: leading power on `window`, correction on `sub_window`.

    The correction is fit to Q - sing_coeff r^{-2/(p-1)} with the exact
    closed-form coefficient; samples under the integrator noise floor are
    masked first (the correction decays three powers faster than Q, so the
    far tail of the nominal window carries no signal in double precision).
    Raises WindowTooShort / DegenerateFit accordingly.
    """
    grid, q, t = gs.grid, gs.q, gs.table
    if window[0] < grid.core_end or window[1] > grid.r_max:
        raise WindowTooShort(f"window {window} outside grid tail")
    e, c, resid = fit_powerlaw(grid.r, q.values, *window)
    if not math.isfinite(resid):
        raise WindowTooShort(f"too few samples in {window}")

    # correction = Q - sing_coeff r^{-2/(p-1)} = -gap, integrated stably
    corr = -gs.gap.values[1:]
    in_win = (grid.r[1:] >= sub_window[0]) & (grid.r[1:] <= sub_window[1])
    if in_win.sum() < 8:
        raise WindowTooShort(f"too few samples in {sub_window}")
    usable = np.abs(corr) > noise_floor(np.abs(corr) + RTOL * q.values[1:])
    m = in_win & usable
    if m.sum() < 8:
        raise DegenerateFit("tail correction below noise floor on the window")
    r_eff = (grid.r[1:][m][0], grid.r[1:][m][-1])
    se, sc, sresid = fit_powerlaw(grid.r[1:][m], corr[m], *r_eff)
    fit = TailFit(window=window, e_hat=e, c_hat=c, resid=resid,
                  sub_window=r_eff, sub_e=se, sub_c=sc, sub_resid=sresid,
                  sub_nonzero=abs(sc) > 0)
    gs.q.tail = fit
    return fit


def verify_bounds(gs, pot_window=(1e2, 1e3)):
    """Check the barrier bounds and the potential asymptotics.

    0 < Q < sing_coeff r^{-2/(p-1)},  -(d-2)^2/(4 r^2) < V < 0, and
    r^2 V + p sing_coeff^{p-1} ~ const * r^{-tail_gap}.
    """
    grid, t = gs.grid, gs.table
    r = grid.r[1:]
    qv = gs.q.values
    vv = gs.v.values
    positive = bool(np.all(qv > 0))
    below = bool(np.all(gs.gap.values[1:] > 0))
    vneg = bool(np.all(vv < 0))
    margin = float(np.min(r ** 2 * vv[1:]) + (t.model.d - 2) ** 2 / 4.0)

    resid_pot = r ** 2 * vv[1:] + t.model.p * t.sing_coeff_pow
    usable = np.abs(resid_pot) > t.model.p * t.sing_coeff_pow * 1e3 * RTOL
    m = (r >= pot_window[0]) & (r <= pot_window[1]) & usable
    if m.sum() < 8:
        raise WindowTooShort(f"potential-tail window {pot_window} too thin")
    w_eff = (r[m][0], r[m][-1])
    e, c, resid = fit_powerlaw(r[m], resid_pot[m], *w_eff)
    pot_fit = TailFit(window=w_eff, e_hat=e, c_hat=c, resid=resid)
    ok = positive and below and vneg and margin > 0
    return BoundReport(positive=positive, below_singular=below,
                       potential_negative=vneg, hardy_margin=margin,
                       potential_tail=pot_fit, ok=ok)


def write_csv(gs, path):
    """Persist (r, Q, Q', V) at full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "Q", "dQ", "V"])
        for r, q, dq, v in zip(gs.grid.r, gs.q.values, gs.q.d1, gs.v.values):
            w.writerow([repr(float(r)), repr(float(q)), repr(float(dq)),
                        repr(float(v))])
    return path
