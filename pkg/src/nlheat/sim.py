"""Radial reaction-diffusion integrator with blow-up classification.

Integrates u_t = u_rr + (d-1)/r u_r + |u|^(p-1) u on a ball with a Dirichlet
outer boundary, tracks the concentration scale, and fits the blow-up rate
against a swept candidate blow-up time.  Two frames are provided:

* the physical frame, with Strang splitting (exact pointwise reaction flow
  around a Crank-Nicolson diffusion step) and an adaptive step bounded by
  both a parabolic and a reaction budget;
* a self-similar frame for fast-rate runs, where the drift c(tau) Lam v is
  chosen each step so the origin value stays put and the scale follows
  dlam/dtau = -c lam.  The physical frame alone resolves at most a decade
  or two of (T - t); the co-moving frame trades that limit for a gauge.

Near blow-up the step drops below the spacing of representable times, so t
is carried as an unevaluated double-double pair and the classifier works
with (T - t) assembled from the pair differences, never from rounded t.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.optimize import brentq
from scipy.sparse import lil_matrix

from .grids import fornberg_weights, smooth_cutoff


class Overflow(Exception):
    """Amplitude reached the stop level; terminal, not a failure."""


class StepUnderflow(Exception):
    """The stable step fell below the resolvable time increment."""


class RootNotBracketed(Exception):
    """A sign-change search saw the same sign at both ends."""


class InsufficientDecades(Exception):
    """Less than one decade of (T - t) resolved in the fit window."""


class NoiseDominated(Exception):
    """Stencil noise exceeds 10 percent of a requested seminorm."""


# ----------------------------------------------------------- time as a pair

def time_add(hi, lo, x):
    """Add x to the double-double pair (hi, lo), renormalized."""
    s = hi + x
    b = s - hi
    lo = lo + ((hi - (s - b)) + (x - b))
    hi = s + lo
    lo = lo - (hi - s)
    return hi, lo


# ------------------------------------------------------- uniform radial ops

@dataclass
class UniformOps:
    """4th-order stencil package on r_j = j h, Dirichlet node eliminated."""

    r: np.ndarray            # interior nodes 0..N-1 (node N is the boundary)
    h: float
    d: int
    lap: object              # csr, interior part of the Laplacian
    lap_bands: np.ndarray    # same operator in (3, 2)-banded storage
    lap_bc: np.ndarray       # column multiplying the boundary value
    d1: object
    d1_bc: np.ndarray
    weight: np.ndarray       # trapezoid r^{d-1} dr over the interior
    gain: float              # max abs row sum of lap, for noise estimates


def uniform_ops(radius, nodes, d):
    """Build the banded Laplacian and first derivative on a uniform grid.

    Interior rows use the central 5-point stencils; the first interior row
    folds the ghost node across the origin by parity, the last one falls
    back to a shifted Fornberg stencil so nothing reads past the boundary.
    The origin row uses the even-extension limit lap u(0) = d u''(0).
    """
    n = int(nodes)
    if n < 16:
        raise ValueError("need at least 16 nodes")
    h = radius / n
    r = h * np.arange(n)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)

    lap = lil_matrix((n, n))
    d1m = lil_matrix((n, n))
    lap_bc = np.zeros(n)
    d1_bc = np.zeros(n)

    # origin: lap u(0) = 2 d a with u = u0 + a r^2 + O(r^4)
    lap[0, 0] = -30.0 * d / (12.0 * h * h)
    lap[0, 1] = 32.0 * d / (12.0 * h * h)
    lap[0, 2] = -2.0 * d / (12.0 * h * h)

    # row 1: central stencil with the ghost folded back (u even)
    w = c2 + (d - 1.0) / r[1] * c1
    lap[1, 1] = w[2] + w[0]
    lap[1, 0] = w[1]
    lap[1, 2] = w[3]
    lap[1, 3] = w[4]
    d1m[1, 1] = c1[2] + c1[0]
    d1m[1, 0] = c1[1]
    d1m[1, 2] = c1[3]
    d1m[1, 3] = c1[4]

    for j in range(2, n - 1):
        w = c2 + (d - 1.0) / r[j] * c1
        for k in range(5):
            col = j - 2 + k
            if col == n:
                lap_bc[j] = w[k]
                d1_bc[j] = c1[k]
            else:
                lap[j, col] = w[k]
                d1m[j, col] = c1[k]

    # last interior row: shifted stencil on the trailing five nodes
    xs = h * np.arange(n - 4, n + 1)
    fw = fornberg_weights(r[n - 1], xs, 2)
    w = fw[2] + (d - 1.0) / r[n - 1] * fw[1]
    for k in range(5):
        col = n - 4 + k
        if col == n:
            lap_bc[n - 1] = w[k]
            d1_bc[n - 1] = fw[1][k]
        else:
            lap[n - 1, col] = w[k]
            d1m[n - 1, col] = fw[1][k]

    lap = lap.tocsr()
    d1m = d1m.tocsr()

    bands = np.zeros((6, n))
    coo = lap.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        bands[2 + i - j, j] = v

    weight = h * r ** (d - 1)
    weight[0] *= 0.5                      # vanishes anyway for d > 1
    gain = float(np.max(np.abs(lap).sum(axis=1)))
    return UniformOps(r=r, h=h, d=d, lap=lap, lap_bands=bands,
                      lap_bc=lap_bc, d1=d1m, d1_bc=d1_bc,
                      weight=weight, gain=gain)


_OPS_CACHE = {}


def _ops(radius, nodes, d):
    key = (float(radius), int(nodes), int(d))
    if key not in _OPS_CACHE:
        _OPS_CACHE[key] = uniform_ops(*key)
    return _OPS_CACHE[key]


def _cn_step(u, dt, ops, bc_value=0.0):
    """One Crank-Nicolson diffusion step with a frozen boundary value."""
    rhs = u + 0.5 * dt * (ops.lap @ u) + dt * bc_value * ops.lap_bc
    ab = -0.5 * dt * ops.lap_bands
    ab[2, :] += 1.0
    return solve_banded((3, 2), ab, rhs, overwrite_ab=True,
                        overwrite_b=True, check_finite=False)


# ------------------------------------------------------------ configuration

@dataclass
class BumpData:
    amplitude: float
    width: float = 1.0


@dataclass
class ProfileData:
    s0: float
    ell: int = 2
    shoot: float = 0.0


@dataclass
class GroundStateData:
    """A cut rescaled ground state times an amplitude factor."""

    amplitude: float = 1.0
    lam: float = 1.0
    cut: float = None


@dataclass
class SimConfig:
    table: object
    radius: float = 10.0
    nodes: int = 2000
    safety_r: float = 0.25
    safety_f: float = 0.01
    u_stop: float = 1e8
    t_end: float = None
    init: object = None
    diffusion: bool = True
    reaction: bool = True
    decay_floor: float = None
    record_every: int = 1

    def __post_init__(self):
        if self.radius < 7.0:
            raise ValueError("domain radius must be at least 7")
        if not 0.0 < self.safety_f < 0.2:
            raise ValueError("reaction safety factor out of range")
        if self.safety_r <= 0.0:
            raise ValueError("parabolic safety factor must be positive")

    def ops(self):
        return _ops(self.radius, self.nodes, self.table.model.d)


@dataclass
class SimState:
    u: np.ndarray
    t_hi: float = 0.0
    t_lo: float = 0.0
    dt: float = 0.0
    steps: int = 0
    trace: list = field(default_factory=list)

    @property
    def t(self):
        return self.t_hi + self.t_lo

    def trace_array(self):
        return np.asarray(self.trace, dtype=float)


def _record(state, config):
    sup = float(np.max(np.abs(state.u)))
    u0 = float(state.u[0])
    p = config.table.model.p
    lam = u0 ** (-(p - 1) / 2.0) if u0 > 0.0 else np.nan
    state.trace.append((state.t_hi, state.t_lo, sup, lam, state.dt))
    return sup


def initial_state(config, gs=None, ladder=None, correction=None):
    """Sample the configured initial data onto the simulation grid."""
    ops = config.ops()
    init = config.init
    if init is None:
        u = np.zeros_like(ops.r)
    elif isinstance(init, BumpData):
        u = init.amplitude * np.exp(-((ops.r / init.width) ** 2))
    elif isinstance(init, GroundStateData):
        if gs is None:
            raise ValueError("ground-state initial data needs the ground "
                             "state")
        sp = config.table.scale_pow
        spline = CubicSpline(gs.grid.r, gs.q.values)
        u = init.amplitude * init.lam ** (-sp) * spline(ops.r / init.lam)
        if init.cut is not None:
            u *= smooth_cutoff(ops.r, init.cut)
    elif isinstance(init, ProfileData):
        if gs is None or ladder is None:
            raise ValueError("profile initial data needs the ground state "
                             "and the ladder")
        table = config.table
        lam0 = init.s0 ** (-init.ell / (2 * init.ell - table.tail_gap))
        src = _seed_profile(gs, ladder, correction, table, init.s0,
                            init.ell, init.shoot)
        sp = table.scale_pow
        spline = CubicSpline(gs.grid.r, src)
        y = ops.r / lam0
        if y[-1] > gs.grid.r[-1]:
            raise ValueError("profile data does not cover the domain at "
                             "this initial scale")
        u = lam0 ** (-sp) * spline(y)
    else:
        raise TypeError("unknown initial-data descriptor %r" % (init,))
    state = SimState(u=u)
    _record(state, config)
    return state


def _seed_profile(gs, ladder, correction, table, s0, ell, shoot):
    """Localized approximate profile plus a one-parameter unstable nudge."""
    from .flow import linearize, special_solution
    from .profile import assemble, localize

    fam = special_solution(table, ell, s0)
    prof = assemble(gs, ladder, fam, correction=correction,
                    with_s2=correction is not None)
    localize(prof, table)
    vals = prof.localized.copy()
    if shoot != 0.0:
        rep = linearize(table, ell)
        k = int(np.argmax(np.real(rep.top_eigvals)))
        w = np.real(rep.P[:, k])
        w = w / w[0]
        chi = smooth_cutoff(gs.grid.r, prof.cut_scale)
        bump = np.zeros_like(vals)
        for i in range(1, ell + 1):
            bump += w[i - 1] * ladder.profiles[i].values / s0 ** i
        vals += shoot * chi * bump
    return vals


# -------------------------------------------------------------- integration

def _react_exact(u, dt, p):
    """Exact flow of u' = |u|^(p-1) u over dt, pointwise."""
    z = 1.0 - (p - 1.0) * dt * u ** (p - 1)
    if np.min(z) <= 0.0:
        raise Overflow("amplitude leaves the representable range inside "
                       "one reaction substep")
    return u * z ** (-1.0 / (p - 1.0))


def advance(state, config):
    """One adaptive Strang step; raises Overflow when u_stop is reached."""
    ops = config.ops()
    p = config.table.model.p
    u = state.u
    sup = float(np.max(np.abs(u)))
    if not math.isfinite(sup):
        raise Overflow("non-finite amplitude")
    if sup >= config.u_stop:
        raise Overflow("amplitude reached the stop level %.3g"
                       % config.u_stop)

    dt = config.safety_r * ops.h ** 2
    if config.reaction and sup > 0.0:
        dt = min(dt, config.safety_f / sup ** (p - 1))
    if dt < 1e-33 * max(abs(state.t), 1e-30):
        raise StepUnderflow("dt = %.3g is below the resolvable increment "
                            "at t = %.6g" % (dt, state.t))
    if config.t_end is not None:
        remaining = config.t_end - state.t
        if remaining <= 0.0:
            return state        # horizon reached; drivers stop here
        dt = min(dt, remaining)

    if config.reaction:
        u = _react_exact(u, 0.5 * dt, p)
    if config.diffusion:
        u = _cn_step(u, dt, ops)
    if config.reaction:
        u = _react_exact(u, 0.5 * dt, p)
    if not np.all(np.isfinite(u)):
        raise Overflow("non-finite amplitude after a step")

    state.u = u
    state.t_hi, state.t_lo = time_add(state.t_hi, state.t_lo, dt)
    state.dt = dt
    state.steps += 1
    if state.steps % config.record_every == 0:
        _record(state, config)
    return state


@dataclass
class SimReport:
    status: str
    state: SimState
    trace: np.ndarray
    config: SimConfig


def run_sim(config, gs=None, ladder=None, correction=None,
            max_steps=2_000_000):
    """Drive advance() until blow-up, decay, or the horizon."""
    state = initial_state(config, gs=gs, ladder=ladder, correction=correction)
    status = "horizon"
    while state.steps < max_steps:
        try:
            advance(state, config)
        except Overflow:
            status = "blowup"
            break
        sup = state.trace[-1][2]
        if config.decay_floor is not None and sup <= config.decay_floor:
            status = "decayed"
            break
        if config.t_end is not None and state.t >= config.t_end:
            break
    return SimReport(status=status, state=state,
                     trace=state.trace_array(), config=config)


# --------------------------------------------------------- scale extraction

def modulation_pack(config, gs, ladder, m_scale=3.0):
    """Grid samples of the pieces the modulation root needs."""
    ops = config.ops()
    q = CubicSpline(gs.grid.r, gs.q.values)(ops.r)
    t1 = CubicSpline(gs.grid.r, ladder.profiles[1].values)(ops.r)
    chi = smooth_cutoff(ops.r, m_scale)
    p = config.table.model.p
    phi = chi * t1
    g = -(ops.lap @ phi) - p * q ** (p - 1) * phi
    sel = ops.r <= 2.0 * m_scale
    return {"q": q, "g": g, "sel": sel, "m_scale": m_scale}


@dataclass
class ScaleEstimate:
    value: float
    mode: str
    flagged: bool = False


def extract_scale(state, config, pack=None, mode="proxy"):
    """Concentration scale from the origin value or a localized pairing.

    The proxy uses the origin normalization of the ground state, so it is
    exact on pure rescalings.  The modulation mode solves a weighted
    orthogonality condition by bracketed root finding and falls back to
    the proxy (flagged) when the bracket shows no sign change.
    """
    p = config.table.model.p
    sp = config.table.scale_pow
    u0 = float(state.u[0])
    if u0 <= 0.0:
        raise ValueError("origin value must be positive to extract a scale")
    proxy = u0 ** (-(p - 1) / 2.0)
    if mode == "proxy":
        return ScaleEstimate(value=proxy, mode="proxy")
    if pack is None:
        raise ValueError("modulation mode needs a precomputed pack")

    ops = config.ops()
    sel, g, q = pack["sel"], pack["g"], pack["q"]
    w = ops.weight[sel] * g[sel]
    y = ops.r[sel]
    spline = CubicSpline(ops.r, state.u)

    def gap(lam):
        ry = lam * y
        vals = lam ** sp * spline(ry)
        return float(np.sum(w * (vals - q[sel])))

    # the weight annihilates the pure scaling direction, so on data close
    # to a rescaled ground state the pairing has a double root: when no
    # sign change shows up, bracket the stationarity condition instead
    step = 1e-4 * proxy

    def dgap(lam):
        return (gap(lam + step) - gap(lam - step)) / (2.0 * step)

    lo, hi = 0.6 * proxy, 1.7 * proxy
    for fn in (gap, dgap):
        if fn(lo) * fn(hi) <= 0.0:
            lam = brentq(fn, lo, hi, xtol=1e-12 * proxy, rtol=1e-12)
            return ScaleEstimate(value=float(lam), mode="modulation")
    return ScaleEstimate(value=proxy, mode="proxy", flagged=True)


# ------------------------------------------------------------ rate fitting

def type_one_rate(p):
    """Sup-norm prefactor of the constant-in-space blow-up."""
    return (p - 1.0) ** (-1.0 / (p - 1.0))


@dataclass
class BlowupReport:
    blowup_class: str
    T_hat: float = np.nan
    T_ci: float = np.nan
    rate_exponent: float = np.nan
    lam_exponent: float = np.nan
    kappa_hat: float = np.nan
    kappa_target: float = np.nan
    decades: float = np.nan
    window: int = 0
    ssr: float = np.nan
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        out = {k: getattr(self, k) for k in
               ("blowup_class", "T_hat", "T_ci", "rate_exponent",
                "lam_exponent", "kappa_hat", "kappa_target", "decades",
                "window", "ssr")}
        out["meta"] = dict(self.meta)
        return out


def _sweep_T(tau_base, logsup, deltas):
    """SSR of the log-log line fit for each candidate T offset.

    Offsets so large that log(tau + delta) goes flat would fit anything
    with a singular line; they are scored unusable, not zero.
    """
    ssr = np.full(len(deltas), np.inf)
    for k, dl in enumerate(deltas):
        x = np.log(tau_base + dl)
        if np.ptp(x) < 1.0:
            continue
        res = np.polyfit(x, logsup, 1, full=True)[1]
        ssr[k] = res[0] if len(res) else np.inf
    return ssr


def classify_blowup(trace, table, status=None, window=0.3,
                    kappa_tol=0.05, lam_tol=0.15, ells=(2, 3),
                    ssr_band=2.0):
    """Fit T and the rate exponents from a trace, then label the run.

    trace columns: t_hi, t_lo, sup, lam_hat, dt.  T is swept past the last
    sample; (T - t_i) is assembled from the time pairs so the deep samples
    keep their spacing.  Raises InsufficientDecades when the fit window
    resolves less than one decade of (T - t).
    """
    tr = np.asarray(trace, dtype=float)
    if tr.ndim != 2 or tr.shape[0] < 8:
        raise ValueError("trace too short to classify")
    sup = tr[:, 2]
    if status == "decayed" or (status is None and sup[-1] < 0.5 * sup.max()):
        return BlowupReport(blowup_class="none",
                            meta={"reason": "amplitude decayed"})

    n = tr.shape[0]
    k0 = max(0, n - max(8, int(math.ceil(window * n))))
    win = tr[k0:]
    # (t_last - t_i) from the pairs, exact where it matters
    tau_base = (tr[-1, 0] - win[:, 0]) + (tr[-1, 1] - win[:, 1])
    logsup = np.log(win[:, 2])
    dt_last = tr[-1, 4]
    span = max((tr[-1, 0] - tr[0, 0]) + (tr[-1, 1] - tr[0, 1]), dt_last)

    deltas = np.geomspace(0.05 * dt_last, 10.0 * span, 400)
    ssr = _sweep_T(tau_base, logsup, deltas)
    best = int(np.argmin(ssr))
    lo = deltas[max(best - 1, 0)]
    hi = deltas[min(best + 1, len(deltas) - 1)]
    deltas2 = np.geomspace(lo, hi, 160)
    ssr2 = _sweep_T(tau_base, logsup, deltas2)
    best2 = int(np.argmin(ssr2))
    delta = float(deltas2[best2])
    ssr_min = float(ssr2[best2])

    # confidence band: candidate offsets whose SSR stays within ssr_band,
    # floored at the sampling granularity of the window (a fit cannot
    # honestly pin T below the largest step it interpolates across)
    all_d = np.concatenate([deltas, deltas2])
    all_s = np.concatenate([ssr, ssr2])
    band = all_d[all_s <= max(ssr_band * ssr_min, ssr_min + 1e-300)]
    ci = 0.5 * (band.max() - band.min()) if len(band) > 1 else 0.0
    ci = max(ci, float(np.max(win[:, 4])))

    tau = tau_base + delta
    decades = math.log10(tau[0] / tau[-1])
    if decades < 1.0:
        raise InsufficientDecades("fit window spans %.2f decades of (T - t)"
                                  % decades)

    x = np.log(tau)
    rate = float(np.polyfit(x, logsup, 1)[0])
    lam = win[:, 3]
    ok = np.isfinite(lam) & (lam > 0.0)
    lam_exp = float(np.polyfit(x[ok], np.log(lam[ok]), 1)[0]) \
        if ok.sum() >= 4 else np.nan

    p = table.model.p
    kappa = type_one_rate(p)
    kap_hat = float(np.exp(np.mean(logsup + x / (p - 1.0))))

    label = "indeterminate"
    if abs(kap_hat / kappa - 1.0) <= kappa_tol:
        label = "typeI"
    else:
        alpha = table.tail_gap
        for ell in ells:
            tgt = ell / alpha
            if np.isfinite(lam_exp) and abs(lam_exp - tgt) <= lam_tol * tgt:
                label = "typeII(%d)" % ell
                break

    T_hat = (tr[-1, 0] + tr[-1, 1]) + delta
    return BlowupReport(blowup_class=label, T_hat=float(T_hat), T_ci=ci,
                        rate_exponent=rate, lam_exponent=lam_exp,
                        kappa_hat=kap_hat, kappa_target=kappa,
                        decades=decades, window=len(win), ssr=ssr_min,
                        meta={"delta": delta})


# ------------------------------------------------------ Sobolev diagnostics

def _radial_lap(grid, f, d):
    d1 = grid.diff(f, 1, 1)
    d2 = grid.diff(f, 2, 1)
    out = np.empty_like(f)
    out[1:] = d2[1:] + (d - 1.0) / grid.r[1:] * d1[1:]
    out[0] = d * d2[0]
    return out, d1


def sobolev_diagnostics(values, k_list, geometry, d, r_lo=None, r_hi=None,
                        data_noise=None, strict=False):
    """Integer-order seminorms with a stencil-noise estimate per order.

    geometry is either a composite radial grid or a UniformOps pack.  Even
    orders use iterated Laplacians, odd orders finish with one radial
    derivative; the r^{d-1} weight is applied in the quadrature.  The noise
    track pushes a worst-case alternating perturbation through the same
    operators; its amplitude defaults to machine precision on the data but
    can be raised (data_noise) when the samples themselves are the output
    of a solver.  Entries whose propagated noise passes 10 percent of the
    value are flagged (or raised when strict).
    """
    uniform = isinstance(geometry, UniformOps)
    if uniform:
        r, w = geometry.r, geometry.weight

        def lap(f):
            return geometry.lap @ f

        def der(f):
            return geometry.d1 @ f
    else:
        r = geometry.r
        from .grids import radial_integral

        def lap(f):
            return _radial_lap(geometry, f, d)[0]

        def der(f):
            return geometry.diff(f, 1, 1)

    sel = np.ones_like(r, dtype=bool)
    if r_lo is not None:
        sel &= r >= r_lo
    if r_hi is not None:
        sel &= r <= r_hi

    def norm(f):
        if uniform:
            return math.sqrt(float(np.sum(w[sel] * f[sel] ** 2)))
        from .grids import radial_integral
        return math.sqrt(radial_integral(geometry, f * f, d, r_lo, r_hi))

    eps = np.finfo(float).eps * max(1.0, float(np.max(np.abs(values))))
    if data_noise is not None:
        eps = max(eps, float(data_noise))
    alt = eps * np.cos(np.pi * np.arange(len(r)))

    out = {}
    for k in sorted(set(int(k) for k in k_list)):
        if k < 0 or k > 6:
            raise ValueError("supported seminorm orders are 0..6")
        f, e = values, alt
        for _ in range(k // 2):
            f, e = lap(f), np.abs(lap(e))
        if k % 2:
            f, e = der(f), np.abs(der(e))
        val = norm(f)
        noise = norm(e)
        dominated = noise > 0.1 * val if val > 0.0 else noise > 0.0
        if dominated and strict:
            raise NoiseDominated("order %d: noise %.3g against value %.3g"
                                 % (k, noise, val))
        out[k] = {"value": val, "noise": noise, "dominated": bool(dominated)}
    return out


# -------------------------------------------------------- self-similar runs

@dataclass
class RescaledConfig:
    table: object
    s0: float = 20.0
    ell: int = 2
    shoot: float = 0.0
    y_max: float = 48.0
    nodes: int = 1200
    tau_end: float = 45.0
    safety_f: float = 0.05
    cfl: float = 0.4
    dtau_max: float = 0.02
    c_lo: float = -0.05
    c_hi: float = 0.35
    v_cap: float = 5.0


@dataclass
class RescaledRun:
    status: str
    tau: np.ndarray
    t_hi: np.ndarray
    t_lo: np.ndarray
    lam: np.ndarray
    drift: np.ndarray
    sup_v: np.ndarray
    v0: np.ndarray
    v: np.ndarray
    config: RescaledConfig

    def physical_trace(self):
        """Trace rows in the physical-frame schema for the classifier."""
        sp = self.config.table.scale_pow
        p = self.config.table.model.p
        sup = self.lam ** (-sp) * self.sup_v
        # compose the proxy with the (slightly drifting) origin value
        lam_hat = self.lam * self.v0 ** (-(p - 1) / 2.0)
        dt = np.gradient(self.t_hi + self.t_lo)
        return np.column_stack([self.t_hi, self.t_lo, sup, lam_hat, dt])


def rescaled_run(gs, ladder, correction, rcfg):
    """Integrate the frozen-origin self-similar frame from a seeded profile.

    The drift coefficient is chosen each step so v(0) is stationary, which
    pins the scaling gauge; lam then satisfies dlam/dtau = -c lam and the
    physical time accumulates as dt = lam^2 dtau.  Exits: drift above c_hi
    (fast side), below c_lo (spreading side), amplitude cap, or horizon.
    """
    table = rcfg.table
    p = table.model.p
    d = table.model.d
    sp = table.scale_pow
    ops = _ops(rcfg.y_max, rcfg.nodes, d)

    src = _seed_profile(gs, ladder, correction, table, rcfg.s0, rcfg.ell,
                        rcfg.shoot)
    spline = CubicSpline(gs.grid.r, src)
    v = spline(ops.r)
    q_bc = float(CubicSpline(gs.grid.r, gs.q.values)(rcfg.y_max))

    lam = rcfg.s0 ** (-rcfg.ell / (2 * rcfg.ell - table.tail_gap))
    t_hi, t_lo = 0.0, 0.0
    tau = 0.0

    def drift_of(w):
        num = float((ops.lap @ w)[0]) + float(w[0]) ** p
        return -num / (sp * float(w[0]))

    def advect_react(w, h, c):
        def g(x):
            return x ** p + c * (sp * x + ops.r * (ops.d1 @ x)
                                 + ops.r * ops.d1_bc * q_bc)
        half = w + 0.5 * h * g(w)
        return w + h * g(half)

    c = drift_of(v)
    rows = [(tau, t_hi, t_lo, lam, c, float(np.max(np.abs(v))),
             float(v[0]))]
    status = "trapped"
    while tau < rcfg.tau_end:
        sup = float(np.max(np.abs(v)))
        dt = min(rcfg.dtau_max,
                 rcfg.safety_f / max(sup, 1e-12) ** (p - 1),
                 rcfg.cfl * ops.h / (abs(c) * rcfg.y_max + 1e-12),
                 rcfg.tau_end - tau)
        w = advect_react(v, 0.5 * dt, c)
        w = _cn_step(w, dt, ops, bc_value=q_bc)
        w = advect_react(w, 0.5 * dt, c)
        if not np.all(np.isfinite(w)):
            status = "fast"
            break
        c_new = drift_of(w)
        lam_new = lam * math.exp(-0.5 * (c + c_new) * dt)
        t_hi, t_lo = time_add(t_hi, t_lo,
                              0.5 * dt * (lam * lam + lam_new * lam_new))
        tau += dt
        v, c, lam = w, c_new, lam_new
        rows.append((tau, t_hi, t_lo, lam, c, float(np.max(np.abs(v))),
                     float(v[0])))
        if c > rcfg.c_hi:
            status = "fast"
            break
        if c < rcfg.c_lo:
            status = "decay"
            break
        if np.max(np.abs(v)) > rcfg.v_cap:
            status = "fast"
            break

    a = np.asarray(rows, dtype=float)
    return RescaledRun(status=status, tau=a[:, 0], t_hi=a[:, 1],
                       t_lo=a[:, 2], lam=a[:, 3], drift=a[:, 4],
                       sup_v=a[:, 5], v0=a[:, 6], v=v, config=rcfg)


def shoot_rate(gs, ladder, correction, rcfg, bracket=(-0.02, 0.02),
               max_runs=60, tol=1e-12, fit_window=0.8, lam_tol=0.15):
    """Bisect the unstable seed amplitude and fit the scale exponent.

    Endpoint runs must exit on opposite sides (fast vs spreading);
    otherwise RootNotBracketed.  Midpoints that survive the horizon are
    kept, and the last trapped run provides the lam(T - t) fit.  The
    returned report always carries the shooting diagnostics, whether or
    not the fitted exponent lands inside the tolerance.
    """
    from dataclasses import replace

    def run_at(a):
        return rescaled_run(gs, ladder, correction, replace(rcfg, shoot=a))

    a_lo, a_hi = bracket
    r_lo, r_hi = run_at(a_lo), run_at(a_hi)
    sides = {r_lo.status, r_hi.status}
    if "fast" not in sides or "decay" not in sides:
        raise RootNotBracketed("endpoint exits %s / %s"
                               % (r_lo.status, r_hi.status))
    if r_lo.status == "fast":
        a_lo, a_hi = a_hi, a_lo

    runs = 2
    best = None
    history = []
    while runs < max_runs and abs(a_hi - a_lo) > tol * max(
            1.0, abs(a_lo), abs(a_hi)):
        mid = 0.5 * (a_lo + a_hi)
        r = run_at(mid)
        runs += 1
        history.append((mid, r.status, float(r.tau[-1])))
        if r.status == "trapped":
            best = (mid, r)
            break
        if r.status == "fast":
            a_hi = mid
        else:
            a_lo = mid

    # refine inside the trapped window: keep bisecting against the fast side
    while best is not None and runs < max_runs and \
            abs(a_hi - best[0]) > tol * max(1.0, abs(best[0])):
        mid = 0.5 * (best[0] + a_hi)
        r = run_at(mid)
        runs += 1
        history.append((mid, r.status, float(r.tau[-1])))
        if r.status == "trapped":
            best = (mid, r)
        elif r.status == "fast":
            a_hi = mid
        else:
            a_lo = mid

    report = {
        "runs": runs,
        "bracket": (a_lo, a_hi),
        "width": abs(a_hi - a_lo),
        "history": history,
        "status": "no-trap" if best is None else "converged",
        "a_star": None if best is None else best[0],
        "lam_exponent": np.nan,
        "target": rcfg.ell / rcfg.table.tail_gap,
        "within_tol": False,
        "fit": None,
    }
    if best is None:
        return report

    run = best[1]
    try:
        fit = classify_blowup(run.physical_trace(), rcfg.table,
                              status="blowup", window=fit_window,
                              lam_tol=lam_tol)
    except InsufficientDecades as exc:
        report["fit_error"] = str(exc)
        return report
    report["fit"] = fit
    report["lam_exponent"] = fit.lam_exponent
    tgt = report["target"]
    report["within_tol"] = bool(abs(fit.lam_exponent - tgt) <= lam_tol * tgt)
    return report
