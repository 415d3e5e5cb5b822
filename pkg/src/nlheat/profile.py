"""Approximate blow-up profiles  Q_b = Q + sum_i b_i T_i (+ S_2)  and their residual.

The blow-up ansatz perturbs the ground state along the generalized-kernel
ladder of the linearized operator, with coefficients b = (b_i) living on the
spherical-harmonic sectors.  This module holds the parameter container, the
profile assembly including the first quadratic correction S_2, the
localization to the self-similar zone, and the residual of the full
nonlinear equation evaluated on the assembled profile.

Size conventions: a blow-up parameterization has b_1 > 0, and the higher
coefficients are measured against powers of b_1,

    |b_i^{(n)}| <= K * b_1^{(tail_exp - mode_tail_exp[n])/2 + i},

so that on the radial sector the bound is plain K * b_1^i.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grids import fit_powerlaw, radial_integral, smooth_cutoff
from .groundstate import RadialProfile, TailFit
from .spectral import invert_H, kernel_pair


class SizeBoundViolated(ValueError):
    """A coefficient exceeds its K * b_1-power budget (or b_1 <= 0)."""


class ScaleOutOfGrid(ValueError):
    """The cut scale of the localization does not fit inside the grid."""


@dataclass
class ParamFamily:
    """Ladder coefficients b_i of an approximate blow-up profile.

    radial holds b_i for i = 1..L of the radial sector at radial[i-1];
    translation, when present, holds the degree-1 block as a (d, L_1) array
    (row k-1 is the family above the k-th degree-1 harmonic).  The closure
    convention b_{L+1} = 0 is encoded by b(L+1) returning zero.
    """

    radial: np.ndarray
    translation: np.ndarray = None

    def __post_init__(self):
        self.radial = np.atleast_1d(np.asarray(self.radial, dtype=float))
        if self.translation is not None:
            self.translation = np.asarray(self.translation, dtype=float)
            if self.translation.ndim != 2:
                raise ValueError("translation block must be (d, L_1)")

    @property
    def depth(self):
        return len(self.radial)

    @property
    def b1(self):
        return float(self.radial[0])

    def b(self, i):
        """Radial b_i, 1-based, zero at i = depth + 1."""
        if not 1 <= i <= self.depth + 1:
            raise IndexError(f"b_{i} outside 1..{self.depth + 1}")
        if i == self.depth + 1:
            return 0.0
        return float(self.radial[i - 1])

    def validate(self, table, size_const=10.0, require_positive=True):
        """Check the b_1-power size bounds; raise SizeBoundViolated.

        Zero families pass (they parameterize the unperturbed state);
        require_positive additionally demands b_1 > 0.
        """
        b1 = self.radial[0]
        if not np.all(np.isfinite(self.radial)):
            raise SizeBoundViolated("non-finite radial coefficients")
        if np.all(self.radial == 0.0) and self.translation is None:
            if require_positive:
                raise SizeBoundViolated("b_1 > 0 required, got 0")
            return self
        if require_positive and not b1 > 0.0:
            raise SizeBoundViolated(f"b_1 > 0 required, got {b1}")
        ref = abs(b1)
        for i in range(2, self.depth + 1):
            bound = size_const * ref ** i
            if abs(self.radial[i - 1]) > bound:
                raise SizeBoundViolated(
                    f"|b_{i}| = {abs(self.radial[i - 1]):.3e} exceeds "
                    f"K*b_1^{i} = {bound:.3e}")
        if self.translation is not None:
            d, depth1 = self.translation.shape
            half_gap = 0.5 * (table.tail_exp - table.mode_tail_exp[1])
            for i in range(1, depth1 + 1):
                bound = size_const * ref ** (half_gap + i)
                worst = np.max(np.abs(self.translation[:, i - 1]))
                if worst > bound:
                    raise SizeBoundViolated(
                        f"degree-1 |b_{i}| = {worst:.3e} exceeds "
                        f"K*b_1^({half_gap + i:.3g}) = {bound:.3e}")
        return self

    def copy(self):
        tr = None if self.translation is None else self.translation.copy()
        return ParamFamily(self.radial.copy(), tr)


def zero_family(depth, translation_shape=None):
    tr = None if translation_shape is None else np.zeros(translation_shape)
    return ParamFamily(np.zeros(depth), tr)


# ---------------------------------------------------------------------------
# assembly

def second_correction(gs, ladder, pair=None, tail_window=(1e2, 1e4)):
    """Unit quadratic correction W, so that S_2 = b_1^2 W.

    W solves H W = -(Theta_1 - (p(p-1)/2) Q^(p-2) T_1^2): the right side
    collects the order-b_1^2 radial content of the flow residual that the
    ladder terms do not absorb.  Degree bookkeeping caps the tail exponent
    of W at 4 - tail_exp - defect_gap; the cap is attained only when the
    generic subleading term of the defect Theta_1 is present, otherwise W
    sits strictly below it (it does for d = 13, p = 5, where W decays).
    The fitted tail is attached to the returned profile.
    """
    if ladder.n != 0:
        raise ValueError("quadratic correction lives on the radial sector")
    if len(ladder.profiles) < 2:
        raise ValueError("ladder too shallow: need T_1")
    grid = ladder.profiles[0].grid
    p = gs.model.p
    q, dq = gs.q.values, gs.q.d1
    t1, th1 = ladder.profiles[1], ladder.thetas[1]
    c2 = p * (p - 1) / 2.0
    vals = th1.values - c2 * q ** (p - 2) * t1.values ** 2
    d1 = th1.d1 - c2 * ((p - 2) * q ** (p - 3) * dq * t1.values ** 2
                        + 2.0 * q ** (p - 2) * t1.values * t1.d1)
    rhs = RadialProfile(grid=grid, values=vals, d1=d1, parity=1,
                        meta={"kind": "quadratic-source"})
    pair = pair or kernel_pair(gs, 0, basis="closed")
    u = invert_H(pair, rhs, tail_window=tail_window)
    w = RadialProfile(grid=grid, values=-u.values, d1=-u.d1, d2=-u.d2,
                      parity=1,
                      meta={"kind": "quadratic-correction",
                            "branch": u.meta["branch"],
                            "tail_cap": 4.0 - gs.table.tail_exp
                            - gs.table.defect_gap})
    e, c, resid = fit_powerlaw(grid.r, w.values, *tail_window)
    w.tail = TailFit(window=tail_window, e_hat=e, c_hat=c, resid=resid)
    return w


@dataclass
class ApproximateProfile:
    """Assembled profile Q_b = Q + sum_i b_i T_i (+ b_1^2 W) on the grid.

    values/d1 are the assembled samples (d1 analytic: every piece carries
    its own derivative).  correction holds the unit quadratic profile W
    when the assembly included it.  localize() fills localized/cut_scale/
    loc_report; residual() fills residual_values/norm_report.
    """

    gs: object
    ladder: object
    b: ParamFamily
    values: np.ndarray
    d1: np.ndarray
    with_s2: bool
    correction: RadialProfile = None
    localized: np.ndarray = None
    cut_scale: float = None
    loc_report: dict = None
    residual_values: np.ndarray = None
    norm_report: dict = None

    @property
    def grid(self):
        return self.gs.grid

    def perturbation(self):
        """Q_b - Q."""
        return self.values - self.gs.q.values

    def db(self, i):
        """Analytic derivative of the assembled values in b_i (1-based)."""
        if not 1 <= i <= self.b.depth:
            raise IndexError(f"b_{i} outside 1..{self.b.depth}")
        out = self.ladder.profiles[i].values.copy()
        if i == 1 and self.with_s2:
            out += 2.0 * self.b.b1 * self.correction.values
        return out


def assemble(gs, ladder, fam, with_s2=True, correction=None,
             size_const=10.0, validate=True):
    """Assemble Q_b from the ground state and its radial ladder.

    fam is validated against the b_1-power size bounds (zero families are
    allowed: they give back Q).  The quadratic correction is computed once
    per ladder and can be passed back in for reuse across families.
    validate=False is for derivative probes that nudge one coefficient
    off the size ledger on purpose.
    """
    if validate:
        fam.validate(gs.table, size_const=size_const, require_positive=False)
    depth = fam.depth
    if len(ladder.profiles) - 1 < depth:
        raise ValueError(
            f"ladder depth {len(ladder.profiles) - 1} < family depth {depth}")
    v = gs.q.values.copy()
    d1 = gs.q.d1.copy()
    for i in range(1, depth + 1):
        bi = fam.radial[i - 1]
        if bi != 0.0:
            v += bi * ladder.profiles[i].values
            d1 += bi * ladder.profiles[i].d1
    if with_s2:
        if correction is None:
            correction = second_correction(gs, ladder)
        b1 = fam.radial[0]
        v += b1 * b1 * correction.values
        d1 += b1 * b1 * correction.d1
    return ApproximateProfile(gs=gs, ladder=ladder, b=fam.copy(), values=v,
                              d1=d1, with_s2=with_s2, correction=correction)


# ---------------------------------------------------------------------------
# localization

def localize(prof, table=None):
    """Cut the perturbation to the self-similar zone: Q + chi_B1 (Q_b - Q).

    The cutoff plateau ends at the cut scale B_1(b_1) and its support at
    2 B_1, so the localized profile equals Q_b nodewise on r <= B_1 and Q
    nodewise on r >= 2 B_1.  Requires B_1 < r_max / 4; reports the
    plateau-weighted size sup_{r <= B_1} |Q_b - Q| r^tail_exp.
    """
    table = table or prof.gs.table
    grid = prof.grid
    b1 = prof.b.radial[0]
    if not b1 > 0.0:
        raise ScaleOutOfGrid(f"cut scale undefined for b_1 = {b1}")
    scale = table.cut_scale(b1)
    if not scale < grid.r_max / 4.0:
        raise ScaleOutOfGrid(
            f"cut scale {scale:.4g} >= r_max/4 = {grid.r_max / 4.0:.4g}")
    chi = smooth_cutoff(grid.r, scale)
    pert = prof.perturbation()
    # on the plateau the identity must hold nodewise, not up to roundoff
    prof.localized = np.where(chi == 1.0, prof.values,
                              prof.gs.q.values + chi * pert)
    prof.cut_scale = scale
    m = grid.mask(None, scale)
    prof.loc_report = {
        "cut_scale": scale,
        "loc_scale": table.loc_scale(b1),
        "sup_weighted": float(np.max(np.abs(pert[m]) *
                                     grid.r[m] ** table.tail_exp)),
        "plateau_nodes": int(np.sum(chi == 1.0)),
        "support_nodes": int(np.sum(chi == 0.0)),
    }
    return prof


# ---------------------------------------------------------------------------
# residual

def full_equation(gs, values, width=7):
    """Elliptic part F(u) = Delta u + |u|^(p-1) u by nodal stencils.

    Derivatives come from the grid's mirrored Fornberg stencils (even
    parity supplies the ghost nodes across r = 0); at the origin the
    radial Laplacian degenerates to d * u''(0).  Returns (F, u') so the
    scaling term can reuse the same derivative route.
    """
    grid = gs.grid
    d, p = gs.model.d, gs.model.p
    r = grid.r
    d1 = grid.diff(values, 1, 1, width)
    d2 = grid.diff(values, 2, 1, width)
    lap = np.empty_like(values)
    lap[1:] = d2[1:] + (d - 1.0) / r[1:] * d1[1:]
    lap[0] = d * d2[0]
    return lap + values ** p, d1


def residual(prof, table=None, width=7):
    """Flow residual of the assembled profile and its weighted norms.

    psi = -F(Q_b) + b_1 (scaling generator of Q_b)
          + sum_i (-(2i - tail_gap) b_1 b_i + b_{i+1}) dQ_b/db_i,
    with the b-derivatives analytic and F by finite differences.  Reports
    squared norms int_{r<=B} psi^2 r^(d-1) dr for B in {1, 10, B_0, B_1}
    (the last two only when b_1 > 0) and the interior/exterior split at
    B_1 showing where the error mass of the unlocalized profile lives.
    """
    table = table or prof.gs.table
    grid = prof.grid
    d = prof.gs.model.d
    r = grid.r
    b = prof.b.radial
    depth = prof.b.depth
    alpha = table.tail_gap
    F, d1 = full_equation(prof.gs, prof.values, width=width)
    psi = -F + b[0] * (table.scale_pow * prof.values + r * d1)
    i = np.arange(1.0, depth + 1.0)
    bdot = -(2.0 * i - alpha) * b[0] * b
    bdot[:-1] += b[1:]
    for k in range(1, depth + 1):
        if bdot[k - 1] != 0.0:
            psi += bdot[k - 1] * prof.db(k)
    prof.residual_values = psi

    norms = {"1": float(radial_integral(grid, psi ** 2, d, None, 1.0)),
             "10": float(radial_integral(grid, psi ** 2, d, None, 10.0))}
    scales = {}
    report = {"norms": norms, "scales": scales}
    if b[0] > 0.0:
        b0_scale = table.loc_scale(b[0])
        b1_scale = table.cut_scale(b[0])
        scales["B0"] = b0_scale
        scales["B1"] = b1_scale
        norms["B0"] = float(radial_integral(grid, psi ** 2, d, None,
                                            b0_scale))
        norms["B1"] = float(radial_integral(grid, psi ** 2, d, None,
                                            b1_scale))
        interior = norms["B1"]
        exterior = float(radial_integral(grid, psi ** 2, d, b1_scale, None))
        report["interior"] = interior
        report["exterior"] = exterior
        report["ratio"] = interior / exterior if exterior > 0.0 else math.inf
    prof.norm_report = report
    return report


def derivative_check(prof, eps=(1e-4, 1e-5)):
    """Forward-difference probe of the analytic b-derivatives.

    For each i the assembly is redone at b + eps e_i (same correction) and
    the two step sizes are Richardson-combined; since the assembly is
    affine-quadratic in b the extrapolation must hit the analytic
    derivative at roundoff level.  Returns per-index sup errors relative
    to the derivative's own sup.
    """
    e_big, e_small = sorted(eps, reverse=True)
    k = e_big / e_small
    out = {}
    for i in range(1, prof.b.depth + 1):
        diffs = []
        for e in (e_big, e_small):
            fam = prof.b.copy()
            fam.radial[i - 1] += e
            bumped = assemble(prof.gs, prof.ladder, fam,
                              with_s2=prof.with_s2,
                              correction=prof.correction, validate=False)
            diffs.append((bumped.values - prof.values) / e)
        rich = (k * diffs[1] - diffs[0]) / (k - 1.0)
        want = prof.db(i)
        scale = np.max(np.abs(want))
        out[i] = {
            "raw": [float(np.max(np.abs(dd - want)) / scale)
                    for dd in diffs],
            "richardson": float(np.max(np.abs(rich - want)) / scale),
        }
    return out
