"""Closed-form constants for radial supercritical semilinear heat flow.

Everything in this module is elementary arithmetic on the dimension d and the
nonlinearity exponent p of  u_t = Lap(u) + u^p :  the Joseph-Lundgren
threshold, the coefficient of the singular steady state, tail exponents of
the zero modes of the linearized operator on each spherical-harmonic sector,
and derived bookkeeping (ladder depths, projection-mass growth exponents,
instability counts) consumed by the rest of the package.

Conventions
-----------
The scaling exponent is 2/(p-1): u_lam(x) = lam^{2/(p-1)} u(lam x) maps
solutions to solutions.  The singular steady state is
c_inf * r^{-2/(p-1)} with c_inf^{p-1} = (2/(p-1)) (d - 2 - 2/(p-1)).
On the degree-n spherical harmonic sector the linearized operator around the
singular state has power solutions r^{-e} with the two exponents

    e = (d - 2 -/+ sqrt(disc_n)) / 2,
    disc_n = (d-2)^2 - 4 p c_inf^{p-1} + 4 n (d + n - 2),

real for all n exactly when p exceeds the Joseph-Lundgren exponent.  We call
the smaller one ``mode_tail_exp[n]`` (written gamma_n in the literature on
supercritical parabolic flows) and reserve ``tail_exp`` for the radial one,
which is also the decay rate of the ground-state tail correction.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import json
import math


class SubcriticalP(ValueError):
    """p is not an odd integer above the Joseph-Lundgren exponent."""


class DegenerateDelta(ValueError):
    """A quarter-split fractional part vanishes: resonant (d, p) pair."""


class BadEll(ValueError):
    """Blow-up speed index ell violates 2*ell > tail_gap or ell <= depth."""


def joseph_lundgren(d):
    """Joseph-Lundgren exponent; infinite below d = 11."""
    if d < 11:
        return math.inf
    return 1.0 + 4.0 / (d - 4 - 2.0 * math.sqrt(d - 1.0))


def int_part(x, tol=1e-9):
    """Integer part E[x] with x - 1 < E[x] <= x, snapping to exact integers.

    Equals floor(x) away from integers and x itself on (near-)integers; the
    snap tolerance absorbs float fuzz in derived quantities like i_n.
    """
    r = round(x)
    if abs(x - r) < tol:
        return int(r)
    return math.floor(x)


def is_integer(x, tol=1e-9):
    return abs(x - round(x)) < tol


def harmonic_count(d, n):
    """Multiplicity of degree-n spherical harmonics on the (d-1)-sphere.

    k(0) = 1, k(1) = d, and in general the standard binomial formula
    C(n+d-1, n) - C(n+d-3, n-2).
    """
    if n < 0:
        raise ValueError("harmonic degree must be nonnegative")
    if n == 0:
        return 1
    if n == 1:
        return d
    return math.comb(n + d - 1, n) - math.comb(n + d - 3, n - 2)


@dataclass(frozen=True)
class ModelInput:
    """Validated model parameters.

    d : ambient dimension (>= 11 so the supercritical range is nonempty)
    p : odd integer nonlinearity, p > joseph_lundgren(d)
    ell : blow-up speed index, 2*ell > tail_gap and ell <= depth
    depth : radial ladder truncation (L in the flow module)
    eps_g : global epsilon entering the decay-gap definitions
    eta : localization exponent, cut_scale = loc_scale^(1+eta)
    proj_scale : support scale M of the projection generators
    """

    d: int
    p: int
    ell: int
    depth: int
    eps_g: float = 1e-3
    eta: float = 0.05
    proj_scale: float = 40.0


@dataclass
class ConstantsTable:
    """All closed-form constants for one (d, p, ell, depth) choice.

    Per-sector arrays are indexed by harmonic degree n = 0 .. n_max with
    n_max = mode_cutoff + 2; entries beyond mode_cutoff are provided for
    diagnostics even where the ladder bookkeeping no longer applies.
    """

    model: ModelInput
    p_jl: float = 0.0
    s_crit: float = 0.0
    kappa: float = 0.0            # self-similar ODE rate (p-1)^{-1/(p-1)}
    scale_pow: float = 0.0        # 2/(p-1)
    sing_coeff_pow: float = 0.0   # c_inf^{p-1}
    sing_coeff: float = 0.0       # c_inf
    disc: float = 0.0
    tail_exp: float = 0.0         # radial zero-mode tail exponent (gamma)
    tail_exp2: float = 0.0        # companion exponent (gamma')
    tail_gap: float = 0.0         # tail_exp - scale_pow (alpha)
    decay_gap: float = 0.0        # min(tail_gap, disc) - eps_g
    defect_gap: float = 0.0       # half of min(decay_gap, 1, growth_frac[0]-eps_g)
    sobolev_index: int = 0        # growth_int[0] + depth + 1
    mode_cutoff: int = 0          # last n with d - 2*mode_tail_exp[n] <= 4*sobolev_index
    n_max: int = 0
    growth_frac_max: float = 0.0  # max growth_frac over n <= mode_cutoff
    mode_disc: list = field(default_factory=list)
    mode_tail_exp: list = field(default_factory=list)
    mode_tail_exp2: list = field(default_factory=list)
    mode_gap: list = field(default_factory=list)       # mode_tail_exp[n] - scale_pow
    growth_int: list = field(default_factory=list)     # m_n of d - 2*gamma_n = 4*(m_n + delta_n)
    growth_frac: list = field(default_factory=list)    # delta_n, in (0,1) off resonance
    ladder_depth: list = field(default_factory=list)   # sobolev_index - growth_int[n] - 1
    unstable_cut: list = field(default_factory=list)   # ell - (tail_exp - mode_tail_exp[n])/2
    harmonic_dim: list = field(default_factory=list)

    def loc_scale(self, b1):
        """Inner localization scale b1^(-1/2) of the profile machinery."""
        return abs(b1) ** -0.5

    def cut_scale(self, b1):
        """Outer cut scale loc_scale^(1+eta)."""
        return self.loc_scale(b1) ** (1.0 + self.model.eta)

    def to_dict(self):
        m = self.model
        out = {
            "d": m.d, "p": m.p, "ell": m.ell, "depth": m.depth,
            "eps_g": m.eps_g, "eta": m.eta, "proj_scale": m.proj_scale,
        }
        for name in ("p_jl", "s_crit", "kappa", "scale_pow", "sing_coeff_pow",
                     "sing_coeff", "disc", "tail_exp", "tail_exp2", "tail_gap",
                     "decay_gap", "defect_gap", "sobolev_index", "mode_cutoff",
                     "n_max", "growth_frac_max", "mode_disc", "mode_tail_exp",
                     "mode_tail_exp2", "mode_gap", "growth_int", "growth_frac",
                     "ladder_depth", "unstable_cut", "harmonic_dim"):
            out[name] = getattr(self, name)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self):
        """Aligned, human-readable table."""
        m = self.model
        lines = []
        lines.append(f"model: d={m.d} p={m.p} ell={m.ell} depth={m.depth} "
                     f"eps_g={m.eps_g} eta={m.eta} proj_scale={m.proj_scale}")
        scalars = [
            ("joseph_lundgren", self.p_jl), ("s_crit", self.s_crit),
            ("kappa", self.kappa), ("scale_pow", self.scale_pow),
            ("sing_coeff", self.sing_coeff), ("disc", self.disc),
            ("tail_exp", self.tail_exp), ("tail_exp2", self.tail_exp2),
            ("tail_gap", self.tail_gap), ("decay_gap", self.decay_gap),
            ("defect_gap", self.defect_gap),
            ("sobolev_index", self.sobolev_index),
            ("mode_cutoff", self.mode_cutoff),
            ("growth_frac_max", self.growth_frac_max),
        ]
        for name, val in scalars:
            lines.append(f"{name:>16s} = {val:.12g}")
        head = (f"{'n':>3s} {'disc_n':>14s} {'tail_exp_n':>14s} "
                f"{'gap_n':>14s} {'m_n':>4s} {'frac_n':>12s} "
                f"{'depth_n':>8s} {'cut_n':>12s} {'k(n)':>10s}")
        lines.append(head)
        for n in range(self.n_max + 1):
            lines.append(
                f"{n:>3d} {self.mode_disc[n]:>14.8g} "
                f"{self.mode_tail_exp[n]:>14.8g} {self.mode_gap[n]:>14.8g} "
                f"{self.growth_int[n]:>4d} {self.growth_frac[n]:>12.8g} "
                f"{self.ladder_depth[n]:>8d} {self.unstable_cut[n]:>12.8g} "
                f"{self.harmonic_dim[n]:>10d}")
        return "\n".join(lines)


def derive_constants(model):
    """Build the full ConstantsTable for a validated ModelInput.

    Raises SubcriticalP, DegenerateDelta or BadEll when the inputs violate
    the admissibility conditions.
    """
    d, p = model.d, model.p
    if not (isinstance(p, int) and p % 2 == 1 and p >= 3):
        raise SubcriticalP(f"p={p} must be an odd integer >= 3")
    p_jl = joseph_lundgren(d)
    if not p > p_jl:
        raise SubcriticalP(f"p={p} <= joseph_lundgren({d}) = {p_jl}")

    t = ConstantsTable(model=model)
    t.p_jl = p_jl
    t.scale_pow = 2.0 / (p - 1)
    t.s_crit = d / 2.0 - t.scale_pow
    t.kappa = (p - 1.0) ** (-1.0 / (p - 1))
    t.sing_coeff_pow = t.scale_pow * (d - 2.0 - t.scale_pow)
    t.sing_coeff = t.sing_coeff_pow ** (1.0 / (p - 1))
    t.disc = (d - 2.0) ** 2 - 4.0 * p * t.sing_coeff_pow
    # disc > 0 is equivalent to p > p_jl; guard against float fuzz anyway
    if t.disc <= 0:
        raise SubcriticalP(f"nonpositive discriminant {t.disc} for d={d} p={p}")
    t.tail_exp = (d - 2.0 - math.sqrt(t.disc)) / 2.0
    t.tail_exp2 = (d - 2.0 + math.sqrt(t.disc)) / 2.0
    t.tail_gap = t.tail_exp - t.scale_pow

    if not (2 * model.ell > t.tail_gap + 1e-12):
        raise BadEll(f"need 2*ell > tail_gap: ell={model.ell}, tail_gap={t.tail_gap}")
    if not (1 <= model.ell <= model.depth):
        raise BadEll(f"need 1 <= ell <= depth: ell={model.ell}, depth={model.depth}")

    # first pass: n = 0 fixes sobolev_index, then scan until the growth
    # exponent d - 2*gamma_n overtakes 4*sobolev_index (gamma_n decreases
    # in n so the scan terminates)
    def sector(n):
        disc_n = t.disc + 4.0 * n * (d + n - 2.0)
        g_n = (d - 2.0 - math.sqrt(disc_n)) / 2.0
        g2_n = (d - 2.0 + math.sqrt(disc_n)) / 2.0
        quarter = (d - 2.0 * g_n) / 4.0
        m_n = int_part(quarter)
        frac = quarter - m_n
        return disc_n, g_n, g2_n, m_n, frac

    _, g0, _, m0, f0 = sector(0)
    t.sobolev_index = m0 + model.depth + 1
    cutoff = 0
    n = 0
    while True:
        _, g_n, _, _, _ = sector(n + 1)
        if d - 2.0 * g_n <= 4.0 * t.sobolev_index:
            n += 1
            cutoff = n
        else:
            break
    t.mode_cutoff = cutoff
    t.n_max = cutoff + 2

    bad = []
    for n in range(t.n_max + 1):
        disc_n, g_n, g2_n, m_n, frac = sector(n)
        t.mode_disc.append(disc_n)
        t.mode_tail_exp.append(g_n)
        t.mode_tail_exp2.append(g2_n)
        t.mode_gap.append(g_n - t.scale_pow)
        t.growth_int.append(m_n)
        t.growth_frac.append(frac)
        t.ladder_depth.append(t.sobolev_index - m_n - 1)
        t.unstable_cut.append(model.ell - (t.tail_exp - g_n) / 2.0)
        t.harmonic_dim.append(harmonic_count(d, n))
        if d - 2.0 * g_n <= 4.0 * t.sobolev_index and not (1e-9 < frac < 1 - 1e-9):
            bad.append(n)
    if bad:
        raise DegenerateDelta(f"resonant quarter-split at sectors {bad} for d={d} p={p}")

    t.growth_frac_max = max(t.growth_frac[: t.mode_cutoff + 1])
    t.decay_gap = min(t.tail_gap, t.disc) - model.eps_g
    t.defect_gap = 0.5 * min(t.decay_gap, 1.0, t.growth_frac[0] - model.eps_g)
    if t.decay_gap <= 0 or t.defect_gap <= 0:
        raise DegenerateDelta(f"nonpositive decay gaps for d={d} p={p}: "
                              f"{t.decay_gap}, {t.defect_gap}")
    return t


def derive_constants_exact(d, p):
    """Exact rational core constants (Fractions) where they exist.

    Returns a dict with sing_coeff_pow, disc always rational, and tail_exp /
    tail_exp2 / tail_gap as Fractions whenever disc is the square of a
    rational (e.g. d=13, p=5 gives disc=16; d=11, p=7 gives disc=1/9).
    Raises ValueError when sqrt(disc) is irrational.
    """
    sp = Fraction(2, p - 1)
    cpow = sp * (d - 2 - sp)
    disc = Fraction((d - 2) ** 2) - 4 * p * cpow
    if disc <= 0:
        raise SubcriticalP(f"nonpositive discriminant {disc} for d={d} p={p}")
    num, den = disc.numerator, disc.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn != num or rd * rd != den:
        raise ValueError(f"disc={disc} is not a rational square")
    root = Fraction(rn, rd)
    tail = Fraction(d - 2, 1) / 2 - root / 2
    return {
        "sing_coeff_pow": cpow,
        "disc": disc,
        "tail_exp": tail,
        "tail_exp2": Fraction(d - 2, 1) / 2 + root / 2,
        "tail_gap": tail - sp,
    }


def instability_count(table):
    """Number of expected unstable directions of the type-II regime.

    ell - 1 radial directions, plus per-sector counts driven by the
    unstable_cut thresholds: degree 1 contributes d * max(E[cut] - [cut
    integer], 0) and each degree 2 <= n <= mode_cutoff contributes
    harmonic_dim[n] * max(E[cut] + 1 - [cut integer], 0).
    """
    m = table.model.ell - 1
    c1 = table.unstable_cut[1]
    contrib = int_part(c1) - (1 if is_integer(c1) else 0)
    m += table.model.d * max(contrib, 0)
    for n in range(2, table.mode_cutoff + 1):
        cn = table.unstable_cut[n]
        contrib = int_part(cn) + 1 - (1 if is_integer(cn) else 0)
        m += table.harmonic_dim[n] * max(contrib, 0)
    return m
