"""Composite radial grids, arbitrary-node finite differences, quadrature.

The working grid is uniform on a core [0, core_end] and uniform in log r on
the tail (core_end, r_max]; every profile in the package is sampled on such a
grid.  Differentiation uses per-node Fornberg stencils on the actual node
locations, with parity mirroring across r = 0 so even/odd sectors keep full
order at the origin.  Quadrature is composite Simpson on the true nodes.
"""

import math

import numpy as np
from scipy import sparse
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline


class RadialGrid:
    """Radial nodes r[0] = 0 < r[1] < ... < r[-1] = r_max.

    Parameters
    ----------
    core_end : end of the uniformly spaced core (>= 10 for profile work).
    core_h : core spacing.
    r_max : last node (>= 1e4 for tail fits).
    nodes_per_decade : tail resolution in log10 r (>= 8 contractually;
        default is far above that because fourth-order stencils feed
        1e-6-level residual checks).
    """

    def __init__(self, core_end=10.0, core_h=1.0 / 128, r_max=1e5,
                 nodes_per_decade=160):
        if core_end < 10.0 - 1e-12:
            raise ValueError("core must extend to at least r = 10")
        if r_max < 1e4:
            raise ValueError("grid must extend to at least r = 1e4")
        if nodes_per_decade < 8:
            raise ValueError("tail needs at least 8 nodes per decade")
        n_core = int(round(core_end / core_h))
        core = np.linspace(0.0, core_end, n_core + 1)
        decades = math.log10(r_max / core_end)
        n_tail = int(math.ceil(decades * nodes_per_decade))
        tail = core_end * 10.0 ** (np.arange(1, n_tail + 1) * decades / n_tail)
        tail[-1] = r_max
        self.r = np.concatenate([core, tail])
        self.core_end = core_end
        self.core_h = core_h
        self.r_max = r_max
        self.nodes_per_decade = nodes_per_decade
        self.n_core = n_core
        self._diff_cache = {}

    def __len__(self):
        return len(self.r)

    def mask(self, r_lo=None, r_hi=None):
        m = np.ones(len(self.r), dtype=bool)
        if r_lo is not None:
            m &= self.r >= r_lo
        if r_hi is not None:
            m &= self.r <= r_hi
        return m

    def diff(self, values, order=1, parity=1, width=7):
        """Differentiate nodal values; parity = (-1)^n of the sector."""
        return self.diff_matrix(order, parity, width) @ values

    def diff_matrix(self, order=1, parity=1, width=7):
        key = (order, parity, width)
        if key not in self._diff_cache:
            self._diff_cache[key] = diff_matrix(self.r, order, parity, width)
        return self._diff_cache[key]


class UniformGrid(RadialGrid):
    """Cell-centered uniform grid on (0, r_max]; no r = 0 node.

    Used for the refined local grids of the projection generators where
    repeated operator applications by finite differences need clean uniform
    stencils and no division by zero at the origin.
    """

    def __init__(self, r_max, h):
        n = int(math.ceil(r_max / h))
        self.r = (np.arange(n) + 0.5) * h
        self.core_end = r_max
        self.core_h = h
        self.r_max = self.r[-1]
        self.nodes_per_decade = None
        self.n_core = n
        self._diff_cache = {}


def fornberg_weights(x0, x, m):
    """Fornberg weights for derivatives 0..m at x0 from arbitrary nodes x.

    Returns array (m+1, len(x)); row k gives the k-th derivative stencil.
    """
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def diff_matrix(r, order, parity, width):
    """Sparse nodal differentiation matrix with parity mirror at r = 0.

    For each node the stencil is the `width` nearest nodes of the extended
    set {-r_k} U {r_j}; mirrored nodes contribute with sign `parity`.
    """
    n = len(r)
    has_zero = r[0] == 0.0
    kmir = min(width, n - 1)
    start = 1 if has_zero else 0
    mirror = -r[start:start + kmir][::-1]
    ext = np.concatenate([mirror, r])
    # extended index -> (source node, sign)
    src = np.concatenate([np.arange(start + kmir - 1, start - 1, -1), np.arange(n)])
    sgn = np.concatenate([np.full(kmir, float(parity)), np.ones(n)])
    rows, cols, vals = [], [], []
    for i in range(n):
        pos = kmir + i
        j0 = min(max(pos - width // 2, 0), len(ext) - width)
        sten = slice(j0, j0 + width)
        w = fornberg_weights(r[i], ext[sten], order)[order]
        for off in range(width):
            rows.append(i)
            cols.append(src[j0 + off])
            vals.append(w[off] * sgn[j0 + off])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def radial_integral(grid, f, d, r_lo=None, r_hi=None):
    """Simpson integral of f(r) r^{d-1} dr over [r_lo, r_hi] (grid range default)."""
    m = grid.mask(r_lo, r_hi)
    r = grid.r[m]
    if len(r) < 3:
        return 0.0
    return float(simpson(f[m] * r ** (d - 1), x=r))


def cumulative_radial(grid, f, d):
    """Cumulative integral of f(r) r^{d-1} from the first node outward.

    Evaluated through a cubic-spline antiderivative rather than composite
    Simpson: the spline error varies smoothly with r, so downstream finite
    differencing of the result does not amplify node-to-node quadrature
    jitter by 1/h^2.
    """
    y = f * grid.r ** (d - 1)
    return cumulative_from(grid, y)


def cumulative_from(grid, y):
    """Cumulative integral of y dr starting at the first node (smooth)."""
    cs = CubicSpline(grid.r, y)
    return cs.antiderivative()(grid.r)


def tail_remainder(r_last, y_tail_r, y_tail_v):
    """Estimate int_{r_last}^inf y dr from a local power-law fit.

    Fits y ~ C r^q on the supplied trailing window; returns 0 when the fit
    says the integral diverges or the data is effectively zero.
    """
    v = np.asarray(y_tail_v, dtype=float)
    if np.all(np.abs(v) < 1e-300):
        return 0.0
    sign = math.copysign(1.0, np.median(v))
    av = np.abs(v)
    good = av > 0
    if good.sum() < 3:
        return 0.0
    q, lc = np.polyfit(np.log(y_tail_r[good]), np.log(av[good]), 1)
    if q >= -1.0 - 1e-9:
        return 0.0
    c = math.exp(lc) * sign
    return -c * r_last ** (q + 1.0) / (q + 1.0)


def fit_powerlaw(r, y, r_lo, r_hi):
    """Least-squares fit y ~ C r^e on [r_lo, r_hi] in log-log coordinates.

    Returns (e, C, resid) with resid the max abs log-residual; C carries the
    sign of the median of y on the window. Degenerate windows (fewer than 8
    samples or sign changes wiping out the data) give resid = inf.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (r >= r_lo) & (r <= r_hi) & (np.abs(y) > 0) & (r > 0)
    if m.sum() < 8:
        return math.nan, math.nan, math.inf
    sign = math.copysign(1.0, np.median(y[m]))
    lr = np.log(r[m])
    ly = np.log(np.abs(y[m]))
    e, lc = np.polyfit(lr, ly, 1)
    resid = float(np.max(np.abs(ly - (e * lr + lc))))
    return float(e), sign * math.exp(lc), resid


def smooth_cutoff(r, scale=1.0):
    """C-infinity cutoff: 1 for r <= scale, 0 for r >= 2*scale.

    Bridge g(1-t)/(g(t)+g(1-t)) with g(x) = exp(-1/x); every derivative
    vanishes at both junctions.
    """
    r = np.asarray(r, dtype=float)
    t = r / scale - 1.0
    out = np.ones_like(r)
    out[t >= 1.0] = 0.0
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    ga = np.exp(-1.0 / (1.0 - tm))
    gb = np.exp(-1.0 / tm)
    out[mid] = ga / (ga + gb)
    return out


def smooth_cutoff_d1(r, scale=1.0):
    """Radial derivative of smooth_cutoff (closed form)."""
    r = np.asarray(r, dtype=float)
    t = r / scale - 1.0
    out = np.zeros_like(r)
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    ga = np.exp(-1.0 / (1.0 - tm))      # g(1-t)
    gb = np.exp(-1.0 / tm)              # g(t)
    dga = -ga / (1.0 - tm) ** 2         # d/dt g(1-t)
    dgb = gb / tm ** 2                  # d/dt g(t)
    den = (ga + gb) ** 2
    out[mid] = (dga * gb - ga * dgb) / den / scale
    return out
