"""Canonical Dirichlet cells: solve Delta_g h = -1 on discrete geodesic
balls with zero boundary values, extend by zero, and differentiate.

The solver works on a local window around the cell center.  The operator
is discretized in divergence form sum_i d_i(a^{ij} d_j h) = -sqrt(det g)
with a^{ij} = sqrt(det g) g^{ij}, staggered axis fluxes, corner-staggered
cross terms, and a Shortley-Weller correction where an axis edge crosses
the curved ball boundary (second order for the conformal metrics used in
tests, where a^{ij} is exactly the identity).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import binary_erosion
from scipy.sparse.linalg import spsolve

from . import grid as gridmod
from .grid import GridError, MetricField

DEFAULT_R = 10.0 / 11.0

_MIN_THETA = 1e-2


class CellError(ValueError):
    pass


@dataclass
class CellSolution:
    """Solution of the cell PDE on a cropped local window around the center.

    `values` is the zero extension of h; `dist` is d_g(center, .) on the
    window.  Gradient and coordinate Hessian are evaluated pointwise by
    central differences, restricted to the R-interior (d_g <= R * i0).
    """

    center: tuple[int, int]      # global grid index of s
    i0: float
    R: float
    spacing: float
    window: tuple[slice, slice]  # location of the window in the full grid
    dist: np.ndarray             # d_g(s, .) on the window
    values: np.ndarray           # h, zero outside the discrete ball

    @property
    def ball(self) -> np.ndarray:
        return self.dist < self.i0

    @property
    def interior(self) -> np.ndarray:
        return self.dist <= self.R * self.i0

    def local_index(self, node: tuple[int, int]) -> tuple[int, int]:
        return (node[0] - self.window[0].start, node[1] - self.window[1].start)

    def _inside(self, i: int, j: int, pad: int = 0) -> bool:
        return (pad <= i < self.values.shape[0] - pad
                and pad <= j < self.values.shape[1] - pad)

    def value_at(self, node: tuple[int, int]) -> float:
        i, j = self.local_index(node)
        if self._inside(i, j):
            return float(self.values[i, j])
        return 0.0

    def dist_at(self, node: tuple[int, int]) -> float:
        i, j = self.local_index(node)
        if self._inside(i, j):
            return float(self.dist[i, j])
        return np.inf

    def grad_at(self, node: tuple[int, int]) -> np.ndarray:
        i, j = self.local_index(node)
        h = self.spacing
        if not self._inside(i, j, pad=1) or self.dist[i, j] > self.R * self.i0:
            return np.full(2, np.nan)
        u = self.values
        return np.array([
            (u[i + 1, j] - u[i - 1, j]) / (2 * h),
            (u[i, j + 1] - u[i, j - 1]) / (2 * h),
        ])

    def hess_at(self, node: tuple[int, int]) -> np.ndarray:
        i, j = self.local_index(node)
        h = self.spacing
        if not self._inside(i, j, pad=1) or self.dist[i, j] > self.R * self.i0:
            return np.full((2, 2), np.nan)
        u = self.values
        hxx = (u[i + 1, j] - 2 * u[i, j] + u[i - 1, j]) / h**2
        hyy = (u[i, j + 1] - 2 * u[i, j] + u[i, j - 1]) / h**2
        hxy = (u[i + 1, j + 1] + u[i - 1, j - 1]
               - u[i + 1, j - 1] - u[i - 1, j + 1]) / (4 * h**2)
        return np.array([[hxx, hxy], [hxy, hyy]])


def euclidean_cell_oracle(s, i0: float, p, n: int) -> float:
    """Closed-form flat-space cell solution, clamped to zero outside."""
    d2 = float(np.sum((np.asarray(p, float) - np.asarray(s, float)) ** 2))
    return max(i0**2 - d2, 0.0) / (2.0 * n)


def _local_distance(
    m: MetricField, s: tuple[int, int], win: tuple[slice, slice],
    i0: float, order: int,
) -> np.ndarray:
    vals = gridmod.analytic_distance(m, s, window=win)
    if vals is not None:
        return vals
    sub_coeffs = m.coeffs[win]
    sub_mask = m.domain.mask[win]
    s_loc = (s[0] - win[0].start, s[1] - win[1].start)
    qhat = m.qhat
    limit = i0 + 5.0 * m.domain.spacing * math.exp(qhat / 2.0)
    return gridmod.graph_distance(
        sub_coeffs, sub_mask, m.domain.spacing, s_loc, order=order, limit=limit
    )


def solve_cell(
    m: MetricField,
    s: tuple[int, int],
    i0: float,
    R: float = DEFAULT_R,
    order: int = 16,
) -> CellSolution:
    """Solve the cell PDE on B_g(s, i0) with zero Dirichlet data.

    Requires the geodesic ball to sit inside the chart and i0 >= 6h.
    Gradient and coordinate Hessian are attached on the R-interior
    (d_g <= R*i0) by central differences.
    """
    dom = m.domain
    h = dom.spacing
    if i0 < 6.0 * h - 1e-12:
        raise CellError(f"i0={i0} too small for spacing {h}; need i0 >= 6h")
    if not dom.mask[s]:
        raise CellError(f"center {s} is outside the chart")

    reach = int(math.ceil(i0 * math.exp(m.qhat / 2.0) / h)) + 3
    i_lo, i_hi = s[0] - reach, s[0] + reach + 1
    j_lo, j_hi = s[1] - reach, s[1] + reach + 1
    if i_lo < 0 or j_lo < 0 or i_hi > dom.npts or j_hi > dom.npts:
        raise CellError(f"ball around {s} leaves the grid (i0 too large)")
    win = (slice(i_lo, i_hi), slice(j_lo, j_hi))

    dist = _local_distance(m, s, win, i0, order)
    ball = dist < i0
    if not ball.any():
        raise CellError("empty discrete ball")
    if np.any(ball & ~dom.mask[win]):
        raise CellError(f"geodesic ball around {s} touches the chart boundary")
    # the zero extension must have room: nodes adjacent to the ball stay in grid
    if (ball[0, :].any() or ball[-1, :].any()
            or ball[:, 0].any() or ball[:, -1].any()):
        raise CellError(f"ball around {s} touches the window edge")

    g = m.coeffs[win]
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
    sq = np.sqrt(det)
    a11 = sq * g[..., 1, 1] / det
    a22 = sq * g[..., 0, 0] / det
    a12 = -sq * g[..., 0, 1] / det

    values = _solve_window(dist, ball, a11, a22, a12, sq, h, i0)

    # crop storage to the ball bounding box (3-node pad for stencils)
    bi, bj = np.nonzero(ball)
    pad = 3
    ci0 = max(0, bi.min() - pad)
    ci1 = min(ball.shape[0], bi.max() + pad + 1)
    cj0 = max(0, bj.min() - pad)
    cj1 = min(ball.shape[1], bj.max() + pad + 1)
    crop = (slice(ci0, ci1), slice(cj0, cj1))
    gwin = (
        slice(i_lo + ci0, i_lo + ci1),
        slice(j_lo + cj0, j_lo + cj1),
    )
    return CellSolution(
        center=s, i0=i0, R=R, spacing=h, window=gwin,
        dist=np.ascontiguousarray(dist[crop]),
        values=np.ascontiguousarray(values[crop]),
    )


def _solve_window(dist, ball, a11, a22, a12, sq, h, i0) -> np.ndarray:
    """Assemble and solve the divergence-form system on the ball nodes."""
    shape = ball.shape
    idx = -np.ones(shape, dtype=np.int64)
    ii, jj = np.nonzero(ball)
    n_unk = len(ii)
    idx[ii, jj] = np.arange(n_unk)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    diag = np.zeros(n_unk)
    scale = np.ones(n_unk)  # row scaling 2/(h_e + h_w) per axis, applied per term

    def theta_of(d_in, d_out):
        with np.errstate(invalid="ignore"):
            th = (i0 - d_in) / (d_out - d_in)
        th = np.where(np.isfinite(th), th, 1.0)
        return np.clip(th, _MIN_THETA, 1.0)

    for axis, coeff in ((0, a11), (1, a22)):
        step = (1, 0) if axis == 0 else (0, 1)
        d_p = dist[ii + step[0], jj + step[1]]
        d_m = dist[ii - step[0], jj - step[1]]
        in_p = ball[ii + step[0], jj + step[1]]
        in_m = ball[ii - step[0], jj - step[1]]
        c_p = 0.5 * (coeff[ii, jj] + coeff[ii + step[0], jj + step[1]])
        c_m = 0.5 * (coeff[ii, jj] + coeff[ii - step[0], jj - step[1]])
        th_p = np.where(in_p, 1.0, theta_of(dist[ii, jj], d_p))
        th_m = np.where(in_m, 1.0, theta_of(dist[ii, jj], d_m))
        pref = 2.0 / (h * (th_p + th_m))
        # interior couplings
        for sign, th, cc, inn in ((+1, th_p, c_p, in_p), (-1, th_m, c_m, in_m)):
            w = pref * cc / (th * h)
            diag -= w
            sel = np.nonzero(inn)[0]
            rows.append(idx[ii, jj][sel])
            cols.append(idx[ii + sign * step[0], jj + sign * step[1]][sel])
            vals.append(w[sel])
        # boundary crossings contribute 0 Dirichlet data: nothing on the RHS

    # corner-staggered cross term, dropped where any corner leaves the ball
    sgn = [(+1, +1, +1.0), (-1, -1, +1.0), (+1, -1, -1.0), (-1, +1, -1.0)]
    for di, dj, sg in sgn:
        corner_ok = (
            ball[ii + di, jj + dj]
        )
        c_corner = 0.25 * (
            a12[ii, jj] + a12[ii + di, jj] + a12[ii, jj + dj] + a12[ii + di, jj + dj]
        )
        w = sg * c_corner / (2.0 * h * h)
        use = corner_ok & (np.abs(w) > 0)
        sel = np.nonzero(use)[0]
        diag[sel] -= w[sel]
        rows.append(idx[ii, jj][sel])
        cols.append(idx[ii + di, jj + dj][sel])
        vals.append(w[sel])

    rows.append(np.arange(n_unk))
    cols.append(np.arange(n_unk))
    vals.append(diag)
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unk, n_unk),
    )
    b = -sq[ii, jj]
    u = spsolve(A, b)
    res = np.linalg.norm(A @ u - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > 1e-10:
        raise CellError(f"linear solve failed: relative residual {res:.2e}")

    out = np.zeros(shape)
    out[ii, jj] = u
    return out


@dataclass
class CellDeviation:
    """Deviation of a cell solution from the frozen-metric Euclidean oracle."""

    eps_value: float    # max |h - hbar| / i0^2
    eps_grad: float     # max |grad h - grad hbar| / i0
    hess_bound: float   # max |coordinate Hessian|
    grad_bound: float   # max |grad h| / i0


def cell_deviation_report(
    sol: CellSolution, n: int, m: MetricField
) -> CellDeviation:
    """Compare a cell solution against the Euclidean oracle.

    The oracle lives in linear coordinates that normalize the metric at
    the cell center (frozen coefficients), so the comparison region is
    the frozen-metric ball of radius R*i0; for the flat metric this is
    the plain Euclidean oracle.
    """
    dom = m.domain
    h = dom.spacing
    i0, R = sol.i0, sol.R
    win = sol.window
    sx, sy = dom.node_xy(sol.center)
    ax = dom.axis()
    X, Y = np.meshgrid(ax[win[0]], ax[win[1]], indexing="ij")
    dx, dy = X - sx, Y - sy
    g0 = m.coeffs[sol.center]
    d2 = g0[0, 0] * dx**2 + 2 * g0[0, 1] * dx * dy + g0[1, 1] * dy**2
    hbar = np.maximum(i0**2 - d2, 0.0) / (2.0 * n)
    # gradient of hbar: -(g0 (p-s)) / n inside the frozen ball
    gbx = -(g0[0, 0] * dx + g0[0, 1] * dy) / n
    gby = -(g0[0, 1] * dx + g0[1, 1] * dy) / n

    region = (d2 <= (R * i0) ** 2) & sol.interior
    region[[0, -1], :] = False
    region[:, [0, -1]] = False
    if not region.any():
        raise CellError("empty comparison region")
    # derivatives compare only where the difference stencil stays inside
    # the ball: across the rim the zero extension has a kink, and the
    # continuum bounds hold on the open ball
    region_d = region & binary_erosion(sol.ball, np.ones((3, 3), bool))
    if not region_d.any():
        raise CellError("empty derivative comparison region")
    u = sol.values
    gx = np.gradient(u, h, axis=0)
    gy = np.gradient(u, h, axis=1)
    hxx = (np.roll(u, -1, 0) - 2 * u + np.roll(u, 1, 0)) / h**2
    hyy = (np.roll(u, -1, 1) - 2 * u + np.roll(u, 1, 1)) / h**2
    hxy = (np.roll(np.roll(u, -1, 0), -1, 1) + np.roll(np.roll(u, 1, 0), 1, 1)
           - np.roll(np.roll(u, -1, 0), 1, 1)
           - np.roll(np.roll(u, 1, 0), -1, 1)) / (4 * h**2)

    dv = np.abs(u - hbar)[region].max() / i0**2
    de = np.sqrt((gx - gbx) ** 2 + (gy - gby) ** 2)[region_d].max() / i0
    hb = max(np.abs(hxx[region_d]).max(), np.abs(hyy[region_d]).max(),
             np.abs(hxy[region_d]).max())
    gb = np.sqrt(gx**2 + gy**2)[region_d].max() / i0
    return CellDeviation(float(dv), float(de), float(hb), float(gb))


# ---------------------------------------------------------------------------
# memoized cell cache


class CellCache:
    """Thread-safe pure value cache keyed by metric content and cell key."""

    def __init__(self) -> None:
        self._store: dict = {}
        self._lock = threading.Lock()

    def get(
        self,
        m: MetricField,
        s: tuple[int, int],
        i0: float,
        R: float = DEFAULT_R,
        order: int = 16,
    ) -> CellSolution:
        key = (m.content_hash(), s, round(i0, 12), round(R, 12), order)
        with self._lock:
            sol = self._store.get(key)
        if sol is None:
            sol = solve_cell(m, s, i0, R=R, order=order)
            with self._lock:
                sol = self._store.setdefault(key, sol)
        return sol

    def __len__(self) -> int:
        return len(self._store)
