"""Averaged L2 embedding of a chart and its pull-back metric.

Every point p of the interior evaluation region is mapped to the scaled
average function F(p) = i0^(-3n/2+1) * f_p, where

    f_p(q) = sum_s w_s * beta(2n h_s(p)/i0^2) * beta(2n h_s(q)/i0^2)

runs over a strided lattice of cell centers s with vol_g quadrature
weights w_s.  The differential and second derivative of F are assembled
from the cell gradients and Hessians; the pull-back metric gtilde is the
Gram matrix of the partial derivatives in L2(Omega, vol_g).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import grid as gridmod
from .cells import DEFAULT_R, CellCache, CellSolution
from .grid import MetricField, volume_measure


class EmbeddingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cutoff profile


@dataclass(frozen=True)
class CutoffProfile:
    """C^2 ramp: 0 below 1/4, amplitude above 1/2, quintic in between."""

    amplitude: float = 1.0
    rise_lo: float = 0.25
    rise_hi: float = 0.5

    def _tau(self, t):
        return np.clip((np.asarray(t, float) - self.rise_lo)
                       / (self.rise_hi - self.rise_lo), 0.0, 1.0)

    def beta(self, t):
        tau = self._tau(t)
        return self.amplitude * tau**3 * (10.0 + tau * (-15.0 + 6.0 * tau))

    def dbeta(self, t):
        tau = self._tau(t)
        inside = (np.asarray(t, float) > self.rise_lo) & (np.asarray(t, float) < self.rise_hi)
        d = 30.0 * tau**2 * (1.0 - tau) ** 2 / (self.rise_hi - self.rise_lo)
        return self.amplitude * np.where(inside, d, 0.0)

    def d2beta(self, t):
        tau = self._tau(t)
        inside = (np.asarray(t, float) > self.rise_lo) & (np.asarray(t, float) < self.rise_hi)
        d = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau) / (self.rise_hi - self.rise_lo) ** 2
        return self.amplitude * np.where(inside, d, 0.0)

    def with_amplitude(self, amplitude: float) -> "CutoffProfile":
        return CutoffProfile(amplitude, self.rise_lo, self.rise_hi)


def build_cutoff(n: int) -> CutoffProfile:
    """Uncalibrated (amplitude 1) cutoff profile."""
    return CutoffProfile(amplitude=1.0)


# ---------------------------------------------------------------------------
# flat-space calibration


def _flat_radial_derivative(
    cutoff: CutoffProfile, u: np.ndarray, ds: float
) -> np.ndarray:
    """d/du of the flat profile ftilde(2, u) at unit scale, by quadrature.

    ftilde(u) = int beta(1-|s|^2) beta(1-|s-u e1|^2) ds over the plane.
    """
    lim = math.sqrt(3.0) / 2.0 + 2 * ds
    sx = np.arange(-lim, 2.0 + lim, ds)
    sy = np.arange(-lim, lim, ds)
    SX, SY = np.meshgrid(sx, sy, indexing="ij")
    b_fixed = cutoff.beta(1.0 - SX**2 - SY**2)
    supp = b_fixed > 0
    bs = b_fixed[supp]
    px, py = SX[supp], SY[supp]
    out = np.empty_like(u)
    for k, uk in enumerate(u):
        t = 1.0 - (px - uk) ** 2 - py**2
        out[k] = np.sum(bs * cutoff.dbeta(t) * 2.0 * (px - uk)) * ds * ds
    return out


def normalization_integral(
    cutoff: CutoffProfile, n: int = 2, ds: float = 1.0 / 200, du: float = 1.0 / 400
) -> float:
    """vol(S^{n-1})/n * int_0^2 r^{n-1} ftilde'(n, r)^2 dr by quadrature."""
    if n != 2:
        raise EmbeddingError("calibration is shipped for n=2 only")
    u = np.arange(0.0, 2.0 + du / 2, du)
    fp = _flat_radial_derivative(cutoff, u, ds)
    return float(2.0 * math.pi / n * np.trapezoid(u ** (n - 1) * fp**2, u))


def calibrate_normalization(n: int, cutoff: CutoffProfile | None = None) -> float:
    """Amplitude B_n that makes the flat-space embedding isometric.

    The normalization integral is quartic in the amplitude, so
    B_n = I(amplitude=1)^(-1/4).  Raises if two quadrature refinements
    disagree by more than 0.1%.
    """
    cutoff = (cutoff or build_cutoff(n)).with_amplitude(1.0)
    coarse = normalization_integral(cutoff, n, ds=1.0 / 100, du=1.0 / 200)
    fine = normalization_integral(cutoff, n, ds=1.0 / 200, du=1.0 / 400)
    if abs(fine - coarse) > 1e-3 * abs(fine):
        raise EmbeddingError(
            f"calibration quadrature did not converge: {coarse} vs {fine}"
        )
    return float(fine ** -0.25)


@lru_cache(maxsize=4)
def calibrated_cutoff(n: int = 2) -> CutoffProfile:
    return build_cutoff(n).with_amplitude(calibrate_normalization(n))


# ---------------------------------------------------------------------------
# L2 vectors


@dataclass
class L2Vector:
    """Scalar field on the chart grid paired with vol_g quadrature weights."""

    field: np.ndarray
    weights: np.ndarray

    def dot(self, other: "L2Vector") -> float:
        return float(np.sum(self.field * other.field * self.weights))

    def norm(self) -> float:
        return math.sqrt(max(self.dot(self), 0.0))

    def __add__(self, other: "L2Vector") -> "L2Vector":
        return L2Vector(self.field + other.field, self.weights)

    def __sub__(self, other: "L2Vector") -> "L2Vector":
        return L2Vector(self.field - other.field, self.weights)

    def __mul__(self, c: float) -> "L2Vector":
        return L2Vector(self.field * c, self.weights)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# embedding kernel


@dataclass
class PullbackField:
    points: list          # global node indices
    gtilde: np.ndarray    # (npoints, 2, 2)
    ratio_lo: np.ndarray  # (npoints,)
    ratio_hi: np.ndarray  # (npoints,)

    @property
    def max_log_ratio(self) -> float:
        return float(
            max(np.abs(np.log(self.ratio_lo)).max(),
                np.abs(np.log(self.ratio_hi)).max())
        )


class EmbeddingKernel:
    """Cutoff, cell quadrature plan, and evaluation region for one chart.

    The s-integral runs over a stride-subsampled node lattice centered on
    the grid origin, with vol_g midpoint weights (Lebesgue optional).
    """

    def __init__(
        self,
        metric: MetricField,
        i0: float,
        cutoff: CutoffProfile | None = None,
        stride: int = 1,
        R: float = DEFAULT_R,
        order: int = 16,
        margin: float = 2.5,
        measure: str = "vol_g",
        cache: CellCache | None = None,
    ) -> None:
        dom = metric.domain
        self.metric = metric
        self.i0 = float(i0)
        self.n = dom.dim
        self.cutoff = cutoff if cutoff is not None else calibrated_cutoff(dom.dim)
        self.stride = int(stride)
        self.R = R
        self.order = order
        self.measure = measure
        self.cache = cache if cache is not None else CellCache()
        self._cell_fields: dict = {}
        self._s_near_cache: dict = {}

        h = dom.spacing
        stretch = math.exp(metric.qhat / 2.0)
        X, Y = dom.coords()
        rr = np.hypot(X, Y)
        reach = (math.ceil(self.i0 * stretch / h) + 3) * h
        ci = dom.center_index
        on_lattice = np.zeros_like(dom.mask)
        on_lattice[ci[0] % self.stride::self.stride,
                   ci[1] % self.stride::self.stride] = True
        self.s_ok = dom.mask & on_lattice & (rr <= dom.radius - reach - h)
        # the margin must leave room for every cell center within geodesic
        # distance 0.9 i0 of an evaluation point, or cells would be
        # silently clipped near the region edge
        min_margin = 0.9 + (reach + h) / (self.i0 * stretch)
        if margin < min_margin:
            raise EmbeddingError(
                f"margin {margin} too small; need >= {min_margin:.3f} "
                "so every cell of an evaluation point stays solvable"
            )
        self.eval_region = dom.mask & (rr <= dom.radius - margin * self.i0 * stretch)
        if not self.eval_region.any():
            raise EmbeddingError("evaluation region is empty; enlarge the chart")
        if measure == "vol_g":
            self.weights = volume_measure(metric).weights
        elif measure == "lebesgue":
            self.weights = np.where(dom.mask, h**dom.dim, 0.0)
        else:
            raise EmbeddingError(f"unknown measure {measure!r}")
        self._s_reach = self.i0 * stretch + 2 * h

    # -- cells ------------------------------------------------------------

    def cell(self, s: tuple[int, int]) -> CellSolution:
        return self.cache.get(self.metric, s, self.i0, R=self.R, order=self.order)

    def cell_field(self, s: tuple[int, int]):
        """(window, beta(2n h_s/i0^2) restricted to d_g <= 0.9 i0) for one cell.

        The stored array is cropped to the bounding box of the cutoff
        support, which is well inside the cell ball.
        """
        got = self._cell_fields.get(s)
        if got is None:
            sol = self.cell(s)
            t = 2.0 * self.n * sol.values / self.i0**2
            u = self.cutoff.beta(t)
            u[sol.dist > 0.9 * self.i0] = 0.0
            bi, bj = np.nonzero(u)
            if len(bi) == 0:
                raise EmbeddingError(
                    f"cutoff support of cell {s} is empty; i0 too small"
                )
            ci0, ci1 = int(bi.min()), int(bi.max()) + 1
            cj0, cj1 = int(bj.min()), int(bj.max()) + 1
            win = (
                slice(sol.window[0].start + ci0, sol.window[0].start + ci1),
                slice(sol.window[1].start + cj0, sol.window[1].start + cj1),
            )
            got = (win, np.ascontiguousarray(u[ci0:ci1, cj0:cj1]))
            self._cell_fields[s] = got
        return got

    def s_near(self, p: tuple[int, int]) -> list[tuple[int, int]]:
        """Lattice cell centers within geodesic distance 0.9*i0 of p.

        The cutoff factor beta(2n h_s(p)/i0^2) vanishes once d_g(p, s)
        exceeds sqrt(3)/2 * i0, so this selection is exhaustive.
        """
        got = self._s_near_cache.get(p)
        if got is not None:
            return got
        dom = self.metric.domain
        h = dom.spacing
        rad = int(math.ceil(self._s_reach / h))
        i_lo, i_hi = max(0, p[0] - rad), min(dom.npts, p[0] + rad + 1)
        j_lo, j_hi = max(0, p[1] - rad), min(dom.npts, p[1] + rad + 1)
        win = (slice(i_lo, i_hi), slice(j_lo, j_hi))
        d = gridmod.analytic_distance(self.metric, p, window=win)
        if d is None:
            d = gridmod.graph_distance(
                self.metric.coeffs[win], dom.mask[win], h,
                (p[0] - i_lo, p[1] - j_lo), order=self.order,
                limit=0.95 * self.i0,
            )
        sel = self.s_ok[win] & (d <= 0.9 * self.i0)
        ii, jj = np.nonzero(sel)
        out = [(int(i) + i_lo, int(j) + j_lo) for i, j in zip(ii, jj)]
        self._s_near_cache[p] = out
        return out

    def _check_eval(self, p: tuple[int, int]) -> None:
        if not self.eval_region[p]:
            raise EmbeddingError(f"point {p} outside the evaluation region")

    def _s_terms(self, p: tuple[int, int]):
        """Per-cell data at p: (s, w_s, t, beta', beta'', grad, hess)."""
        w = self.weights
        fac = self.stride**self.n
        terms = []
        for s in self.s_near(p):
            sol = self.cell(s)
            # mirror the 0.9*i0 support clamp applied on the q side so that
            # f_p(q) = f_q(p) holds exactly on the discrete level
            if sol.dist_at(p) > 0.9 * self.i0:
                continue
            t = 2.0 * self.n * sol.value_at(p) / self.i0**2
            terms.append((s, fac * w[s], t, sol))
        return terms

    # -- embedding maps ---------------------------------------------------

    def scale_f(self) -> float:
        return self.i0 ** (-1.5 * self.n + 1.0)

    def embedding_function(self, p: tuple[int, int]) -> np.ndarray:
        """The averaged function f_p over the whole chart grid (unscaled)."""
        self._check_eval(p)
        dom = self.metric.domain
        out = np.zeros((dom.npts, dom.npts))
        for s, ws, t, _sol in self._s_terms(p):
            bp = float(self.cutoff.beta(t))
            if bp == 0.0:
                continue
            win, u = self.cell_field(s)
            out[win] += ws * bp * u
        return out

    def embedding_differential(self, p: tuple[int, int], v) -> L2Vector:
        """d_v F at p as an L2 vector (includes the i0 scaling)."""
        self._check_eval(p)
        v = np.asarray(v, dtype=float)
        dom = self.metric.domain
        out = np.zeros((dom.npts, dom.npts))
        pref = 2.0 * self.n * self.i0 ** (-1.5 * self.n)
        for s, ws, t, sol in self._s_terms(p):
            db = float(self.cutoff.dbeta(t))
            if db == 0.0:
                continue
            gv = float(sol.grad_at(p) @ v) / self.i0
            if not np.isfinite(gv):
                continue
            win, u = self.cell_field(s)
            out[win] += (pref * ws * db * gv) * u
        return L2Vector(out, self.weights)

    def embedding_hessian(self, p: tuple[int, int], v, w) -> L2Vector:
        """Second coordinate derivative of F at p along (v, w)."""
        self._check_eval(p)
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        dom = self.metric.domain
        out = np.zeros((dom.npts, dom.npts))
        pref2 = 4.0 * self.n**2 * self.i0 ** (-1.5 * self.n - 1.0)
        pref1 = 2.0 * self.n * self.i0 ** (-1.5 * self.n - 1.0)
        for s, ws, t, sol in self._s_terms(p):
            db = float(self.cutoff.dbeta(t))
            d2b = float(self.cutoff.d2beta(t))
            if db == 0.0 and d2b == 0.0:
                continue
            gp = sol.grad_at(p) / self.i0
            hp = sol.hess_at(p)
            if not np.all(np.isfinite(gp)):
                continue
            coef = pref2 * d2b * float(gp @ v) * float(gp @ w) \
                + pref1 * db * float(v @ hp @ w)
            if coef == 0.0:
                continue
            win, u = self.cell_field(s)
            out[win] += ws * coef * u
        return L2Vector(out, self.weights)

    # -- pull-back metric -------------------------------------------------

    def gtilde(self, p: tuple[int, int]) -> np.ndarray:
        """Pull-back metric gtilde_ij(p) = <d_i F, d_j F>_{L2(vol_g)}."""
        self._check_eval(p)
        pref = 2.0 * self.n * self.i0 ** (-1.5 * self.n)
        active = []
        coefs = []
        for s, ws, t, sol in self._s_terms(p):
            db = float(self.cutoff.dbeta(t))
            if db == 0.0:
                continue
            gp = sol.grad_at(p)
            if not np.all(np.isfinite(gp)):
                continue
            active.append(s)
            coefs.append(pref * ws * db * gp / self.i0)
        if not active:
            raise EmbeddingError(f"no active cells at {p}; i0 too small?")
        a = np.array(coefs)                       # (ns, 2)
        M = self._overlap_gram(active)            # (ns, ns)
        return a.T @ M @ a

    def _overlap_gram(self, ss: list[tuple[int, int]]) -> np.ndarray:
        wins = [self.cell_field(s) for s in ss]
        i_lo = min(win[0].start for win, _ in wins)
        i_hi = max(win[0].stop for win, _ in wins)
        j_lo = min(win[1].start for win, _ in wins)
        j_hi = max(win[1].stop for win, _ in wins)
        U = np.zeros((len(ss), i_hi - i_lo, j_hi - j_lo))
        for k, (win, u) in enumerate(wins):
            U[k, win[0].start - i_lo:win[0].stop - i_lo,
              win[1].start - j_lo:win[1].stop - j_lo] = u
        wq = self.weights[i_lo:i_hi, j_lo:j_hi]
        flat = U.reshape(len(ss), -1)
        return (flat * wq.reshape(1, -1)) @ flat.T


def pullback_metric(kernel: EmbeddingKernel, points) -> PullbackField:
    """Evaluate gtilde and quasi-isometry ratios at the given grid nodes."""
    pts = [tuple(p) for p in points]
    gt = np.empty((len(pts), 2, 2))
    lo = np.empty(len(pts))
    hi = np.empty(len(pts))
    import scipy.linalg

    for k, p in enumerate(pts):
        gt[k] = kernel.gtilde(p)
        gp = kernel.metric.coeffs[p]
        ev = scipy.linalg.eigh(gt[k], gp, eigvals_only=True)
        lo[k], hi[k] = ev[0], ev[-1]
    return PullbackField(pts, gt, lo, hi)


def eval_net(kernel: EmbeddingKernel, spacing_nodes: int) -> list[tuple[int, int]]:
    """Deterministic sample net of evaluation points (lattice through center)."""
    dom = kernel.metric.domain
    ci = dom.center_index
    pts = []
    for i in range(ci[0] % spacing_nodes, dom.npts, spacing_nodes):
        for j in range(ci[1] % spacing_nodes, dom.npts, spacing_nodes):
            if kernel.eval_region[i, j]:
                pts.append((i, j))
    return pts
