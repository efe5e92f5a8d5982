"""Chart and atlas regularity norms on a scale.

A chart's norm components measure (1) how far the metric eigenvalues
stray from 1 (quasi-isometry constant), (3) scaled Holder or L^p norms
of the metric derivatives, (4') the divergence-form harmonicity residual,
and -- for an atlas -- (2) the minimal Q whose shrunken balls of radius
(r/10) e^{-Q} are each contained in a single chart.  The combined value
is an upper-bound witness for the infimum over all atlases.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    ChartDomain,
    GridError,
    MetricField,
    interior_mask,
    metric_eigen_bounds,
    volume_measure,
)

MAX_PAIRS = 10**6

Q_MAX = 50.0


class NormError(ValueError):
    pass


@dataclass(frozen=True)
class NormFlavor:
    """Which norm family and options to use.

    kind: "holder" (C^{k,alpha}) or "sobolev" (L^{k,p});
    harmonic: include the condition-4' residual;
    weak: charts may be local diffeomorphisms (double points allowed).
    """

    kind: str = "holder"
    harmonic: bool = False
    weak: bool = False

    def __post_init__(self):
        if self.kind not in ("holder", "sobolev"):
            raise NormError(f"unknown norm kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "NormFlavor":
        """Parse CLI syntax like "c,harmonic,weak" or "l"."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts or parts[0] not in ("c", "l"):
            raise NormError(f"flavor must start with 'c' or 'l': {text!r}")
        kind = "holder" if parts[0] == "c" else "sobolev"
        opts = set(parts[1:])
        unknown = opts - {"harmonic", "weak"}
        if unknown:
            raise NormError(f"unknown flavor options: {sorted(unknown)}")
        return cls(kind, "harmonic" in opts, "weak" in opts)

    def label(self) -> str:
        out = "c" if self.kind == "holder" else "l"
        if self.harmonic:
            out += ",harmonic"
        if self.weak:
            out += ",weak"
        return out


# ---------------------------------------------------------------------------
# seminorms and residuals


def _masked_points(domain: ChartDomain):
    ii, jj = np.nonzero(domain.mask)
    ax = domain.axis()
    return ii, jj, np.column_stack([ax[ii], ax[jj]])


def holder_seminorm(domain: ChartDomain, values: np.ndarray, alpha: float) -> float:
    """sup |u(x)-u(y)| / |x-y|^alpha over masked node pairs.

    All pairs are used when their count is at most 10^6; otherwise the
    node list is subsampled by a fixed stride (deterministic).
    """
    if not 0.0 < alpha < 1.0:
        raise NormError(f"alpha must lie in (0,1), got {alpha}")
    ii, jj, xy = _masked_points(domain)
    if len(ii) < 2:
        raise NormError("need at least 2 masked nodes")
    u = values[ii, jj]
    npts = len(u)
    if npts * (npts - 1) // 2 > MAX_PAIRS:
        stride = int(math.ceil(npts / math.sqrt(2 * MAX_PAIRS)))
        u = u[::stride]
        xy = xy[::stride]
    diff = np.abs(u[:, None] - u[None, :])
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    iu = np.triu_indices(len(u), k=1)
    return float(np.max(diff[iu] / d[iu] ** alpha))


def harmonic_residual_field(m: MetricField) -> np.ndarray:
    """Per-component fields sum_i d_i(g^{ij} sqrt(det g)), shape (n, ...)."""
    h = m.domain.spacing
    a = m.inverse() * m.sqrt_det()[..., None, None]   # a^{ij}
    out = np.zeros((m.domain.dim,) + a.shape[:-2])
    for j in range(m.domain.dim):
        for i, axis in ((0, 0), (1, 1)):
            out[j] += np.gradient(a[..., i, j], h, axis=axis)
    return out


def harmonic_residual(m: MetricField) -> float:
    """sup over j and interior nodes of |sum_i d_i(g^{ij} sqrt(det g))|.

    This vanishes identically when the chart coordinates are harmonic
    for the metric (condition 4'); central differences, two-cell margin.
    """
    div = harmonic_residual_field(m)
    inner = interior_mask(m.domain.mask, cells=2)
    if not inner.any():
        return 0.0
    return float(np.abs(div[:, inner]).max())


def _derivative_fields(values: np.ndarray, h: float, order: tuple[int, int]):
    out = values
    for axis, cnt in enumerate(order):
        for _ in range(cnt):
            out = np.gradient(out, h, axis=axis)
    return out


def _multi_indices(k: int):
    return [(a, b) for a in range(k + 1) for b in range(k + 1 - a)]


# ---------------------------------------------------------------------------
# per-chart components


@dataclass
class NormComponents:
    """Minimal per-condition Q values for one chart at one scale."""

    scale: float
    flavor: NormFlavor
    k: int
    exponent: float               # alpha for holder, p for sobolev
    q_quasi: float
    q_deriv: float
    harmonic: float | None = None

    def as_dict(self) -> dict:
        return {
            "scale": self.scale,
            "flavor": self.flavor.label(),
            "k": self.k,
            "exponent": self.exponent,
            "q_quasi": self.q_quasi,
            "q_deriv": self.q_deriv,
            "harmonic_residual": self.harmonic,
        }


def chart_norm_components(
    m: MetricField,
    r: float,
    flavor: NormFlavor,
    k: int = 1,
    exponent: float = 0.5,
    measure: str = "vol_g",
) -> NormComponents:
    """Per-condition minimal Q values for one chart.

    The |j| = 0 Holder term measures g - delta (so the flat metric has
    every component equal to zero at every scale); derivative terms use
    r^{|j|+alpha} [d^j g]_{C^alpha} resp. r^{|j|-n/p} ||d^j g||_{L^p}
    for 1 <= |j| <= k.
    """
    if k > 2:
        raise NormError("k <= 2 supported")
    dom = m.domain
    if k >= 1 and dom.npts < 9:
        raise NormError("insufficient resolution for derivative norms")
    h = dom.spacing
    n = dom.dim
    q_quasi = metric_eigen_bounds(m)
    q_deriv = 0.0
    delta = np.eye(n)
    if flavor.kind == "holder":
        alpha = exponent
        if not 0.0 < alpha < 1.0:
            raise NormError(f"alpha must lie in (0,1), got {alpha}")
        for order in _multi_indices(k):
            oj = sum(order)
            for i in range(n):
                for j in range(i, n):
                    comp = m.coeffs[..., i, j]
                    if oj == 0:
                        fld = comp - delta[i, j]
                    else:
                        fld = _derivative_fields(comp, h, order)
                    sup = float(np.abs(fld[dom.mask]).max())
                    semi = holder_seminorm(dom, fld, alpha)
                    q_deriv = max(q_deriv, r ** (oj + alpha) * (sup + semi))
    else:
        p = exponent
        if p < 1.0:
            raise NormError(f"p must be >= 1, got {p}")
        if measure == "vol_g":
            w = volume_measure(m).weights
        elif measure == "lebesgue":
            w = np.where(dom.mask, h**n, 0.0)
        else:
            raise NormError(f"unknown measure {measure!r}")
        for order in _multi_indices(k):
            oj = sum(order)
            if oj == 0:
                continue          # L^{k,p} condition runs over 1 <= |j| <= k
            for i in range(n):
                for j in range(i, n):
                    fld = _derivative_fields(m.coeffs[..., i, j], h, order)
                    lp = float(np.sum(np.abs(fld) ** p * w) ** (1.0 / p))
                    q_deriv = max(q_deriv, r ** (oj - n / p) * lp)
    harm = harmonic_residual(m) if flavor.harmonic else None
    return NormComponents(r, flavor, k, exponent, q_quasi, q_deriv, harm)


def _periodic_derivative(values: np.ndarray, h: float, order: tuple[int, int]):
    out = values
    for axis, cnt in enumerate(order):
        for _ in range(cnt):
            out = (np.roll(out, -1, axis=axis) - np.roll(out, 1, axis=axis)) / (
                2.0 * h
            )
    return out


def _periodic_holder_seminorm(values: np.ndarray, side: float, alpha: float):
    """sup |u(x)-u(y)| / d_T(x,y)^alpha over a periodic node grid."""
    npts = values.shape[0]
    h = side / npts
    ax = np.arange(npts) * h
    u = values.ravel()
    xy = np.array(list(itertools.product(ax, ax)))
    if len(u) * (len(u) - 1) // 2 > MAX_PAIRS:
        stride = int(math.ceil(len(u) / math.sqrt(2 * MAX_PAIRS)))
        u = u[::stride]
        xy = xy[::stride]
    d = xy[:, None, :] - xy[None, :, :]
    d -= side * np.round(d / side)
    dist = np.linalg.norm(d, axis=-1)
    diff = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), k=1)
    return float(np.max(diff[iu] / dist[iu] ** alpha))


def periodic_norm_components(
    gbar: np.ndarray,
    side: float,
    r: float,
    alpha: float = 0.5,
    k: int = 1,
) -> dict:
    """Holder norm components of a metric sampled on a periodic net.

    gbar has shape (npts, npts, dim, dim) over a uniform grid covering a
    flat-torus fundamental domain of the given side; derivatives wrap
    around.  The |j| = 0 term measures g - delta, derivative terms are
    r^{|j|+alpha} ([d^j g]_sup + [d^j g]_{C^alpha}) for 1 <= |j| <= k,
    mirroring chart_norm_components on a boundaryless grid.
    """
    if gbar.ndim != 4 or gbar.shape[0] != gbar.shape[1]:
        raise NormError("gbar must have shape (npts, npts, dim, dim)")
    if not 0.0 < alpha < 1.0:
        raise NormError(f"alpha must lie in (0,1), got {alpha}")
    npts = gbar.shape[0]
    n = gbar.shape[2]
    h = side / npts
    delta = np.eye(n)
    lam = np.linalg.eigvalsh(gbar)
    q_quasi = float(np.abs(np.log(lam)).max())
    per_order: dict[tuple[int, int], float] = {}
    q_deriv = 0.0
    for order in _multi_indices(k):
        oj = sum(order)
        best = 0.0
        for i in range(n):
            for j in range(i, n):
                comp = gbar[..., i, j]
                if oj == 0:
                    fld = comp - delta[i, j]
                else:
                    fld = _periodic_derivative(comp, h, order)
                sup = float(np.abs(fld).max())
                semi = _periodic_holder_seminorm(fld, side, alpha)
                best = max(best, r ** (oj + alpha) * (sup + semi))
        per_order[order] = best
        q_deriv = max(q_deriv, best)
    return {
        "q_quasi": q_quasi,
        "q_deriv": q_deriv,
        "per_order": per_order,
        "scale": r,
        "alpha": alpha,
        "k": k,
    }


# ---------------------------------------------------------------------------
# atlases


@dataclass
class ChartAtlas:
    """Charts with their placement on the underlying manifold model.

    model "single": one chart, centers ignored.  model "flat_torus":
    chart map phi_s(x) = center_s + x mod side per axis (a local
    diffeomorphism; injective only when every chart diameter < side).
    """

    charts: list[MetricField]
    model: str = "single"
    side: float | None = None
    centers: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.model not in ("single", "flat_torus"):
            raise NormError(f"unknown manifold model {self.model!r}")
        if self.model == "flat_torus":
            if self.side is None or self.side <= 0:
                raise NormError("flat_torus model needs a positive side")
            if len(self.centers) != len(self.charts):
                raise NormError("one center per chart required")


@dataclass
class ScaledNormReport:
    scale: float
    flavor: NormFlavor
    k: int
    exponent: float
    q_quasi: float
    q_deriv: float
    q_cover: float | None         # None = single-chart mode (not applicable)
    harmonic: float | None
    norm_value: float | None      # None = no finite witness found
    covered: bool
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "scale": self.scale,
            "flavor": self.flavor.label(),
            "k": self.k,
            "exponent": self.exponent,
            "q_quasi": self.q_quasi,
            "q_deriv": self.q_deriv,
            "q_cover": self.q_cover,
            "harmonic_residual": self.harmonic,
            "norm_value": self.norm_value,
            "covered": self.covered,
            "notes": self.notes,
        }


def _torus_wrap(x: np.ndarray, side: float) -> np.ndarray:
    return np.mod(x, side)


def _chart_injective(radius: float, side: float) -> bool:
    # a torus chart doubles back iff some nonzero lattice vector is
    # shorter than the chart diameter
    return side >= 2.0 * radius


def _covering_clearance(atlas: ChartAtlas, net: np.ndarray) -> np.ndarray:
    """Best-chart geodesic clearance of each net point from chart edges.

    Clearance lower bound: a metric with eigenvalues >= e^{-Q_hat} on
    the chart stretches coordinate distances by at least e^{-Q_hat/2},
    so d_g(p, chart boundary) >= e^{-Q_hat/2} (r - |p_tilde|).
    """
    out = np.zeros(len(net))
    for m, center in zip(atlas.charts, _chart_centers(atlas)):
        r = m.domain.radius
        lo = math.exp(-metric_eigen_bounds(m) / 2.0)
        if atlas.model == "flat_torus":
            d = net - np.asarray(center)
            d = d - atlas.side * np.round(d / atlas.side)
            rr = np.linalg.norm(d, axis=1)
        else:
            rr = np.linalg.norm(net - np.asarray(center), axis=1)
        out = np.maximum(out, lo * np.clip(r - rr, 0.0, None))
    return out


def _chart_centers(atlas: ChartAtlas):
    if atlas.model == "flat_torus":
        return atlas.centers
    return [(0.0, 0.0)] * len(atlas.charts)


def covering_net(atlas: ChartAtlas, spacing: float) -> np.ndarray:
    """Deterministic sample net of manifold points."""
    if atlas.model == "flat_torus":
        k = max(1, int(round(atlas.side / spacing)))
        ax = np.arange(k) * (atlas.side / k)
        return np.array(list(itertools.product(ax, ax)))
    dom = atlas.charts[0].domain
    ii, jj, xy = _masked_points(dom)
    step = max(1, int(round(spacing / dom.spacing)))
    sel = (ii % step == 0) & (jj % step == 0)
    return xy[sel]


def atlas_norm_on_scale(
    atlas: ChartAtlas,
    r: float,
    flavor: NormFlavor,
    k: int = 1,
    exponent: float = 0.5,
    net_spacing: float | None = None,
    measure: str = "vol_g",
) -> ScaledNormReport:
    """Combined norm-on-scale witness for an atlas.

    norm_value is the minimal Q (found by bisection, since larger Q
    shrinks the required covering balls) such that the quasi-isometry
    and derivative components are <= Q and every net ball of radius
    (r/10) e^{-Q} lies in a single chart.  Single-chart mode skips the
    covering condition.
    """
    notes: list[str] = []
    for m in atlas.charts:
        if m.domain.radius < r - 1e-12:
            raise NormError(
                f"chart radius {m.domain.radius} below requested scale {r}"
            )
    if not flavor.weak and atlas.model == "flat_torus":
        if not _chart_injective(atlas.charts[0].domain.radius, atlas.side):
            raise NormError("chart not injective: wrapping charts need the weak flavor")
    comps = [
        chart_norm_components(m, r, flavor, k, exponent, measure)
        for m in atlas.charts
    ]
    q_quasi = max(c.q_quasi for c in comps)
    q_deriv = max(c.q_deriv for c in comps)
    harm = max(c.harmonic for c in comps) if flavor.harmonic else None
    base = max(q_quasi, q_deriv, harm or 0.0)

    if atlas.model == "single":
        notes.append("single-chart mode: covering condition not applicable")
        value = base
        return ScaledNormReport(r, flavor, k, exponent, q_quasi, q_deriv,
                                None, harm, value, True, notes)

    if net_spacing is None:
        net_spacing = min(m.domain.spacing for m in atlas.charts)
    net = covering_net(atlas, net_spacing)
    clearance = _covering_clearance(atlas, net)

    def covers(q: float) -> bool:
        return bool(np.all(clearance >= (r / 10.0) * math.exp(-q)))

    if not covers(Q_MAX):
        notes.append("no finite norm witness: covering fails for all Q <= Q_max")
        return ScaledNormReport(r, flavor, k, exponent, q_quasi, q_deriv,
                                None, harm, None, False, notes)
    if covers(base):
        q_cover = base
    else:
        lo, hi = base, Q_MAX
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if covers(mid):
                hi = mid
            else:
                lo = mid
        q_cover = hi
    value = max(base, q_cover)
    return ScaledNormReport(r, flavor, k, exponent, q_quasi, q_deriv,
                            q_cover, harm, value, True, notes)
