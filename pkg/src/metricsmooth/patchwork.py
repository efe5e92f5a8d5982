"""Glue per-chart smoothed metrics into a global metric on a flat-torus
quotient.

Charts are translated copies of a disk: phi_s(x) = c_s + x (mod L per
axis).  Deck transformations are lattice translations, so chart-to-chart
correspondences are exact translations; the generic curve-lifting
construction is still exercised and must agree with them.  The global
metric is assembled on a sample net with provenance, and well-definedness
is verified by comparing all candidate definitions at every net point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as gridmod
from .embedding import EmbeddingKernel, PullbackField, pullback_metric
from .grid import ChartDomain, MetricField, build_chart_domain


class PatchworkError(ValueError):
    pass


def wrap_coords(x: np.ndarray, side: float) -> np.ndarray:
    """Canonical fundamental-domain representative in [0, side)."""
    return np.mod(np.asarray(x, float), side)


def nearest_representative(x: np.ndarray, ref: np.ndarray, side: float) -> np.ndarray:
    """Lattice-orbit representative of x closest to ref."""
    x = np.asarray(x, float)
    ref = np.asarray(ref, float)
    return x - side * np.round((x - ref) / side)


@dataclass
class QuotientModel:
    """Flat torus with a periodic conformal metric e^{2 phi} delta.

    phi_expr is evaluated at fundamental-domain coordinates; a sampled
    periodic array is also accepted (bilinear interpolation).
    """

    side: float
    chart_centers: list[tuple[float, float]]
    chart_radius: float
    phi_expr: str | None = None
    phi_samples: np.ndarray | None = None
    kind: str = "flat_torus"

    def __post_init__(self):
        if self.kind != "flat_torus":
            raise PatchworkError(f"unsupported quotient kind {self.kind!r}")
        if self.side <= 0 or self.chart_radius <= 0:
            raise PatchworkError("side and chart_radius must be positive")
        if (self.phi_expr is None) == (self.phi_samples is None):
            raise PatchworkError("provide exactly one of phi_expr / phi_samples")
        if self.phi_samples is not None:
            arr = np.asarray(self.phi_samples, float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise PatchworkError("phi_samples must be a square 2-D array")
            self.phi_samples = arr

    @property
    def wrapping(self) -> bool:
        """Charts wrap (local-diffeomorphism-only) when diameter > side."""
        return 2.0 * self.chart_radius > self.side

    def phi_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        u = wrap_coords(x, self.side)
        v = wrap_coords(y, self.side)
        if self.phi_expr is not None:
            return gridmod._eval_expr(self.phi_expr, u, v)
        arr = self.phi_samples
        k = arr.shape[0]
        fu = u / self.side * k
        fv = v / self.side * k
        iu = np.floor(fu).astype(int) % k
        iv = np.floor(fv).astype(int) % k
        tu = fu - np.floor(fu)
        tv = fv - np.floor(fv)
        a = arr[iu, iv]
        b = arr[(iu + 1) % k, iv]
        c = arr[iu, (iv + 1) % k]
        d = arr[(iu + 1) % k, (iv + 1) % k]
        return (a * (1 - tu) * (1 - tv) + b * tu * (1 - tv)
                + c * (1 - tu) * tv + d * tu * tv)


def build_chart_metric(
    model: QuotientModel, center: tuple[float, float], nodes_per_diameter: int
) -> MetricField:
    """Sample the quotient metric in one chart's coordinates."""
    dom = build_chart_domain(2, model.chart_radius, nodes_per_diameter)
    X, Y = dom.coords()
    phi = model.phi_at(center[0] + X, center[1] + Y)
    g = np.zeros(phi.shape + (2, 2))
    f = np.exp(2.0 * phi)
    g[..., 0, 0] = f
    g[..., 1, 1] = f
    return MetricField(dom, g, "conformal-quotient", {"center": tuple(center)})


def build_atlas_metrics(
    model: QuotientModel, nodes_per_diameter: int
) -> list[MetricField]:
    return [
        build_chart_metric(model, c, nodes_per_diameter)
        for c in model.chart_centers
    ]


# ---------------------------------------------------------------------------
# curve lifting and ball correspondence


def lift_curve(
    model: QuotientModel,
    center: tuple[float, float],
    start_preimage: np.ndarray,
    curve: np.ndarray,
) -> np.ndarray:
    """Lift a polyline on the torus through one chart map.

    At every vertex the lift continues to the lattice representative
    nearest the current preimage; leaving the chart ball is an error
    (the continuation guarantee is checked, not assumed).
    """
    q = np.asarray(start_preimage, float).copy()
    curve = np.atleast_2d(np.asarray(curve, float))
    c = np.asarray(center, float)
    start_img = wrap_coords(c + q, model.side)
    if not np.allclose(start_img, wrap_coords(curve[0], model.side), atol=1e-9):
        raise PatchworkError("curve does not start at the given preimage")
    for vertex in curve[1:]:
        q = nearest_representative(np.asarray(vertex, float) - c, q, model.side)
        if np.linalg.norm(q) >= model.chart_radius:
            raise PatchworkError("lift exits the chart ball")
    return q


@dataclass
class BallCorrespondence:
    """Translation realizing psi: (B(p, r4), g_s) -> (B(p', r3), g_{s'})."""

    translation: np.ndarray
    r3: float
    r4: float
    lift_agreement: float         # worst |lifted endpoint - translated point|
    metric_mismatch: float        # sup |psi* g_{s'} - g_s| on sampled nodes


def ball_correspondence(
    model: QuotientModel,
    center_s: tuple[float, float],
    p_tilde: np.ndarray,
    center_s2: tuple[float, float],
    p_tilde2: np.ndarray,
    metric_s: MetricField,
    metric_s2: MetricField,
    Q: float,
    n_rays: int = 8,
) -> BallCorrespondence:
    """Correspondence between two chart preimages of one manifold point.

    The generic construction (lifting straight segments from p_tilde
    through the second chart) is compared against the exact deck
    translation, and the isometry property is checked on chart nodes.
    """
    p_tilde = np.asarray(p_tilde, float)
    p_tilde2 = np.asarray(p_tilde2, float)
    img1 = wrap_coords(np.asarray(center_s) + p_tilde, model.side)
    img2 = wrap_coords(np.asarray(center_s2) + p_tilde2, model.side)
    if not np.allclose(img1, img2, atol=1e-9):
        raise PatchworkError("preimages project to different manifold points")
    t = p_tilde2 - p_tilde
    r = model.chart_radius
    r3 = (r / 20.0) * math.exp(-3.0 * Q)
    r4 = (r / 20.0) * math.exp(-4.0 * Q)

    # generic path: lift straight rays of length r4 emitted from p_tilde
    worst_lift = 0.0
    c1 = np.asarray(center_s, float)
    for k in range(n_rays):
        ang = 2.0 * math.pi * k / n_rays
        target = p_tilde + r4 * np.array([math.cos(ang), math.sin(ang)])
        steps = np.linspace(0.0, 1.0, 9)[:, None]
        curve = wrap_coords(c1 + p_tilde + steps * (target - p_tilde), model.side)
        end = lift_curve(model, center_s2, p_tilde2, curve)
        worst_lift = max(worst_lift, float(np.linalg.norm(end - (target + t))))

    # isometry on sampled nodes of B(p_tilde, r4)
    dom = metric_s.domain
    X, Y = dom.coords()
    sel = dom.mask & (np.hypot(X - p_tilde[0], Y - p_tilde[1]) <= r4)
    mismatch = 0.0
    if sel.any():
        xs, ys = X[sel], Y[sel]
        g1 = np.stack([
            metric_s.coeffs[..., 0, 0][sel],
            metric_s.coeffs[..., 0, 1][sel],
            metric_s.coeffs[..., 1, 1][sel],
        ])
        phi2 = model.phi_at(np.asarray(center_s2)[0] + xs + t[0],
                            np.asarray(center_s2)[1] + ys + t[1])
        f2 = np.exp(2.0 * phi2)
        g2 = np.stack([f2, np.zeros_like(f2), f2])
        mismatch = float(np.abs(g1 - g2).max())
    return BallCorrespondence(t, r3, r4, worst_lift, mismatch)


# ---------------------------------------------------------------------------
# global metric assembly


@dataclass
class Candidate:
    chart: int
    node: tuple[int, int]
    preimage: tuple[float, float]
    gtilde: np.ndarray


@dataclass
class GlobalMetric:
    points: np.ndarray                       # (m, 2) net on the quotient
    gbar: np.ndarray                         # (m, 2, 2)
    provenance: list[tuple[int, tuple[int, int]]]
    candidates: list[list[Candidate]]
    max_discrepancy: float

    def as_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "gbar": self.gbar.tolist(),
            "provenance": [[c, list(n)] for c, n in self.provenance],
            "n_candidates": [len(c) for c in self.candidates],
            "max_discrepancy": self.max_discrepancy,
        }


def _preimage_candidates(
    model: QuotientModel,
    point: np.ndarray,
    chart: int,
    fields: PullbackField,
    metric: MetricField,
    index: dict,
) -> list[Candidate]:
    """All chart preimages of a net point present in the chart's field."""
    c = np.asarray(model.chart_centers[chart], float)
    r = model.chart_radius
    base = np.asarray(point, float) - c
    kmax = int(math.ceil((r + model.side) / model.side))
    out = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            x = base + model.side * np.array([k1, k2])
            if np.linalg.norm(x) >= r:
                continue
            node = metric.domain.nearest_node(x)
            nx, ny = metric.domain.node_xy(node)
            if abs(nx - x[0]) > 1e-9 or abs(ny - x[1]) > 1e-9:
                continue          # off-lattice preimage: not sampled
            pos = index.get(node)
            if pos is None:
                continue
            out.append(Candidate(chart, node, (float(x[0]), float(x[1])),
                                 fields.gtilde[pos]))
    return out


def gather_candidates(
    model: QuotientModel,
    net: np.ndarray,
    metrics: list[MetricField],
    fields: list[PullbackField],
) -> list[list[Candidate]]:
    indexes = [
        {tuple(p): k for k, p in enumerate(f.points)} for f in fields
    ]
    out = []
    for point in net:
        cands = []
        for chart in range(len(metrics)):
            cands.extend(_preimage_candidates(
                model, point, chart, fields[chart], metrics[chart],
                indexes[chart],
            ))
        out.append(cands)
    return out


def consistency_check(candidate_sets: list[list[Candidate]]) -> float:
    """Worst relative disagreement among alternative definitions."""
    worst = 0.0
    for cands in candidate_sets:
        for a in range(len(cands)):
            for b in range(a + 1, len(cands)):
                ga, gb = cands[a].gtilde, cands[b].gtilde
                rel = np.abs(ga - gb).max() / max(np.abs(ga).max(), 1e-30)
                worst = max(worst, float(rel))
    return worst


def assemble_global_metric(
    model: QuotientModel,
    net: np.ndarray,
    metrics: list[MetricField],
    fields: list[PullbackField],
) -> GlobalMetric:
    """Global metric on the net with provenance and discrepancy report.

    The designated definition at each point is the candidate with the
    lowest chart index, then lexicographically smallest preimage node.
    """
    candidate_sets = gather_candidates(model, net, metrics, fields)
    gbar = np.empty((len(net), 2, 2))
    provenance = []
    for k, cands in enumerate(candidate_sets):
        if not cands:
            raise PatchworkError(
                f"net point {net[k].tolist()} has no smoothed chart preimage"
            )
        best = min(cands, key=lambda c: (c.chart, c.node))
        gbar[k] = best.gtilde
        provenance.append((best.chart, best.node))
    disc = consistency_check(candidate_sets)
    return GlobalMetric(np.asarray(net, float), gbar, provenance,
                        candidate_sets, disc)


# ---------------------------------------------------------------------------
# end-to-end patch run


@dataclass
class PatchResult:
    model: QuotientModel
    metrics: list[MetricField]
    fields: list[PullbackField]
    global_metric: GlobalMetric
    i0: float


def default_net(model: QuotientModel, spacing: float) -> np.ndarray:
    k = max(1, int(round(model.side / spacing)))
    ax = np.arange(k) * (model.side / k)
    return np.array([[u, v] for u in ax for v in ax])


def run_patchwork(
    model: QuotientModel,
    nodes_per_diameter: int,
    i0: float,
    net_spacing: float,
    stride: int = 1,
    order: int = 16,
    margin: float = 2.4,
) -> PatchResult:
    """Smooth every chart and assemble the global metric on a net."""
    metrics = build_atlas_metrics(model, nodes_per_diameter)
    h = metrics[0].domain.spacing
    for val, what in ((model.side, "side"), (net_spacing, "net spacing")):
        if abs(val / h - round(val / h)) > 1e-9:
            raise PatchworkError(f"{what} must be a multiple of the chart spacing")
    for c in model.chart_centers:
        for coord in c:
            if abs(coord / h - round(coord / h)) > 1e-9:
                raise PatchworkError(
                    "chart centers must lie on the chart node lattice"
                )
    net = default_net(model, net_spacing)
    fields = []
    for m in metrics:
        kernel = EmbeddingKernel(m, i0, stride=stride, order=order, margin=margin)
        pts = []
        index = {}
        for point in net:
            cands_nodes = _chart_eval_nodes(model, point, m, kernel)
            for node in cands_nodes:
                if node not in index:
                    index[node] = True
                    pts.append(node)
        fields.append(pullback_metric(kernel, sorted(pts)))
    gm = assemble_global_metric(model, net, metrics, fields)
    return PatchResult(model, metrics, fields, gm, i0)


def _chart_eval_nodes(
    model: QuotientModel,
    point: np.ndarray,
    metric: MetricField,
    kernel: EmbeddingKernel,
) -> list[tuple[int, int]]:
    c = np.asarray(metric.params["center"], float)
    r = model.chart_radius
    base = np.asarray(point, float) - c
    kmax = int(math.ceil((r + model.side) / model.side))
    out = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            x = base + model.side * np.array([k1, k2])
            if np.linalg.norm(x) >= r:
                continue
            node = metric.domain.nearest_node(x)
            nx, ny = metric.domain.node_xy(node)
            if abs(nx - x[0]) > 1e-9 or abs(ny - x[1]) > 1e-9:
                continue
            if kernel.eval_region[node]:
                out.append(node)
    return out
