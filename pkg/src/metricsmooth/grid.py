"""Masked uniform grids over coordinate charts, metric tensor sampling,
distance fields, quadrature weights, and a Gaussian-curvature oracle.

Conventions: a chart covers the closed ball B(0, r).  Arrays are indexed
[i, j] <-> (x_i, y_j) with x_i = -r + i*h ('ij' meshgrid indexing), so
axis 0 differentiates in x and axis 1 in y.  Metric coefficients are
stored for every grid node of the bounding square; the mask selects the
nodes that belong to the chart.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import binary_erosion
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra


class GridError(ValueError):
    pass


# ---------------------------------------------------------------------------
# chart domain


@dataclass(frozen=True)
class ChartDomain:
    """Uniform grid over the bounding square of B(0, r) with a disk mask."""

    dim: int
    spacing: float
    radius: float
    mask: np.ndarray        # bool, (npts, npts)
    origin: np.ndarray      # coordinates of grid node (0, 0), i.e. (-r, -r)

    @property
    def npts(self) -> int:
        return self.mask.shape[0]

    @property
    def center_index(self) -> tuple[int, int]:
        c = (self.npts - 1) // 2
        return (c, c)

    def axis(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.npts)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    def node_xy(self, idx) -> np.ndarray:
        return self.origin + self.spacing * np.asarray(idx, dtype=float)

    def nearest_node(self, xy) -> tuple[int, int]:
        idx = np.rint((np.asarray(xy, dtype=float) - self.origin) / self.spacing)
        idx = np.clip(idx, 0, self.npts - 1).astype(int)
        return (int(idx[0]), int(idx[1]))


def build_chart_domain(n: int, r: float, nodes_per_diameter: int) -> ChartDomain:
    """Masked grid over B(0, r) with spacing 2r / nodes_per_diameter.

    The grid carries nodes_per_diameter + 1 nodes per side so that the
    origin and the boundary nodes on the axes are exact grid nodes.
    """
    if n not in (2, 3):
        raise GridError(f"unsupported dimension n={n}; only 2 and 3 are supported")
    if nodes_per_diameter < 4:
        raise GridError(
            f"nodes_per_diameter={nodes_per_diameter} too coarse; need at least 4"
        )
    if r <= 0:
        raise GridError("radius must be positive")
    if n != 2:
        raise GridError("n=3 layout is reserved; shipped operations require n=2")
    h = 2.0 * r / nodes_per_diameter
    npts = nodes_per_diameter + 1
    ax = -r + h * np.arange(npts)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    mask = X**2 + Y**2 <= r**2 * (1.0 + 1e-12)
    return ChartDomain(
        dim=n, spacing=h, radius=r, mask=mask, origin=np.array([-r, -r])
    )


# ---------------------------------------------------------------------------
# metric fields


_EXPR_NAMES = {
    "np": np, "pi": np.pi, "e": np.e,
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "arctan": np.arctan,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh, "hypot": np.hypot,
    "minimum": np.minimum, "maximum": np.maximum,
}


def _eval_expr(expr: str, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = eval(expr, {"__builtins__": {}}, {**_EXPR_NAMES, "x": X, "y": Y})
    return np.broadcast_to(np.asarray(out, dtype=float), X.shape).copy()


@dataclass
class MetricField:
    """Symmetric 2x2 metric coefficients sampled on a chart grid."""

    domain: ChartDomain
    coeffs: np.ndarray            # (npts, npts, 2, 2)
    generator_tag: str | None = None
    params: dict = field(default_factory=dict)
    _qhat: float | None = field(default=None, repr=False)
    _hash: str | None = field(default=None, repr=False)

    @property
    def qhat(self) -> float:
        if self._qhat is None:
            self._qhat = metric_eigen_bounds(self)
        return self._qhat

    def content_hash(self) -> str:
        if self._hash is None:
            hsh = hashlib.sha1()
            hsh.update(np.ascontiguousarray(self.coeffs).tobytes())
            hsh.update(np.float64(self.domain.spacing).tobytes())
            hsh.update(np.float64(self.domain.radius).tobytes())
            self._hash = hsh.hexdigest()
        return self._hash

    def sqrt_det(self) -> np.ndarray:
        g = self.coeffs
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        return np.sqrt(det)

    def inverse(self) -> np.ndarray:
        g = self.coeffs
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        inv = np.empty_like(g)
        inv[..., 0, 0] = g[..., 1, 1] / det
        inv[..., 1, 1] = g[..., 0, 0] / det
        inv[..., 0, 1] = -g[..., 0, 1] / det
        inv[..., 1, 0] = -g[..., 1, 0] / det
        return inv

    def conformal_phi(self) -> np.ndarray | None:
        """log of the conformal factor when the generator is conformal."""
        if self.generator_tag in ("flat", "conformal", "sphere", "rough_bump"):
            return 0.5 * np.log(self.coeffs[..., 0, 0])
        return None

    def scaled(self, lam2: float) -> "MetricField":
        """The metric lam2 * g (lam2 = lambda^2 > 0)."""
        tag = self.generator_tag
        params = dict(self.params)
        if tag == "flat" and lam2 != 1.0:
            tag, params = "conformal", {"phi": 0.5 * math.log(lam2)}
        elif tag == "conformal" and "phi" in params:
            params["phi"] = params["phi"] + 0.5 * math.log(lam2)
        elif lam2 != 1.0:
            tag, params = None, {}
        return MetricField(self.domain, lam2 * self.coeffs, tag, params)


def metric_from_document(doc: dict) -> MetricField:
    """Build a metric from a chart document.

    The document carries the chart geometry and the generator spec::

        {"dim": 2, "radius": 1.2, "nodes": 240, "generator": {"kind": ...}}
    """
    for key in ("dim", "radius", "nodes", "generator"):
        if key not in doc:
            raise GridError(f"chart document missing {key!r}")
    domain = build_chart_domain(
        int(doc["dim"]), float(doc["radius"]), int(doc["nodes"])
    )
    return sample_metric(dict(doc["generator"]), domain)


def _conformal_field(domain: ChartDomain, phi: np.ndarray) -> np.ndarray:
    g = np.zeros(phi.shape + (2, 2))
    f = np.exp(2.0 * phi)
    g[..., 0, 0] = f
    g[..., 1, 1] = f
    return g


def sample_metric(spec: dict, domain: ChartDomain) -> MetricField:
    """Sample a metric generator on a chart domain.

    Supported kinds: flat, conformal (constant "phi" or "phi_expr"),
    sphere (stereographic, parameter "rho"), anisotropic (diagonal with
    "a_expr"/"b_expr"), rough_bump (mollified conformal bump), sampled
    (explicit g11/g12/g22 arrays in row-major node order, null outside
    the mask).
    """
    kind = spec.get("kind")
    X, Y = domain.coords()
    params: dict = {}
    if kind == "flat":
        g = _conformal_field(domain, np.zeros_like(X))
    elif kind == "conformal":
        if "phi" in spec:
            phi = np.full_like(X, float(spec["phi"]))
            params["phi"] = float(spec["phi"])
        else:
            phi = _eval_expr(spec["phi_expr"], X, Y)
            params["phi_expr"] = spec["phi_expr"]
        g = _conformal_field(domain, phi)
    elif kind == "sphere":
        # stereographic chart of the round sphere of curvature 1/rho^2;
        # coord_scale sigma pre-scales the chart coordinates (sigma = 1/2
        # makes the metric equal the identity at the origin)
        rho = float(spec.get("rho", 1.0))
        sigma = float(spec.get("coord_scale", 1.0))
        params["rho"] = rho
        params["coord_scale"] = sigma
        lam = 4.0 * rho**4 * sigma**2 / (rho**2 + sigma**2 * (X**2 + Y**2)) ** 2
        g = _conformal_field(domain, 0.5 * np.log(lam))
    elif kind == "anisotropic":
        a = _eval_expr(spec["a_expr"], X, Y)
        b = _eval_expr(spec["b_expr"], X, Y)
        params = {"a_expr": spec["a_expr"], "b_expr": spec["b_expr"]}
        g = np.zeros(X.shape + (2, 2))
        g[..., 0, 0] = a
        g[..., 1, 1] = b
    elif kind == "rough_bump":
        amp = float(spec.get("amplitude", 0.1))
        alpha = float(spec.get("alpha", 0.5))
        w = float(spec.get("width", 0.05))
        cx, cy = spec.get("center", (0.0, 0.0))
        params = {"amplitude": amp, "alpha": alpha, "width": w, "center": (cx, cy)}
        rr2 = (X - cx) ** 2 + (Y - cy) ** 2
        phi = amp * ((rr2 + w**2) ** (alpha / 2.0) - w**alpha)
        g = _conformal_field(domain, phi)
    elif kind == "sampled":
        npts = domain.npts
        g = np.zeros((npts, npts, 2, 2))
        for key, (i, j) in (("g11", (0, 0)), ("g12", (0, 1)), ("g22", (1, 1))):
            arr = np.array(
                [np.nan if v is None else float(v) for v in spec[key]]
            ).reshape(npts, npts)
            g[..., i, j] = arr
        g[..., 1, 0] = g[..., 0, 1]
        # out-of-mask entries are free; make them benign for full-grid ops
        bad = ~np.isfinite(g[..., 0, 0])
        g[bad] = np.eye(2)
    else:
        raise GridError(f"unknown metric generator kind: {kind!r}")

    fld = MetricField(domain, g, generator_tag=kind, params=params)
    _check_spd(fld)
    return fld


def _check_spd(m: MetricField) -> None:
    g = m.coeffs[m.domain.mask]
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    bad = (g[:, 0, 0] <= 0) | (det <= 0)
    if np.any(bad):
        ii, jj = np.nonzero(m.domain.mask)
        k = int(np.argmax(bad))
        xy = m.domain.node_xy((ii[k], jj[k]))
        raise GridError(f"metric not SPD at node {tuple(xy)}")


def metric_eigen_bounds(m: MetricField) -> float:
    """Minimal Q with e^{-Q} delta <= g <= e^{Q} delta over masked nodes."""
    g = m.coeffs[m.domain.mask]
    mean = 0.5 * (g[:, 0, 0] + g[:, 1, 1])
    dev = np.sqrt((0.5 * (g[:, 0, 0] - g[:, 1, 1])) ** 2 + g[:, 0, 1] ** 2)
    lo, hi = (mean - dev).min(), (mean + dev).max()
    return float(max(abs(math.log(lo)), abs(math.log(hi))))


# ---------------------------------------------------------------------------
# geodesic distance


@dataclass
class DistanceField:
    source: tuple[int, int]
    values: np.ndarray        # (npts, npts); inf outside mask / beyond limit
    method: str


def neighbor_offsets(order: int) -> np.ndarray:
    """Primitive lattice step set for the 8/16/32/48-neighborhood."""
    reach = {8: 1, 16: 2, 32: 3, 48: 4}.get(order)
    if reach is None:
        raise GridError(
            f"unsupported neighborhood order {order}; use 8, 16, 32 or 48"
        )
    offs = []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            if (dx, dy) != (0, 0) and math.gcd(abs(dx), abs(dy)) == 1:
                offs.append((dx, dy))
    return np.array(offs, dtype=int)


def graph_distance(
    coeffs: np.ndarray,
    mask: np.ndarray,
    h: float,
    source: tuple[int, int],
    order: int = 16,
    limit: float = np.inf,
) -> np.ndarray:
    """Shortest-path distance from one node on the masked grid graph.

    Edge lengths use the midpoint metric (average of the endpoint
    coefficient matrices).  Returns inf beyond `limit` or off the mask.
    """
    npts = mask.shape[0]
    idx = -np.ones(mask.shape, dtype=np.int64)
    nodes = np.nonzero(mask)
    nnode = len(nodes[0])
    idx[nodes] = np.arange(nnode)
    rows, cols, wts = [], [], []
    for dx, dy in neighbor_offsets(order):
        # keep each undirected edge once
        if dx < 0 or (dx == 0 and dy < 0):
            continue
        i0s, i0e = max(0, -dx), min(npts, npts - dx)
        j0s, j0e = max(0, -dy), min(npts, npts - dy)
        a = mask[i0s:i0e, j0s:j0e] & mask[i0s + dx:i0e + dx, j0s + dy:j0e + dy]
        ii, jj = np.nonzero(a)
        ii += i0s
        jj += j0s
        if len(ii) == 0:
            continue
        gm = 0.5 * (coeffs[ii, jj] + coeffs[ii + dx, jj + dy])
        v = np.array([dx, dy], dtype=float) * h
        w = np.sqrt(
            gm[:, 0, 0] * v[0] ** 2 + 2 * gm[:, 0, 1] * v[0] * v[1]
            + gm[:, 1, 1] * v[1] ** 2
        )
        rows.append(idx[ii, jj])
        cols.append(idx[ii + dx, jj + dy])
        wts.append(w)
    graph = sp.csr_matrix(
        (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nnode, nnode),
    )
    src = idx[source]
    if src < 0:
        raise GridError("source node is outside the mask")
    dist = _csgraph_dijkstra(
        graph, directed=False, indices=src, limit=float(limit)
    )
    out = np.full(mask.shape, np.inf)
    out[nodes] = dist
    return out


def _sphere_preimage(X: np.ndarray, Y: np.ndarray, rho: float) -> np.ndarray:
    d2 = X**2 + Y**2
    denom = d2 + rho**2
    return np.stack(
        [2 * rho**2 * X / denom, 2 * rho**2 * Y / denom,
         rho * (d2 - rho**2) / denom],
        axis=-1,
    )


def analytic_distance(
    m: MetricField,
    source: tuple[int, int],
    window: tuple[slice, slice] | None = None,
) -> np.ndarray | None:
    """Closed-form distance field for generators that admit one.

    When `window` is given, only that sub-block of the grid is evaluated.
    """
    dom = m.domain
    if window is None:
        X, Y = dom.coords()
    else:
        ax = dom.axis()
        X, Y = np.meshgrid(ax[window[0]], ax[window[1]], indexing="ij")
    sx, sy = dom.node_xy(source)
    if m.generator_tag == "flat":
        return np.hypot(X - sx, Y - sy)
    if m.generator_tag == "conformal" and "phi" in m.params:
        return math.exp(m.params["phi"]) * np.hypot(X - sx, Y - sy)
    if m.generator_tag == "sphere":
        rho = m.params["rho"]
        sigma = m.params.get("coord_scale", 1.0)
        p = _sphere_preimage(np.array(sigma * sx), np.array(sigma * sy), rho)
        q = _sphere_preimage(sigma * X, sigma * Y, rho)
        cosang = np.clip((q @ p) / rho**2, -1.0, 1.0)
        return rho * np.arccos(cosang)
    return None


def geodesic_distance(
    m: MetricField,
    source: tuple[int, int],
    order: int = 16,
    method: str = "auto",
    limit: float = np.inf,
) -> DistanceField:
    """Geodesic distance d_g(source, .) over the masked grid.

    method: "auto" prefers a closed form when the generator admits one,
    "graph" forces the shortest-path computation, "analytic" requires a
    closed form.
    """
    dom = m.domain
    if not dom.mask[source]:
        raise GridError(f"source {source} is outside the mask")
    if method in ("auto", "analytic"):
        vals = analytic_distance(m, source)
        if vals is not None:
            vals = np.where(dom.mask, vals, np.inf)
            return DistanceField(source, vals, "analytic-override")
        if method == "analytic":
            raise GridError(
                f"no analytic distance for generator {m.generator_tag!r}"
            )
    vals = graph_distance(m.coeffs, dom.mask, dom.spacing, source, order, limit)
    if not np.isfinite(limit) and np.isinf(vals[dom.mask]).any():
        raise GridError("mask is disconnected: unreachable masked nodes")
    return DistanceField(source, vals, "graph-search")


# ---------------------------------------------------------------------------
# volume weights


@dataclass
class VolumeWeights:
    weights: np.ndarray       # (npts, npts); zero outside mask


def volume_measure(m: MetricField) -> VolumeWeights:
    """Nodewise quadrature weight sqrt(det g) * h^n on the mask."""
    h = m.domain.spacing
    w = m.sqrt_det() * h**m.domain.dim
    return VolumeWeights(np.where(m.domain.mask, w, 0.0))


# ---------------------------------------------------------------------------
# curvature oracle


def interior_mask(mask: np.ndarray, cells: int = 2) -> np.ndarray:
    struct = np.ones((3, 3), dtype=bool)
    return binary_erosion(mask, structure=struct, iterations=cells)


def brioschi_curvature(
    E: np.ndarray, F: np.ndarray, G: np.ndarray, h: float
) -> np.ndarray:
    """Gaussian curvature of a 2-D metric field via the Brioschi formula.

    First and second derivatives by central differences (one-sided at the
    array edge).  Valid wherever the input coefficients are C^2.
    """
    Eu, Ev = np.gradient(E, h, edge_order=2)
    Fu, Fv = np.gradient(F, h, edge_order=2)
    Gu, Gv = np.gradient(G, h, edge_order=2)
    Evv = np.gradient(Ev, h, axis=1, edge_order=2)
    Guu = np.gradient(Gu, h, axis=0, edge_order=2)
    Fuv = np.gradient(Fu, h, axis=1, edge_order=2)

    a11 = -0.5 * Evv + Fuv - 0.5 * Guu
    det1 = (
        a11 * (E * G - F * F)
        - 0.5 * Eu * ((Fv - 0.5 * Gu) * G - F * 0.5 * Gv)
        + (Fu - 0.5 * Ev) * ((Fv - 0.5 * Gu) * F - E * 0.5 * Gv)
    )
    det2 = (
        0.0 * (E * G - F * F)
        - 0.5 * Ev * (0.5 * Ev * G - F * 0.5 * Gu)
        + 0.5 * Gu * (0.5 * Ev * F - E * 0.5 * Gu)
    )
    return (det1 - det2) / (E * G - F * F) ** 2


def reference_gauss_curvature(m: MetricField) -> np.ndarray:
    """Gaussian curvature of the sampled metric on interior nodes (n=2).

    Test oracle: requires coefficients sampled from a C^2 generator.
    Returns NaN outside the twice-eroded mask.
    """
    if m.domain.dim != 2:
        raise GridError("curvature oracle supports n=2 only")
    g = m.coeffs
    K = brioschi_curvature(g[..., 0, 0], g[..., 0, 1], g[..., 1, 1], m.domain.spacing)
    inner = interior_mask(m.domain.mask, cells=2)
    return np.where(inner, K, np.nan)
