"""Pipeline orchestration: norms, cells, smoothing, curvature, patching.

A configuration document selects a chart metric, an i0 sweep, and a set
of stages; the pipeline runs them in order, collects per-stage report
blocks, and evaluates tolerance gates.  Reports are deterministic:
identical configurations produce byte-identical report files (timings
are written to a separate sidecar).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cells import cell_deviation_report, solve_cell
from .curvature import curvature_report
from .embedding import EmbeddingKernel, eval_net, pullback_metric
from .grid import MetricField, build_chart_domain, metric_from_document
from .norms import (
    ChartAtlas,
    NormFlavor,
    atlas_norm_on_scale,
    chart_norm_components,
)
from .patchwork import QuotientModel, run_patchwork

SCHEMA_TAG = "metricsmooth-report/1"

KNOWN_STAGES = ("norm", "cell", "smooth", "curvature", "patch")

DEFAULT_TOLERANCES = {
    "cell_eps": 0.05,          # cell deviation from the frozen oracle
    "sandwich_max": 0.7,       # max |log| generalized-eigenvalue ratio
    "curvature_pair": 0.15,    # pairwise curvature agreement (relative)
    "p2_max": 1e-6,            # projector-derivative identity residual
    "patch_consistency": 0.01, # cross-chart relative discrepancy
    "norm_inflation": 2.0,     # smoothed norm components vs input
    "norm_floor": 0.02,        # additive floor for near-zero inputs
}


class PipelineError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Validated pipeline configuration.

    Built from a JSON document; see from_dict for the accepted keys.
    """

    metric_doc: dict
    i0_list: list[float]
    stages: list[str]
    scale: float | None = None
    flavor: str = "c"
    k: int = 1
    exponent: float = 0.5
    net_spacing_nodes: int = 24
    stride: int = 1
    order: int = 16
    margin: float = 2.5
    curvature_i0: float | None = None
    model: dict | None = None
    patch_options: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.i0_list:
            raise PipelineError("need at least one i0 value")
        unknown = set(self.stages) - set(KNOWN_STAGES)
        if unknown:
            raise PipelineError(f"unknown stages: {sorted(unknown)}")
        if "patch" in self.stages and self.model is None:
            raise PipelineError("patch stage requires a quotient model")
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.tolerances)
        bad = [k for k, v in tol.items() if not (isinstance(v, (int, float)) and v > 0)]
        if bad:
            raise PipelineError(f"tolerances must be positive: {bad}")
        self.tolerances = tol
        doc = self.metric_doc
        h = 2.0 * float(doc["radius"]) / int(doc["nodes"])
        for i0 in self.i0_list:
            if i0 < 6.0 * h - 1e-12:
                raise PipelineError(
                    f"i0={i0} below 6 * spacing {h} for the configured chart"
                )

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        """Build a config from a parsed JSON document.

        Keys: "metric" (inline chart document) or "metric_path"; "i0"
        (number or list); "stages"; optional "scale", "flavor", "k",
        "alpha"/"p", "net_spacing_nodes", "stride", "order", "margin",
        "curvature_i0", "model" or "model_path", "patch", "tolerances",
        "seed".
        """
        doc = dict(doc)
        base = Path(base_dir)
        if "metric" in doc:
            metric_doc = dict(doc["metric"])
        elif "metric_path" in doc:
            path = base / doc["metric_path"]
            if not path.exists():
                raise PipelineError(f"metric file not found: {path}")
            metric_doc = json.loads(path.read_text())
        else:
            raise PipelineError("config needs 'metric' or 'metric_path'")
        model = doc.get("model")
        if model is None and "model_path" in doc:
            path = base / doc["model_path"]
            if not path.exists():
                raise PipelineError(f"model file not found: {path}")
            model = json.loads(path.read_text())
        i0 = doc.get("i0", [])
        i0_list = [float(v) for v in (i0 if isinstance(i0, list) else [i0])]
        stages = list(doc.get("stages", ["norm", "cell", "smooth", "curvature"]))
        exponent = float(doc.get("alpha", doc.get("p", 0.5)))
        return cls(
            metric_doc=metric_doc,
            i0_list=i0_list,
            stages=stages,
            scale=(None if doc.get("scale") is None else float(doc["scale"])),
            flavor=str(doc.get("flavor", "c")),
            k=int(doc.get("k", 1)),
            exponent=exponent,
            net_spacing_nodes=int(doc.get("net_spacing_nodes", 24)),
            stride=int(doc.get("stride", 1)),
            order=int(doc.get("order", 16)),
            margin=float(doc.get("margin", 2.5)),
            curvature_i0=(None if doc.get("curvature_i0") is None
                          else float(doc["curvature_i0"])),
            model=model,
            patch_options=dict(doc.get("patch", {})),
            tolerances=dict(doc.get("tolerances", {})),
            seed=int(doc.get("seed", 0)),
        )


@dataclass
class PipelineReport:
    """Per-stage blocks plus gate outcomes under a versioned schema tag."""

    schema: str
    config: dict
    blocks: dict
    gates: list[dict]
    timings: dict

    @property
    def passed(self) -> bool:
        return all(g["passed"] for g in self.gates)

    def as_dict(self, include_timings: bool = False) -> dict:
        out = {
            "schema": self.schema,
            "config": self.config,
            "blocks": self.blocks,
            "gates": self.gates,
            "passed": self.passed,
        }
        if include_timings:
            out["timings"] = self.timings
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _gate(name: str, value: float, threshold: float, below: bool = True) -> dict:
    ok = value <= threshold if below else value >= threshold
    return {
        "name": name,
        "value": float(value),
        "threshold": float(threshold),
        "passed": bool(ok),
    }


# ---------------------------------------------------------------------------
# stages


def _stage_norm(cfg: PipelineConfig, m: MetricField, blocks, gates):
    flavor = NormFlavor.parse(cfg.flavor)
    scale = cfg.scale if cfg.scale is not None else m.domain.radius
    atlas = ChartAtlas([m])
    rep = atlas_norm_on_scale(atlas, scale, flavor, cfg.k, cfg.exponent)
    blocks["norm"] = rep.as_dict()
    gates.append(_gate("norm.finite_witness", 0.0 if rep.covered else 1.0, 0.5))


def _cell_profile(sol, m: MetricField, n: int):
    g0 = m.coeffs[sol.center]
    dom = m.domain
    sx, sy = dom.node_xy(sol.center)
    ax = dom.axis()
    X, Y = np.meshgrid(ax[sol.window[0]], ax[sol.window[1]], indexing="ij")
    dx, dy = X - sx, Y - sy
    d2 = g0[0, 0] * dx**2 + 2 * g0[0, 1] * dx * dy + g0[1, 1] * dy**2
    sel = sol.ball
    dist = sol.dist[sel]
    order = np.argsort(dist, kind="stable")
    oracle = np.maximum(sol.i0**2 - d2[sel], 0.0) / (2.0 * n)
    return (dist[order], sol.values[sel][order], oracle[order])


def _stage_cell(cfg: PipelineConfig, m: MetricField, blocks, gates):
    i0 = min(cfg.i0_list)
    sol = solve_cell(m, m.domain.center_index, i0, order=cfg.order)
    dev = cell_deviation_report(sol, m.domain.dim, m)
    dist, values, oracle = _cell_profile(sol, m, m.domain.dim)
    blocks["cell"] = {
        "i0": i0,
        "center": list(m.domain.center_index),
        "eps_value": dev.eps_value,
        "eps_grad": dev.eps_grad,
        "hess_bound": dev.hess_bound,
        "grad_bound": dev.grad_bound,
        "profile_dist": dist.tolist(),
        "profile_value": values.tolist(),
        "profile_oracle": oracle.tolist(),
    }
    gates.append(_gate("cell.eps_value", dev.eps_value,
                       cfg.tolerances["cell_eps"]))


def _smoothed_subchart(kernel: EmbeddingKernel, spacing_nodes: int):
    """Sample gtilde on the largest centered square sublattice that fits
    inside the evaluation region, returned as a sampled MetricField."""
    dom = kernel.metric.domain
    ci = dom.center_index
    half = 0
    while True:
        nxt = half + 1
        idx = range(-nxt, nxt + 1)
        ok = all(
            kernel.eval_region[ci[0] + a * spacing_nodes, ci[1] + b * spacing_nodes]
            for a in idx for b in idx
            if 0 <= ci[0] + a * spacing_nodes < dom.npts
            and 0 <= ci[1] + b * spacing_nodes < dom.npts
        ) and all(
            0 <= ci[0] + a * spacing_nodes < dom.npts
            and 0 <= ci[1] + b * spacing_nodes < dom.npts
            for a in idx for b in idx
        )
        if not ok:
            break
        half = nxt
    if half < 1:
        return None, None, None
    step = spacing_nodes
    pts = [
        (ci[0] + a * step, ci[1] + b * step)
        for a in range(-half, half + 1)
        for b in range(-half, half + 1)
    ]
    pf = pullback_metric(kernel, pts)
    side_nodes = 2 * half
    # the sublattice is itself a uniform chart grid whose spacing is
    # step * h; samples exist on the whole bounding square, so the mask
    # ball is fully covered by valid data
    sub = build_chart_domain(dom.dim, half * step * dom.spacing, side_nodes)
    k = side_nodes + 1
    g = np.array(pf.gtilde).reshape(k, k, 2, 2)
    gin = np.empty_like(g)
    for idx2, p in enumerate(pts):
        gin[idx2 // k, idx2 % k] = kernel.metric.coeffs[p]
    return sub, g, gin


def _subchart_components(cfg, dom_sub, g, r, flavor):
    return chart_norm_components(
        MetricField(dom_sub, g), r, flavor, cfg.k, cfg.exponent
    )


def _stage_smooth(cfg: PipelineConfig, m: MetricField, blocks, gates):
    sweep = []
    kernel = None
    for i0 in sorted(cfg.i0_list, reverse=True):
        kernel = EmbeddingKernel(
            m, i0, stride=cfg.stride, order=cfg.order, margin=cfg.margin
        )
        pts = eval_net(kernel, cfg.net_spacing_nodes)
        pf = pullback_metric(kernel, pts)
        sweep.append({
            "i0": i0,
            "n_points": len(pts),
            "eps": pf.max_log_ratio,
        })
    block = {"sweep": sweep}
    for entry in sweep:
        gates.append(_gate(f"smooth.sandwich[i0={entry['i0']:g}]",
                           entry["eps"], cfg.tolerances["sandwich_max"]))
    if len(sweep) > 1:
        worst = max(
            sweep[j + 1]["eps"] - sweep[j]["eps"] for j in range(len(sweep) - 1)
        )
        gates.append(_gate("smooth.sweep_monotone", worst, 0.0))

    # norm non-inflation: smoothed components vs the input's on the same
    # sublattice and scale (additive floor covers identically-zero
    # inputs); the loop above ends on min(i0), whose kernel is reused
    sub, g_sm, g_in = _smoothed_subchart(kernel, cfg.net_spacing_nodes)
    if sub is not None and sub.npts >= 5:
        flavor = NormFlavor.parse(cfg.flavor)
        r = min(cfg.scale or m.domain.radius, sub.radius)
        alpha_ok = flavor.kind == "holder"
        try:
            cs = _subchart_components(cfg, sub, g_sm, r, flavor)
            ci = _subchart_components(cfg, sub, g_in, r, flavor)
        except Exception:
            cs = ci = None
        if cs is not None:
            floor = cfg.tolerances["norm_floor"]
            fac = cfg.tolerances["norm_inflation"]
            block["norm_inflation"] = {
                "scale": r,
                "input": {"q_quasi": ci.q_quasi, "q_deriv": ci.q_deriv},
                "smoothed": {"q_quasi": cs.q_quasi, "q_deriv": cs.q_deriv},
            }
            if alpha_ok:
                gates.append(_gate("smooth.norm_quasi", cs.q_quasi,
                                   fac * ci.q_quasi + floor))
                gates.append(_gate("smooth.norm_deriv", cs.q_deriv,
                                   fac * ci.q_deriv + floor))
    blocks["smooth"] = block


def _stage_curvature(cfg: PipelineConfig, m: MetricField, blocks, gates):
    i0 = cfg.curvature_i0 if cfg.curvature_i0 is not None else max(cfg.i0_list)
    kernel = EmbeddingKernel(
        m, i0, stride=cfg.stride, order=cfg.order, margin=cfg.margin
    )
    rep = curvature_report(kernel, [m.domain.center_index])
    blocks["curvature"] = rep.as_dict()
    gates.append(_gate("curvature.p2_residual", rep.p2_residual,
                       cfg.tolerances["p2_max"]))
    worst = 0.0
    for kc, kd in zip(rep.K_commutator, rep.K_direct):
        worst = max(worst, abs(kc - kd) / max(abs(kc), abs(kd), 0.1))
    gates.append(_gate("curvature.pair_agreement", worst,
                       cfg.tolerances["curvature_pair"]))
    if "K_max" in cfg.tolerances:
        sup = max(rep.sup_abs(c)
                  for c in ("K_commutator", "K_gauss", "K_direct"))
        gates.append(_gate("curvature.sup_abs", sup, cfg.tolerances["K_max"]))


def _stage_patch(cfg: PipelineConfig, blocks, gates):
    doc = dict(cfg.model)
    if doc.get("kind") != "flat_torus":
        raise PipelineError(f"unsupported quotient model kind {doc.get('kind')!r}")
    model = QuotientModel(
        side=float(doc["side"]),
        chart_centers=[tuple(c) for c in doc["chart_centers"]],
        chart_radius=float(doc["chart_radius"]),
        phi_expr=doc.get("phi_expr"),
        phi_samples=(None if doc.get("phi") is None
                     else np.asarray(doc["phi"], float)),
    )
    opts = cfg.patch_options
    result = run_patchwork(
        model,
        nodes_per_diameter=int(opts.get("nodes_per_diameter", 90)),
        i0=float(opts.get("i0", min(cfg.i0_list))),
        net_spacing=float(opts.get("net_spacing", model.side / 10.0)),
        stride=cfg.stride,
        order=cfg.order,
        margin=float(opts.get("margin", 2.4)),
    )
    gm = result.global_metric
    blocks["patch"] = {
        "i0": result.i0,
        "n_net": len(gm.points),
        "max_discrepancy": gm.max_discrepancy,
        "n_candidates": [len(c) for c in gm.candidates],
    }
    gates.append(_gate("patch.consistency", gm.max_discrepancy,
                       cfg.tolerances["patch_consistency"]))


def run_pipeline(config: PipelineConfig) -> PipelineReport:
    """Run the enabled stages and evaluate all tolerance gates.

    Raises PipelineError with the failing stage named on hard failures;
    tolerance violations are reported through gates, not exceptions.
    """
    blocks: dict = {}
    gates: list[dict] = []
    timings: dict = {}
    try:
        m = metric_from_document(config.metric_doc)
    except Exception as exc:
        raise PipelineError(f"stage load-metric failed: {exc}") from exc
    runners = {
        "norm": lambda: _stage_norm(config, m, blocks, gates),
        "cell": lambda: _stage_cell(config, m, blocks, gates),
        "smooth": lambda: _stage_smooth(config, m, blocks, gates),
        "curvature": lambda: _stage_curvature(config, m, blocks, gates),
        "patch": lambda: _stage_patch(config, blocks, gates),
    }
    for stage in KNOWN_STAGES:
        if stage not in config.stages:
            continue
        t0 = time.perf_counter()
        try:
            runners[stage]()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage {stage} failed: {exc}") from exc
        timings[stage] = time.perf_counter() - t0
    cfg_dict = {
        "metric": config.metric_doc,
        "i0": config.i0_list,
        "stages": [s for s in KNOWN_STAGES if s in config.stages],
        "scale": config.scale,
        "flavor": config.flavor,
        "k": config.k,
        "exponent": config.exponent,
        "net_spacing_nodes": config.net_spacing_nodes,
        "stride": config.stride,
        "order": config.order,
        "margin": config.margin,
        "model": config.model,
        "patch": config.patch_options,
        "tolerances": config.tolerances,
        "seed": config.seed,
    }
    return PipelineReport(
        SCHEMA_TAG, _jsonable(cfg_dict), _jsonable(blocks), gates, timings
    )


def write_report(report: PipelineReport, out_dir: str | Path) -> Path:
    """Write report.json (deterministic) plus a timings.json sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(
        json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n"
    )
    (out / "timings.json").write_text(
        json.dumps(_jsonable(report.timings), sort_keys=True, indent=2) + "\n"
    )
    return path


def report_schema() -> dict:
    """Machine-readable outline of the report document."""
    return {
        "schema": SCHEMA_TAG,
        "config": "echo of the resolved configuration",
        "blocks": {
            "norm": "ScaledNormReport fields",
            "cell": "deviation stats plus radial profile arrays",
            "smooth": "per-i0 sandwich sweep and norm non-inflation",
            "curvature": "CurvatureReport fields",
            "patch": "global-metric consistency summary",
        },
        "gates": [{"name": "...", "value": 0.0, "threshold": 0.0,
                   "passed": True}],
        "passed": "conjunction of all gates",
    }
