"""Command-line interface for metric smoothing runs."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .cells import cell_deviation_report, solve_cell
from .curvature import curvature_report
from .embedding import EmbeddingKernel, calibrate_normalization, eval_net, pullback_metric
from .grid import metric_from_document
from .norms import ChartAtlas, NormFlavor, atlas_norm_on_scale
from .patchwork import QuotientModel, run_patchwork
from .pipeline import (
    PipelineConfig,
    PipelineError,
    _jsonable,
    report_schema,
    run_pipeline,
    write_report,
)
from .plots import _write_csv, emit_plot_data


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise click.ClickException(f"{what} file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"invalid JSON in {p}: {exc}")


def _write_json(doc: dict, out: str) -> None:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {path}")


def _run(fn):
    try:
        return fn()
    except click.ClickException:
        raise
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


def _print_schema(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(json.dumps(report_schema(), sort_keys=True, indent=2))
    ctx.exit(0)


@click.group()
@click.version_option(__version__, prog_name="metricsmooth")
@click.option("--schema", is_flag=True, expose_value=False, is_eager=True,
              callback=_print_schema,
              help="Print the report schema outline and exit.")
def main():
    """Smooth low-regularity Riemannian metrics on coordinate charts."""


@main.command()
@click.option("--atlas", "atlas_path", required=True,
              help="Atlas JSON: {model, side, centers, charts:[chart docs]} "
                   "or a single chart document.")
@click.option("--scale", type=float, default=None,
              help="Norm scale r (default: chart radius).")
@click.option("--flavor", default="c", show_default=True,
              help="{c|l}[,harmonic][,weak]")
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--alpha", type=float, default=None, help="Holder exponent.")
@click.option("--p", "p_exp", type=float, default=None, help="Lebesgue exponent.")
@click.option("--out", required=True)
def norm(atlas_path, scale, flavor, k, alpha, p_exp, out):
    """Atlas norm-on-scale report."""
    doc = _load_json(atlas_path, "atlas")

    def go():
        fl = NormFlavor.parse(flavor)
        exponent = alpha if fl.kind == "holder" else p_exp
        if exponent is None:
            exponent = 0.5 if fl.kind == "holder" else 2.0
        if "generator" in doc:
            charts = [metric_from_document(doc)]
            atlas = ChartAtlas(charts)
        else:
            charts = [metric_from_document(c) for c in doc["charts"]]
            atlas = ChartAtlas(
                charts,
                model=doc.get("model", "single"),
                side=doc.get("side"),
                centers=[tuple(c) for c in doc.get("centers", [])],
            )
        r = scale if scale is not None else charts[0].domain.radius
        rep = atlas_norm_on_scale(atlas, r, fl, k, exponent)
        _write_json(rep.as_dict(), out)

    _run(go)


def _nearest_node(m, text: str):
    try:
        x, y = (float(t) for t in text.split(","))
    except ValueError:
        raise click.ClickException(f"--center must be 'x,y', got {text!r}")
    ax = m.domain.axis()
    return int(np.argmin(np.abs(ax - x))), int(np.argmin(np.abs(ax - y)))


@main.command()
@click.option("--metric", "metric_path", required=True)
@click.option("--center", default="0,0", show_default=True,
              help="Cell center coordinates x,y (snapped to the grid).")
@click.option("--i0", type=float, required=True)
@click.option("--out", required=True)
def cell(metric_path, center, i0, out):
    """Solve one canonical cell and report its oracle deviation."""
    doc = _load_json(metric_path, "metric")

    def go():
        m = metric_from_document(doc)
        s = _nearest_node(m, center)
        sol = solve_cell(m, s, i0)
        dev = cell_deviation_report(sol, m.domain.dim, m)
        _write_json({
            "center": list(s),
            "i0": i0,
            "window": [[sol.window[0].start, sol.window[0].stop],
                       [sol.window[1].start, sol.window[1].stop]],
            "values": sol.values,
            "dist": sol.dist,
            "deviation": {
                "eps_value": dev.eps_value,
                "eps_grad": dev.eps_grad,
                "hess_bound": dev.hess_bound,
                "grad_bound": dev.grad_bound,
            },
        }, out)

    _run(go)


@main.command()
@click.option("--metric", "metric_path", required=True)
@click.option("--i0", type=float, required=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--net", "net_nodes", type=int, default=24, show_default=True,
              help="Evaluation-net spacing in grid nodes.")
@click.option("--out", required=True)
def smooth(metric_path, i0, stride, net_nodes, out):
    """Smooth a chart metric and report the pull-back field."""
    doc = _load_json(metric_path, "metric")

    def go():
        m = metric_from_document(doc)
        kernel = EmbeddingKernel(m, i0, stride=stride)
        pts = eval_net(kernel, net_nodes)
        pf = pullback_metric(kernel, pts)
        _write_json({
            "i0": i0,
            "stride": stride,
            "calibration": calibrate_normalization(m.domain.dim),
            "points": [list(p) for p in pf.points],
            "gtilde": pf.gtilde,
            "ratio_lo": pf.ratio_lo,
            "ratio_hi": pf.ratio_hi,
            "max_log_ratio": pf.max_log_ratio,
        }, out)

    _run(go)


@main.command()
@click.option("--metric", "metric_path", required=True)
@click.option("--i0", type=float, required=True)
@click.option("--points", default=None,
              help="Semicolon-separated x,y pairs (default: chart center).")
@click.option("--out", required=True)
def curvature(metric_path, i0, points, out):
    """Curvature report (three estimates per point) plus per-point CSV."""
    doc = _load_json(metric_path, "metric")

    def go():
        m = metric_from_document(doc)
        kernel = EmbeddingKernel(m, i0)
        if points:
            pts = [_nearest_node(m, t) for t in points.split(";")]
        else:
            pts = [m.domain.center_index]
        rep = curvature_report(kernel, pts)
        _write_json(rep.as_dict(), out)
        csv_path = Path(out).with_suffix(".csv")
        _write_csv(csv_path, ["i", "j", "K_commutator", "K_gauss", "K_direct"],
                   [(p[0], p[1], kc, kg, kd)
                    for p, kc, kg, kd in zip(rep.points, rep.K_commutator,
                                             rep.K_gauss, rep.K_direct)])
        click.echo(f"wrote {csv_path}")

    _run(go)


@main.command()
@click.option("--model", "model_path", required=True)
@click.option("--i0", type=float, required=True)
@click.option("--nodes", type=int, default=90, show_default=True,
              help="Chart nodes per diameter.")
@click.option("--net-spacing", type=float, default=None,
              help="Quotient net spacing (default: side / 10).")
@click.option("--out", required=True)
def patch(model_path, i0, nodes, net_spacing, out):
    """Smooth all quotient charts and assemble the global metric."""
    doc = _load_json(model_path, "model")

    def go():
        model = QuotientModel(
            side=float(doc["side"]),
            chart_centers=[tuple(c) for c in doc["chart_centers"]],
            chart_radius=float(doc["chart_radius"]),
            phi_expr=doc.get("phi_expr"),
            phi_samples=(None if doc.get("phi") is None
                         else np.asarray(doc["phi"], float)),
        )
        spacing = net_spacing if net_spacing is not None else model.side / 10.0
        result = run_patchwork(model, nodes, i0, spacing)
        _write_json(result.global_metric.as_dict(), out)

    _run(go)


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.pass_context
def pipeline(ctx, config_path, out_dir):
    """Run the configured stages; exit 0 iff every tolerance gate passes."""
    doc = _load_json(config_path, "config")

    def go():
        cfg = PipelineConfig.from_dict(doc, Path(config_path).parent)
        return run_pipeline(cfg)

    report = _run(go)
    write_report(report, out_dir)
    for path in emit_plot_data(report, out_dir):
        click.echo(f"wrote {path}")
    for g in report.gates:
        status = "pass" if g["passed"] else "FAIL"
        click.echo(f"[{status}] {g['name']}: {g['value']:.3g} "
                   f"(threshold {g['threshold']:.3g})")
    click.echo(f"report: {Path(out_dir) / 'report.json'}")
    if not report.passed:
        ctx.exit(1)


if __name__ == "__main__":
    sys.exit(main())
