"""Plot-data emission: delimited files plus rendered figures.

Every emitter writes a CSV (deterministic: fixed column order, fixed
float formatting, newline-terminated rows) and a PNG figure rendered
with the Agg backend alongside it.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=110)
    plt.close(fig)


def emit_cell_profile(block: dict, out_dir: Path) -> list[Path]:
    """Radial profile of the cell solution against the frozen-metric
    paraboloid (i0^2 - d^2) / (2n)."""
    d = block["profile_dist"]
    v = block["profile_value"]
    o = block["profile_oracle"]
    csv_path = out_dir / "cell_profile.csv"
    _write_csv(csv_path, ["dist", "value", "oracle"], zip(d, v, o))
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(d, o, lw=1.0, color="0.4", label="frozen-metric oracle")
    ax.plot(d, v, ".", ms=2.5, label="cell solution")
    ax.set_xlabel("geodesic distance from center")
    ax.set_ylabel("h")
    ax.set_title(f"cell radial profile (i0 = {block['i0']:g})")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "cell_profile.png"
    _save(fig, png_path)
    return [csv_path, png_path]


def emit_sandwich(block: dict, out_dir: Path) -> list[Path]:
    """Quasi-isometry ratio bound eps against the smoothing scale."""
    sweep = block["sweep"]
    csv_path = out_dir / "sandwich.csv"
    _write_csv(csv_path, ["i0", "n_points", "eps"],
               [(e["i0"], e["n_points"], e["eps"]) for e in sweep])
    fig, ax = plt.subplots(figsize=(4.4, 3.4))
    ax.plot([e["i0"] for e in sweep], [e["eps"] for e in sweep], "o-")
    ax.set_xlabel("i0")
    ax.set_ylabel("max |log ratio|")
    ax.set_title("quasi-isometry sandwich vs scale")
    if all(e["eps"] > 0 for e in sweep):
        ax.set_yscale("log")
    fig.tight_layout()
    png_path = out_dir / "sandwich.png"
    _save(fig, png_path)
    return [csv_path, png_path]


def emit_curvature(block: dict, out_dir: Path) -> list[Path]:
    """Per-point curvature estimates from all three routes."""
    pts = block["points"]
    rows = [
        (p[0], p[1], kc, kg, kd)
        for p, kc, kg, kd in zip(pts, block["K_commutator"],
                                 block["K_gauss"], block["K_direct"])
    ]
    csv_path = out_dir / "curvature.csv"
    _write_csv(csv_path, ["i", "j", "K_commutator", "K_gauss", "K_direct"],
               rows)
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    x = range(len(pts))
    ax.plot(x, block["K_commutator"], "o", label="commutator")
    ax.plot(x, block["K_gauss"], "x", label="second fundamental form")
    ax.plot(x, block["K_direct"], "+", label="direct")
    ax.set_xlabel("evaluation point index")
    ax.set_ylabel("K")
    ax.set_title("curvature estimates")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "curvature.png"
    _save(fig, png_path)
    return [csv_path, png_path]


def emit_consistency(report_dict: dict, out_dir: Path) -> list[Path]:
    """Cross-check discrepancies gathered from all blocks."""
    rows = []
    blocks = report_dict["blocks"]
    if "cell" in blocks:
        rows.append(("cell_vs_oracle", blocks["cell"]["eps_value"]))
    if "curvature" in blocks:
        rows.append(("hessian_vs_projector", blocks["curvature"]["consistency"]))
        rows.append(("projector_identity_p2", blocks["curvature"]["p2_residual"]))
    if "patch" in blocks:
        rows.append(("cross_chart_patch", blocks["patch"]["max_discrepancy"]))
    if not rows:
        return []
    csv_path = out_dir / "consistency.csv"
    _write_csv(csv_path, ["check", "discrepancy"], rows)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    labels = [r[0] for r in rows]
    vals = [max(r[1], 1e-18) for r in rows]
    ax.barh(labels, vals)
    ax.set_xscale("log")
    ax.set_xlabel("relative discrepancy")
    ax.set_title("consistency checks")
    fig.tight_layout()
    png_path = out_dir / "consistency.png"
    _save(fig, png_path)
    return [csv_path, png_path]


def emit_plot_data(report, out_dir) -> list[Path]:
    """Write all plot CSVs and figures for a pipeline report.

    Accepts a PipelineReport or its as_dict() form; emits only the
    artifacts whose blocks are present.  Returns the written paths.
    """
    doc = report if isinstance(report, dict) else report.as_dict()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    blocks = doc["blocks"]
    if "cell" in blocks:
        written += emit_cell_profile(blocks["cell"], out)
    if "smooth" in blocks:
        written += emit_sandwich(blocks["smooth"], out)
    if "curvature" in blocks:
        written += emit_curvature(blocks["curvature"], out)
    written += emit_consistency(doc, out)
    return written
