import math

import numpy as np
import pytest

from metricsmooth.grid import build_chart_domain, sample_metric
from metricsmooth.norms import (
    ChartAtlas,
    NormError,
    NormFlavor,
    atlas_norm_on_scale,
    chart_norm_components,
    covering_net,
    harmonic_residual,
    harmonic_residual_field,
    holder_seminorm,
    periodic_norm_components,
)


def test_flavor_parse_roundtrip():
    fl = NormFlavor.parse("c,harmonic,weak")
    assert fl.kind == "holder" and fl.harmonic and fl.weak
    assert fl.label() == "c,harmonic,weak"
    assert NormFlavor.parse("l").kind == "sobolev"
    with pytest.raises(NormError):
        NormFlavor.parse("x")
    with pytest.raises(NormError):
        NormFlavor.parse("c,smooth")


def test_holder_seminorm_linear_field(dom120):
    X, _ = dom120.coords()
    # linear fields have seminorm sup |x1-x2|^(1-alpha) = diameter^(1/2)
    val = holder_seminorm(dom120, X, 0.5)
    assert val == pytest.approx(2.0**0.5, rel=1e-6)


def test_harmonic_residual_conformal(dom120):
    # 2-D conformal metrics have sqrt(det g) g^{-1} = identity: the
    # coordinates are exactly harmonic
    m = sample_metric(
        {"kind": "conformal", "phi_expr": "0.2*sin(3*x)*cos(2*y)"}, dom120
    )
    assert harmonic_residual(m) < 1e-12


def test_harmonic_residual_anisotropic_pointwise():
    dom = build_chart_domain(2, 0.75, 96)
    m = sample_metric(
        {"kind": "anisotropic", "a_expr": "1 + 0.4*x*x", "b_expr": "1"}, dom
    )
    div = harmonic_residual_field(m)
    node = dom.nearest_node((0.5, 0.0))
    # d/dx sqrt(b/a) at x = 0.5 for a = 1 + 0.4 x^2
    a = 1 + 0.4 * 0.25
    expected = -0.4 * 0.5 / a**1.5
    assert div[0][node] == pytest.approx(expected, rel=1e-3)


def test_flat_components_vanish(flat120):
    comps = chart_norm_components(flat120, 0.8, NormFlavor("holder"))
    assert comps.q_quasi == 0.0
    assert comps.q_deriv == 0.0


def test_sobolev_components(flat120):
    comps = chart_norm_components(
        flat120, 0.8, NormFlavor("sobolev"), k=1, exponent=2.0
    )
    assert comps.q_deriv == 0.0
    m = sample_metric({"kind": "conformal", "phi_expr": "0.1*x"},
                      flat120.domain)
    c2 = chart_norm_components(m, 0.8, NormFlavor("sobolev"), 1, 2.0)
    assert c2.q_deriv > 0.0


def test_single_chart_report(flat120):
    rep = atlas_norm_on_scale(ChartAtlas([flat120]), 0.8, NormFlavor("holder"))
    assert rep.covered and rep.norm_value == 0.0
    assert rep.q_cover is None


def test_wrapping_needs_weak(flat120):
    atlas = ChartAtlas([flat120], model="flat_torus", side=0.5,
                       centers=[(0.0, 0.0)])
    with pytest.raises(NormError, match="not injective"):
        atlas_norm_on_scale(atlas, 0.4, NormFlavor("holder"))
    rep = atlas_norm_on_scale(atlas, 0.4, NormFlavor("holder", weak=True))
    assert rep.covered
    assert rep.q_cover is not None


def test_covering_net_torus(flat120):
    atlas = ChartAtlas([flat120], model="flat_torus", side=0.5,
                       centers=[(0.0, 0.0)])
    net = covering_net(atlas, 0.1)
    assert len(net) == 25
    assert net.min() >= 0.0 and net.max() < 0.5


def test_periodic_components_flat():
    g = np.tile(np.eye(2), (16, 16, 1, 1))
    comps = periodic_norm_components(g, 0.5, 0.25)
    assert comps["q_quasi"] == 0.0
    assert comps["q_deriv"] == 0.0


def test_periodic_components_conformal_wave():
    k = 32
    side = 0.5
    ax = np.arange(k) * side / k
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    phi = 0.05 * np.cos(2 * np.pi * X / side)
    g = np.zeros((k, k, 2, 2))
    g[..., 0, 0] = np.exp(2 * phi)
    g[..., 1, 1] = np.exp(2 * phi)
    comps = periodic_norm_components(g, side, 0.25)
    assert comps["q_quasi"] == pytest.approx(0.1, rel=1e-12)
    # first-derivative term dominated by 2 pi / side * 2 phi amplitude
    analytic = np.abs(np.gradient(np.exp(2 * phi[:, 0]), side / k)).max()
    oj1 = max(comps["per_order"][(1, 0)], comps["per_order"][(0, 1)])
    assert oj1 > 0.25**1.5 * analytic * 0.9


def test_scale_above_chart_radius_raises(flat120):
    with pytest.raises(NormError):
        atlas_norm_on_scale(ChartAtlas([flat120]), 1.5, NormFlavor("holder"))
