import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metricsmooth.grid import (
    GridError,
    analytic_distance,
    build_chart_domain,
    geodesic_distance,
    interior_mask,
    metric_eigen_bounds,
    metric_from_document,
    reference_gauss_curvature,
    sample_metric,
    volume_measure,
)


def test_chart_domain_layout(dom120):
    assert dom120.npts == 121
    ci = dom120.center_index
    assert np.allclose(dom120.node_xy(ci), [0.0, 0.0])
    ax = dom120.axis()
    assert ax[0] == -1.0 and ax[-1] == 1.0
    # mask is the closed coordinate ball
    X, Y = dom120.coords()
    assert np.array_equal(dom120.mask, np.hypot(X, Y) <= 1.0 + 1e-12)


def test_domain_validation():
    with pytest.raises(GridError):
        build_chart_domain(4, 1.0, 64)
    with pytest.raises(GridError):
        build_chart_domain(2, 1.0, 2)
    with pytest.raises(GridError):
        build_chart_domain(2, -1.0, 64)


def test_flat_metric(flat120):
    assert np.allclose(flat120.coeffs[flat120.domain.mask], np.eye(2))
    assert flat120.qhat == 0.0
    assert metric_eigen_bounds(flat120) == 0.0


def test_sphere_metric_normalized_at_origin(sphere120):
    # coord_scale 1/2 makes the stereographic factor 1 at the center
    ci = sphere120.domain.center_index
    assert np.allclose(sphere120.coeffs[ci], np.eye(2), atol=1e-14)


def test_conformal_and_anisotropic(dom120):
    m = sample_metric({"kind": "conformal", "phi": 0.3}, dom120)
    assert np.allclose(m.coeffs[..., 0, 0][dom120.mask], math.exp(0.6))
    m2 = sample_metric(
        {"kind": "anisotropic", "a_expr": "1 + 0.1*x*x", "b_expr": "1.5"},
        dom120,
    )
    assert np.allclose(m2.coeffs[..., 1, 1][dom120.mask], 1.5)
    assert np.all(m2.coeffs[..., 0, 1] == 0.0)


def test_unknown_generator(dom120):
    with pytest.raises(GridError):
        sample_metric({"kind": "nope"}, dom120)


def test_metric_from_document():
    m = metric_from_document({
        "dim": 2, "radius": 0.5, "nodes": 64,
        "generator": {"kind": "flat"},
    })
    assert m.domain.radius == 0.5
    assert m.generator_tag == "flat"
    with pytest.raises(GridError):
        metric_from_document({"dim": 2, "radius": 0.5, "nodes": 64})


def test_scaled_conformal_shift(dom120):
    m = sample_metric({"kind": "conformal", "phi": 0.1}, dom120)
    m2 = m.scaled(4.0)
    assert np.allclose(m2.coeffs, 4.0 * m.coeffs)
    assert m2.params["phi"] == pytest.approx(0.1 + 0.5 * math.log(4.0))


def test_analytic_distance_matches_graph(sphere120):
    ci = sphere120.domain.center_index
    exact = analytic_distance(sphere120, ci)
    graph = geodesic_distance(sphere120, ci, method="graph", limit=0.5).values
    sel = np.isfinite(graph) & (exact <= 0.4)
    # 16-neighbor graph distances carry a small metrication overshoot;
    # midpoint-weighted chords can also undershoot slightly under curvature
    rel = (graph[sel] - exact[sel]) / np.maximum(exact[sel], 1e-3)
    assert rel.min() > -1e-3
    assert rel.max() < 0.03


def test_distance_window(sphere120):
    win = (slice(40, 60), slice(50, 70))
    full = analytic_distance(sphere120, (50, 60))
    part = analytic_distance(sphere120, (50, 60), window=win)
    assert np.allclose(part, full[win])


def test_reference_curvature_sphere():
    # curvature-1 surface in a stereographic chart: K = 1 on the interior
    dom = build_chart_domain(2, 1.0, 64)
    m = sample_metric({"kind": "sphere", "rho": 1.0}, dom)
    K = reference_gauss_curvature(m)
    inner = interior_mask(dom.mask, cells=2)
    assert np.abs(K[inner] - 1.0).max() < 0.01


def test_volume_measure_flat(flat120):
    w = volume_measure(flat120).weights
    h = flat120.domain.spacing
    assert w[flat120.domain.center_index] == pytest.approx(h**2)
    assert np.all(w[~flat120.domain.mask] == 0.0)


@settings(max_examples=20, deadline=None)
@given(lam2=st.floats(0.25, 4.0), phi=st.floats(-0.5, 0.5))
def test_eigen_bounds_scaling(lam2, phi):
    dom = build_chart_domain(2, 1.0, 32)
    m = sample_metric({"kind": "conformal", "phi": phi}, dom)
    q = metric_eigen_bounds(m)
    q2 = metric_eigen_bounds(m.scaled(lam2))
    assert q == pytest.approx(abs(2 * phi))
    assert q2 == pytest.approx(abs(2 * phi + math.log(lam2)), abs=1e-12)
