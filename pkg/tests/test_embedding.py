import math

import numpy as np
import pytest

from metricsmooth.embedding import (
    EmbeddingError,
    EmbeddingKernel,
    L2Vector,
    build_cutoff,
    calibrate_normalization,
    calibrated_cutoff,
    eval_net,
    normalization_integral,
    pullback_metric,
)
from metricsmooth.grid import build_chart_domain, sample_metric


def test_cutoff_profile_shape():
    c = build_cutoff(2)
    assert c.beta(0.25) == 0.0
    assert c.beta(0.2) == 0.0
    assert c.beta(0.5) == pytest.approx(c.amplitude)
    assert c.beta(0.9) == pytest.approx(c.amplitude)
    assert c.dbeta(0.25) == 0.0
    assert c.dbeta(0.5) == pytest.approx(0.0, abs=1e-12)
    mid = c.beta(0.375)
    assert 0.0 < mid < c.amplitude


def test_calibration_value_and_integral():
    b2 = calibrate_normalization(2)
    # quartic homogeneity of the normalization integral in the amplitude
    assert b2 == pytest.approx(0.6745800590286646, abs=1e-9)
    c = calibrated_cutoff(2)
    val = normalization_integral(c, 2, ds=1.0 / 200, du=1.0 / 400)
    assert val == pytest.approx(1.0, rel=5e-3)


def test_l2_vector_algebra():
    w = np.full((3, 3), 0.25)
    a = L2Vector(np.ones((3, 3)), w)
    b = L2Vector(2.0 * np.ones((3, 3)), w)
    assert a.dot(b) == pytest.approx(2.0 * 9 * 0.25)
    assert (a + b).field[0, 0] == 3.0
    assert (b - a).field[0, 0] == 1.0
    assert (a * 3.0).norm() == pytest.approx(3.0 * 1.5)


def test_kernel_margin_guard(flat120):
    with pytest.raises(EmbeddingError):
        EmbeddingKernel(flat120, 0.2, margin=1.0)


def test_symmetry_of_averaged_functions(flat_kernel120):
    # f_p(q) = f_q(p): the averaged function field evaluated crosswise
    k = flat_kernel120
    ci = k.metric.domain.center_index
    p = (ci[0] + 3, ci[1] - 2)
    q = (ci[0] - 4, ci[1] + 5)
    fp = k.embedding_function(p)
    fq = k.embedding_function(q)
    assert fp[q] == pytest.approx(fq[p], rel=1e-12, abs=1e-15)


def test_flat_isometry_small(flat_kernel120):
    k = flat_kernel120
    ci = k.metric.domain.center_index
    for v in ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
        dv = k.embedding_differential(ci, v)
        n2 = dv.dot(dv)
        assert n2 == pytest.approx(float(np.dot(v, v)), rel=2e-2)


def test_pullback_ratios_flat(flat_kernel120):
    pts = eval_net(flat_kernel120, 30)
    assert len(pts) > 0
    pf = pullback_metric(flat_kernel120, pts)
    assert pf.max_log_ratio < 0.02


def test_pullback_ratios_sphere(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    pf = pullback_metric(sphere_kernel120, [ci, (ci[0] + 5, ci[1] + 5)])
    assert pf.max_log_ratio < 0.05


def test_eval_region_outside_raises(flat_kernel120):
    with pytest.raises(EmbeddingError):
        flat_kernel120.embedding_function((1, 1))


def test_gtilde_symmetric(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    g = sphere_kernel120.gtilde(ci)
    assert g[0, 1] == pytest.approx(g[1, 0], abs=1e-14)
    assert np.all(np.linalg.eigvalsh(g) > 0)


def test_rescaled_chart_same_gtilde():
    # lambda^2-rescaled metric with lambda-rescaled i0 reproduces the
    # pull-back up to the exact lambda^2 factor
    dom = build_chart_domain(2, 1.0, 120)
    m = sample_metric({"kind": "conformal", "phi": 0.1}, dom)
    lam = 1.5
    k1 = EmbeddingKernel(m, 0.15)
    k2 = EmbeddingKernel(m.scaled(lam**2), 0.15 * lam)
    ci = dom.center_index
    g1 = k1.gtilde(ci)
    g2 = k2.gtilde(ci)
    assert np.allclose(g2, lam**2 * g1, rtol=1e-8)
