import numpy as np
import pytest

from metricsmooth.curvature import (
    CurvatureError,
    build_frame,
    curvature_commutator,
    curvature_direct,
    curvature_gauss,
    hessian_dictionary,
    normal_part,
    projection_derivative,
    projector_consistency,
    tangent_projection,
)


def test_frame_gram_equals_gtilde(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    fr = build_frame(sphere_kernel120, ci)
    assert np.allclose(fr.gram, sphere_kernel120.gtilde(ci), atol=1e-12)


def test_projection_laws(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    fr = build_frame(sphere_kernel120, ci)
    dct = hessian_dictionary(sphere_kernel120, ci, fr)
    for u in dct:
        pu = tangent_projection(fr, u)
        # idempotent and orthogonal split
        assert (tangent_projection(fr, pu) - pu).norm() <= 1e-10 * max(u.norm(), 1e-30)
        nu = normal_part(fr, u)
        assert abs(pu.dot(nu)) <= 1e-10 * max(u.norm() ** 2, 1e-30)


def test_projector_identity_p2(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    fr = build_frame(sphere_kernel120, ci)
    dP = projection_derivative(sphere_kernel120, ci, (1, 0), 2, fr)
    dct = hessian_dictionary(sphere_kernel120, ci, fr)
    assert dP.p2_residual_on(dct) < 1e-10


def test_commutator_antisymmetry_makes_K_symmetric(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    fr = build_frame(sphere_kernel120, ci)
    k1 = curvature_commutator(sphere_kernel120, ci, (1, 0), (0, 1), frame=fr)
    k2 = curvature_commutator(sphere_kernel120, ci, (0, 1), (1, 0), frame=fr)
    assert k1 == pytest.approx(k2, rel=1e-8)


def test_gauss_equals_commutator_discretely(sphere_kernel120):
    # the polarized Gauss combination coincides with the commutator on
    # the discrete surface (exact self-adjointness of dP); agreement far
    # below any quadrature scale is the cross-oracle check
    ci = sphere_kernel120.metric.domain.center_index
    fr = build_frame(sphere_kernel120, ci)
    kc = curvature_commutator(sphere_kernel120, ci, frame=fr)
    kg = curvature_gauss(sphere_kernel120, ci, frame=fr)
    assert kg == pytest.approx(kc, rel=1e-10)


def test_parallel_probes_raise(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    with pytest.raises(CurvatureError):
        curvature_commutator(sphere_kernel120, ci, (1, 0), (1, 0))


def test_flat_curvature_small(flat_kernel120):
    ci = flat_kernel120.metric.domain.center_index
    kc = curvature_commutator(flat_kernel120, ci)
    kd = curvature_direct(flat_kernel120, ci)
    assert abs(kc) < 0.01
    assert abs(kd) < 0.01


def test_sphere_direct_finite(sphere_kernel120):
    # differencing the sampled pull-back twice amplifies its quadrature
    # error by (i0/h)^4-type factors; at this coarse resolution only
    # boundedness is meaningful (the value check runs at 240 nodes in
    # the acceptance suite)
    ci = sphere_kernel120.metric.domain.center_index
    kd = curvature_direct(sphere_kernel120, ci)
    assert np.isfinite(kd) and abs(kd) < 5.0


def test_consistency_finite(sphere_kernel120):
    ci = sphere_kernel120.metric.domain.center_index
    cons = projector_consistency(sphere_kernel120, ci, delta=1)
    assert 0.0 <= cons < 1.0
