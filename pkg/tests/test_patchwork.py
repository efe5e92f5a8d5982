import numpy as np
import pytest

from metricsmooth.patchwork import (
    PatchworkError,
    QuotientModel,
    ball_correspondence,
    build_atlas_metrics,
    build_chart_metric,
    lift_curve,
    nearest_representative,
    run_patchwork,
    wrap_coords,
)

PHI = "0.04*cos(12.566370614359172*x)*cos(12.566370614359172*y)"


def model4(radius=0.45):
    return QuotientModel(
        side=0.5,
        chart_centers=[(0.0, 0.0), (0.25, 0.0), (0.0, 0.25), (0.25, 0.25)],
        chart_radius=radius,
        phi_expr=PHI,
    )


def test_model_validation():
    with pytest.raises(PatchworkError):
        QuotientModel(side=0.5, chart_centers=[(0, 0)], chart_radius=0.4)
    with pytest.raises(PatchworkError):
        QuotientModel(side=0.5, chart_centers=[(0, 0)], chart_radius=0.4,
                      phi_expr="0", phi_samples=np.zeros((4, 4)))
    with pytest.raises(PatchworkError):
        QuotientModel(side=-1.0, chart_centers=[(0, 0)], chart_radius=0.4,
                      phi_expr="0")


def test_wrap_and_nearest_representative():
    assert np.allclose(wrap_coords(np.array([0.6, -0.1]), 0.5), [0.1, 0.4])
    q = nearest_representative(np.array([0.45, 0.0]), np.array([-0.02, 0.0]),
                               0.5)
    assert np.allclose(q, [-0.05, 0.0])


def test_chart_metric_periodicity():
    model = model4()
    m0 = build_chart_metric(model, (0.0, 0.0), 90)
    m1 = build_chart_metric(model, (0.5, 0.5), 90)   # one full period away
    assert np.allclose(m0.coeffs, m1.coeffs)


def test_lift_contractible_loop():
    model = model4()
    t = np.linspace(0, 2 * np.pi, 33)
    loop = np.stack([0.15 + 0.05 * np.cos(t) - 0.05,
                     0.10 + 0.05 * np.sin(t)], axis=1)
    start = np.array([0.15, 0.10])
    end = lift_curve(model, (0.0, 0.0), start, wrap_coords(loop, model.side))
    assert np.allclose(end, start, atol=1e-12)


def test_lift_winding_loop_translates():
    model = model4()
    # a loop winding once in x moves the preimage by one lattice vector
    path = np.stack([np.linspace(-0.2, 0.3, 101), np.zeros(101)], axis=1)
    start = np.array([-0.2, 0.0])
    end = lift_curve(model, (0.0, 0.0), start,
                     wrap_coords(path, model.side))
    assert np.allclose(end, [0.3, 0.0], atol=1e-12)
    # same endpoints, contractible representative: no translation
    back = np.stack([np.linspace(-0.2, 0.3, 101) * 0.0 - 0.2,
                     np.zeros(101)], axis=1)
    end2 = lift_curve(model, (0.0, 0.0), start,
                      wrap_coords(back, model.side))
    assert np.allclose(end2, start, atol=1e-12)


def test_lift_start_mismatch_raises():
    model = model4()
    with pytest.raises(PatchworkError, match="does not start"):
        lift_curve(model, (0.0, 0.0), np.array([0.1, 0.1]),
                   np.array([[0.3, 0.3], [0.31, 0.3]]))


def test_ball_correspondence_exact_translation():
    model = model4()
    metrics = build_atlas_metrics(model, 90)
    # manifold point 0.05, 0.1 seen from charts 0 and 1
    p1 = np.array([0.05, 0.10])
    p2 = np.array([-0.20, 0.10])
    bc = ball_correspondence(model, (0.0, 0.0), p1, (0.25, 0.0), p2,
                             metrics[0], metrics[1], Q=0.2)
    assert np.allclose(bc.translation, [-0.25, 0.0])
    assert bc.lift_agreement <= 1e-12
    assert bc.metric_mismatch <= 1e-12


def test_ball_correspondence_rejects_mismatched_points():
    model = model4()
    metrics = build_atlas_metrics(model, 90)
    with pytest.raises(PatchworkError):
        ball_correspondence(model, (0.0, 0.0), np.array([0.05, 0.1]),
                            (0.25, 0.0), np.array([0.0, 0.1]),
                            metrics[0], metrics[1], Q=0.2)


def test_run_patchwork_commensurability():
    model = model4()
    with pytest.raises(PatchworkError, match="net spacing"):
        run_patchwork(model, 90, 0.1, net_spacing=0.0625)
