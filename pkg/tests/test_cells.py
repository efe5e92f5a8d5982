import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metricsmooth.cells import (
    CellCache,
    CellError,
    cell_deviation_report,
    euclidean_cell_oracle,
    solve_cell,
)
from metricsmooth.grid import build_chart_domain, sample_metric


def test_euclidean_oracle_values():
    # (i0^2 - |p - s|^2) / (2n), clipped at the ball boundary
    assert euclidean_cell_oracle((0, 0), 0.4, (0, 0), 2) == pytest.approx(0.04)
    assert euclidean_cell_oracle((0, 0), 0.4, (0.4, 0), 2) == 0.0
    assert euclidean_cell_oracle((0, 0), 0.4, (1.0, 0), 2) == 0.0


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.5, 2.0), x=st.floats(-0.2, 0.2), y=st.floats(-0.2, 0.2))
def test_euclidean_oracle_scaling(lam, x, y):
    a = euclidean_cell_oracle((0.0, 0.0), 0.3, (x, y), 2)
    b = euclidean_cell_oracle((0.0, 0.0), lam * 0.3, (lam * x, lam * y), 2)
    assert b == pytest.approx(lam**2 * a, rel=1e-12, abs=1e-15)


def test_flat_cell_matches_oracle(flat120):
    dom = flat120.domain
    sol = solve_cell(flat120, dom.center_index, 0.2)
    dev = cell_deviation_report(sol, 2, flat120)
    assert dev.eps_value < 2e-4
    assert dev.eps_grad < 2e-2
    # paraboloid Hessian has entries of size 1/(2n); bound stays O(1)
    assert dev.hess_bound < 1.0


def test_cell_solution_accessors(flat120):
    dom = flat120.domain
    s = dom.center_index
    sol = solve_cell(flat120, s, 0.2)
    assert sol.value_at(s) == pytest.approx(0.2**2 / 4.0, rel=1e-3)
    assert sol.dist_at(s) == 0.0
    g = sol.grad_at(s)
    assert np.linalg.norm(g) < 1e-8
    off = (s[0] + 6, s[1])
    # gradient of the paraboloid is -(p - s)/n
    assert sol.grad_at(off) == pytest.approx([-6 * dom.spacing / 2.0, 0.0],
                                             abs=2e-3)
    far = (s[0] + 40, s[1])   # outside B(s, R * i0) in grid units
    assert np.isnan(sol.grad_at(far)).all()


def test_cell_preconditions(flat120):
    dom = flat120.domain
    with pytest.raises(CellError):
        solve_cell(flat120, dom.center_index, 2.0 * dom.spacing)
    with pytest.raises(CellError):
        solve_cell(flat120, (0, 0), 0.2)        # center outside the mask
    with pytest.raises(CellError):
        solve_cell(flat120, (5, 60), 0.2)       # ball crosses the boundary


def test_zero_boundary_and_interior_positive(sphere120):
    sol = solve_cell(sphere120, sphere120.domain.center_index, 0.2)
    inside = sol.ball
    assert np.all(sol.values[~inside] == 0.0)
    assert np.all(sol.values[inside] > 0.0)


def test_cell_cache_reuses(flat120):
    cache = CellCache()
    a = cache.get(flat120, flat120.domain.center_index, 0.2)
    b = cache.get(flat120, flat120.domain.center_index, 0.2)
    assert a is b
    assert len(cache) == 1


def test_conformal_residual_is_flat_poisson():
    # 2-D conformal metrics make the cell PDE a flat Poisson problem, so
    # the discrete solution matches the conformal rescaling exactly at
    # the center when phi is constant
    dom = build_chart_domain(2, 1.0, 120)
    m = sample_metric({"kind": "conformal", "phi": 0.2}, dom)
    lam = np.exp(2 * 0.2)
    sol = solve_cell(m, dom.center_index, 0.2)
    flat = sample_metric({"kind": "flat"}, dom)
    ref = solve_cell(flat, dom.center_index, 0.2 / np.exp(0.2))
    assert sol.value_at(dom.center_index) == pytest.approx(
        lam * ref.value_at(dom.center_index), rel=1e-10
    )
