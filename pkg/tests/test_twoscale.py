import numpy as np
import pytest

from defecthom.coeff import CoefficientModel, DefectSpec, PeriodicSpec, sample_oscillatory
from defecthom.field import pin_boundary
from defecthom.operators import DivFormOperator
from defecthom.twoscale import (ResolutionError, build_correctors, convergence_study,
                                first_order_approx, h1_error, solve_homogenized,
                                solve_oscillatory)

PER = PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 1.0)])


def one(x):
    return np.ones(x.shape[1:])


def test_layered_solver_matches_sparse_solve():
    model = CoefficientModel(PER, mu_min=0.5, mu_max=5.0)
    u, grid, res = solve_oscillatory(model, 1 / 4, one)
    assert res < 1e-10
    a = sample_oscillatory(model, grid, 1 / 4, "cell")
    ref = DivFormOperator(a).solve(pin_boundary(one(grid.coords()), grid), method="direct")
    assert np.abs(u - ref).max() < 1e-12


def test_constant_coefficient_reconstruction_is_exact():
    model = CoefficientModel(PeriodicSpec.constant_matrix([[2.0, 0.0], [0.0, 1.0]]))
    cs = build_correctors(model)
    assert cs.a_star == pytest.approx(np.diag([2.0, 1.0]), abs=1e-12)
    assert all(np.abs(w).max() < 1e-12 for w in cs.w_per)
    u, grid, _ = solve_oscillatory(model, 1 / 4, one)
    us = solve_homogenized(cs.a_star, grid, one)
    u1 = first_order_approx(us, grid, cs, 1 / 4)
    assert h1_error(u, u1, grid) < 1e-12


def test_resolution_and_mode_errors():
    model = CoefficientModel(PER, mu_min=0.5, mu_max=5.0)
    with pytest.raises(ResolutionError):
        solve_oscillatory(model, 1 / 4, one, n_cell=8)
    with pytest.raises(ResolutionError):
        solve_oscillatory(model, 0.3, one)
    cs = build_correctors(model)
    u, grid, _ = solve_oscillatory(model, 1 / 4, one)
    with pytest.raises(ValueError):
        first_order_approx(u, grid, cs, 1 / 4, mode="second-order")
    with pytest.raises(ValueError):
        convergence_study(model, one, [1 / 4])


def test_laminate_rate_frozen():
    model = CoefficientModel(PER, mu_min=0.5, mu_max=5.0)
    st = convergence_study(model, one, [1 / 4, 1 / 8, 1 / 16], modes=["periodic-only"])
    assert st.h1["periodic-only"] == pytest.approx(
        [0.04702177253028023, 0.03373879756256798, 0.024065986913122842], rel=1e-6)
    assert st.rates["periodic-only"] == pytest.approx(0.4831666681558062, rel=1e-6)
    assert st.monotone["periodic-only"]
    assert 0.8 < st.rates["l2_hom"] < 1.2
    rows = st.rows()
    assert len(rows) == 3 and rows[0]["mode"] == "periodic-only"


def test_defect_correction_improves_local_error():
    model = CoefficientModel(PER, DefectSpec("gaussian", 1.0, width=1.0), mu_min=0.5, mu_max=5.0)
    st = convergence_study(model, lambda x: np.exp(2 * x[0]), [1 / 4, 1 / 8, 1 / 16])
    loc_p = st.h1_local["periodic-only"]
    loc_d = st.h1_local["defect-corrected"]
    assert all(d < p for d, p in zip(loc_d, loc_p))
    assert loc_d == pytest.approx([0.034374393625731, 0.0037890899278333087,
                                   0.0008707896797547297], rel=1e-6)
    assert st.to_dict()["local_radius"] == 2.0
