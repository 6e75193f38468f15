import numpy as np
import pytest

from defecthom.coeff import CoefficientModel, PeriodicSpec
from defecthom.field import GridSpec, MatrixField
from defecthom.green import (WindowError, annulus_gradient_law, green_column, laplace_green,
                             mixed_gradient_integrability, octant_green, pointwise_decay_fits,
                             rewrite_green_relation, symmetry_defect)


def laminate_cells(box):
    xc = box.coords(0.5)[0]
    return MatrixField(box, (2 + np.cos(2 * np.pi * xc)) * np.eye(2)[:, :, None, None], "cell")


def test_laplace_green_formulas():
    assert laplace_green(np.array([1.0]), 3)[0] == pytest.approx(1 / (4 * np.pi))
    assert laplace_green(np.array([np.e]), 2)[0] == pytest.approx(-1 / (2 * np.pi))
    with pytest.raises(ValueError):
        laplace_green(np.array([1.0]), 4)


def test_octant_matches_full_box_laplace():
    box = GridSpec(2, 8, 4, "box")
    a = MatrixField(box, np.broadcast_to(np.eye(2)[:, :, None, None], (2, 2) + box.shape).copy(),
                    "cell")
    full = green_column(a, [0, 0], mixed=True)
    oc = octant_green("laplace", 2, 8, 4.0, richardson=False, mixed=True)
    # the last stored layer lacks its Dirichlet neighbour and is never used
    k = oc.G.shape[0] - 1
    c = box.center_index
    s = (slice(c[0], c[0] + k), slice(c[1], c[1] + k))
    assert np.abs(full.G[s] - oc.G[:k, :k]).max() < 1e-12
    assert np.abs(full.mixed_sq[s] - oc.mixed_sq[:k, :k]).max() < 1e-10


def test_octant_matches_full_box_laminate():
    box = GridSpec(2, 8, 4, "box")
    full = green_column(laminate_cells(box), [0, 0], mixed=True)
    oc = octant_green("laminate", 2, 8, 4.0, mixed=True)
    k = oc.G.shape[0] - 1
    c = box.center_index
    s = (slice(c[0], c[0] + k), slice(c[1], c[1] + k))
    for name in ("G", "grad_x_sq", "grad_y_sq", "mixed_sq"):
        assert np.abs(getattr(full, name)[s] - getattr(oc, name)[:k, :k]).max() < 1e-10
    assert np.abs(full.grad_x[(slice(None),) + s] - oc.grad_x[:, :k, :k]).max() < 1e-12


def test_symmetry_and_source_checks():
    box = GridSpec(2, 8, 4, "box")
    a = laminate_cells(box)
    assert symmetry_defect(a, [0, 0], [1, 0.5]) < 1e-12
    with pytest.raises(WindowError):
        green_column(a, [3.0, 0.0])
    with pytest.raises(ValueError):
        green_column(a, [0.01, 0.0])


def test_3d_laplace_richardson_accuracy():
    p = octant_green("laplace", 3, 8, 8.0, mixed=False)
    r = p.r
    m = (r >= 1) & (r <= 2)
    assert np.abs(p.G[m] * 4 * np.pi * r[m] - 1).max() < 0.01
    with pytest.raises(WindowError):
        pointwise_decay_fits(p)


def test_2d_laplace_log_constant():
    p = octant_green("laplace", 2, 8, 32.0, mixed=False)
    r = p.r
    m = (r >= 2) & (r <= 8)
    shift = (p.G - laplace_green(np.where(r > 0, r, 1.0), 2))[m]
    assert np.ptp(shift) < 1e-3
    fits = pointwise_decay_fits(p)
    assert fits["grad"]["slope"] == pytest.approx(-1.0, abs=0.02)


def test_2d_laminate_decay_laws():
    p = octant_green("laminate", 2, 8, 32.0, mixed=True)
    fits = pointwise_decay_fits(p)
    assert fits["grad"]["ok"] and fits["mixed"]["ok"]
    law = annulus_gradient_law(p, [1.0, 2.0])
    assert law[1.0]["slope"] == pytest.approx(1.0, abs=0.05)
    assert law[2.0]["slope"] == pytest.approx(0.0, abs=0.05)
    mix = mixed_gradient_integrability(p, [2.0])
    assert mix[2.0]["relative_change"] == pytest.approx(0.04929179956488178, rel=1e-6)
    assert "annulus_q2" in p.fitted_slopes
    with pytest.raises(WindowError):
        mixed_gradient_integrability(p, [2.0], window=8.0)


def test_rewrite_green_relation_second_order():
    per = PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 0.5)])
    model = CoefficientModel(per, mu_min=0.5, mu_max=5.0)
    gaps = [rewrite_green_relation(model, GridSpec(2, n, 2, "box"))["relative_gap"]
            for n in (8, 16, 32)]
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(4.0, rel=0.05)
    iso = CoefficientModel(PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 1.0)]), mu_min=0.5)
    out = rewrite_green_relation(iso, GridSpec(2, 16, 2, "box"))
    assert out["relative_gap"] < 1e-12
    assert out["m_y"] == pytest.approx(np.sqrt(3) / 2, abs=1e-8)
