import numpy as np
import pytest

from defecthom.coeff import (CoefficientModel, DefectClassError, DefectSpec, EllipticityError,
                             PeriodicSpec, TrigTerm, defect_annulus_masses, ellipticity_check,
                             ellipticity_report, sample_coefficient, sample_defect,
                             sample_oscillatory, sample_periodic)
from defecthom.field import GridSpec


def laminate_model(**defect):
    per = PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 0.0)])
    return CoefficientModel(per, DefectSpec(**defect) if defect else DefectSpec(), mu_min=0.5,
                            mu_max=4.0)


def test_laminate_values():
    g = GridSpec(2, 16)
    a = sample_periodic(laminate_model(), g)
    x = g.coords()[0]
    assert np.allclose(a.values[0, 0], 2 + np.sin(2 * np.pi * x), atol=1e-15)
    assert np.all(a.values[1, 1] == 2.0)
    assert np.all(a.values[0, 1] == 0.0)
    assert a.symmetric
    lo, hi = ellipticity_check(a)
    assert abs(lo - 1.0) < 1e-12 and abs(hi - 3.0) < 1e-12


def test_ellipticity_violation_reports_node():
    per = PeriodicSpec.laminate(2, [(1.0, 1.5), (1.0, 0.0)])
    model = CoefficientModel(per, mu_min=0.1, mu_max=10.0)
    with pytest.raises(EllipticityError) as info:
        sample_periodic(model, GridSpec(2, 16))
    assert info.value.node is not None
    assert info.value.value < 0.1


def test_nonsymmetric_report_flags_symmetrization():
    per = PeriodicSpec(((1.0, 0.0), (0.0, 1.0)), (TrigTerm(0, 1, 0.3, (1, 0), "cos"),))
    a = sample_periodic(CoefficientModel(per, mu_min=0.1, mu_max=2.0), GridSpec(2, 16))
    rep = ellipticity_report(a)
    assert rep["symmetrized"] and rep["passed"]
    assert abs(rep["mu_min_observed"] - 0.85) < 1e-12
    assert not a.symmetric


def test_transpose_swaps_entries():
    per = PeriodicSpec(((1.0, 0.2), (0.0, 1.0)), (TrigTerm(0, 1, 0.3, (0, 1)),))
    t = per.transpose()
    x = GridSpec(2, 8).coords()
    assert np.array_equal(t.evaluate(x), np.swapaxes(per.evaluate(x), 0, 1))


def test_trig_term_kind_rejected():
    with pytest.raises(ValueError):
        TrigTerm(0, 0, 1.0, (1, 0), "tan")


def test_defect_profiles():
    r = np.array([0.0, 0.5, 1.0, 2.0])
    g = DefectSpec("gaussian", 1.0, width=1.0).profile(r)
    assert np.allclose(g, np.exp(-r**2 / 2))
    b = DefectSpec("compact-bump", 1.0, width=1.0).profile(r)
    assert np.allclose(b, [1.0, 0.75**3, 0.0, 0.0])
    s = DefectSpec("algebraic", 1.0, s=3.0).profile(r)
    assert np.allclose(s, (1 + r**2) ** -1.5)
    with pytest.raises(ValueError):
        DefectSpec("gaussian", 1.0, width=0.0)
    with pytest.raises(ValueError):
        DefectSpec("unknown")


def test_algebraic_defect_class_check():
    per = PeriodicSpec.identity(3)
    with pytest.raises(DefectClassError):
        CoefficientModel(per, DefectSpec("algebraic", 0.5, s=1.0), r=2.0)
    CoefficientModel(per, DefectSpec("algebraic", 0.5, s=2.0), r=2.0)
    with pytest.raises(DefectClassError):
        CoefficientModel(per, r=0.5)


def test_defect_sampling_and_continuation():
    model = laminate_model(kind="gaussian", amplitude=0.5, width=1.0)
    box = GridSpec(2, 8, 4, "box")
    at = sample_defect(model, box)
    assert at.values[(0, 0) + box.center_index] == 0.5
    full = sample_coefficient(model, box, t=0.5)
    per = sample_coefficient(model, box, t=0.0)
    assert np.allclose(full.values - per.values, 0.5 * at.values)
    half = model.scaled_defect(0.5)
    assert np.allclose(sample_defect(half, box).values, 0.5 * at.values)
    assert not model.without_defect().has_defect
    with pytest.raises(ValueError):
        sample_defect(model, GridSpec(2, 8))


def test_annulus_masses_gaussian_2d():
    # |A I|_F^2 = 2 exp(-|x|^2); over R <= |x| < 2R this is 2 pi (e^{-R^2} - e^{-4R^2})
    model = laminate_model(kind="gaussian", amplitude=1.0, width=1.0)
    box = GridSpec(2, 32, 8, "box")
    for R, mass in defect_annulus_masses(model, box, [0.5, 1.0, 2.0], r=2.0):
        exact = 2 * np.pi * (np.exp(-R**2) - np.exp(-4 * R**2))
        assert abs(mass - exact) < 0.02 * exact + 1e-6


def test_oscillatory_sampling_rescales():
    model = laminate_model(kind="gaussian", amplitude=0.5, width=1.0)
    dom = GridSpec(2, 64, 1, "domain")
    a = sample_oscillatory(model, dom, 0.25, with_defect=False)
    x = dom.coords()[0]
    assert np.allclose(a.values[0, 0], 2 + np.sin(2 * np.pi * x / 0.25), atol=1e-12)
    b = sample_oscillatory(model, dom, 0.25)
    c = tuple(i // 2 for i in dom.shape)
    assert abs(b.values[(0, 0) + c] - a.values[(0, 0) + c] - 0.5) < 1e-12
