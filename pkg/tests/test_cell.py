import numpy as np
import pytest

from defecthom.cell import (KernelError, homogenized_tensor, periodic_vector_potential,
                            skew_to_vector, solve_periodic_corrector,
                            solve_periodic_invariant_measure, vector_to_skew)
from defecthom.coeff import CoefficientModel, PeriodicSpec, TrigTerm, sample_periodic
from defecthom.field import GridSpec, divergence
from defecthom.operators import matrix_divergence


def test_constant_coefficient_exact():
    mat = [[2.0, 0.3], [0.3, 1.0]]
    a = sample_periodic(CoefficientModel(PeriodicSpec.constant_matrix(mat)), GridSpec(2, 16))
    sol = solve_periodic_corrector(a, [1.0, 0.0])
    assert np.abs(sol.w_per.values).max() < 1e-12
    assert homogenized_tensor(a).a_star == pytest.approx(np.array(mat), abs=1e-12)


def test_laminate_harmonic_and_arithmetic_means():
    # a = diag(2 + sin, 2 + sin): harmonic mean sqrt(3) across layers, arithmetic 2 along
    per = PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 1.0)])
    a = sample_periodic(CoefficientModel(per, mu_min=0.5, mu_max=4.0), GridSpec(2, 64))
    res = homogenized_tensor(a)
    assert np.abs(res.a_star - np.diag([np.sqrt(3), 2.0])).max() < 1e-3
    assert res.mu_min == pytest.approx(res.a_star[0, 0])


def test_corrector_properties():
    per = PeriodicSpec(((2.0, 0.0), (0.0, 2.0)),
                       (TrigTerm(0, 0, 0.5, (1, 1)), TrigTerm(1, 1, 0.4, (1, 0), "cos")))
    a = sample_periodic(CoefficientModel(per, mu_min=0.5, mu_max=4.0), GridSpec(2, 32))
    sols = [solve_periodic_corrector(a, e) for e in np.eye(2)]
    for s in sols:
        assert abs(s.w_per.values.mean()) < 1e-12
        assert s.residual < 1e-9
        assert np.abs(divergence(s.flux).values).max() < 1e-8
    A = homogenized_tensor(a, sols).a_star
    assert np.abs(A - A.T).max() < 1e-10
    # linearity in p
    mix = solve_periodic_corrector(a, [1.0, 2.0])
    assert np.allclose(mix.w_per.values, sols[0].w_per.values + 2 * sols[1].w_per.values,
                       atol=1e-9)


def test_homogenized_tensor_missing_direction():
    a = sample_periodic(CoefficientModel(PeriodicSpec.identity(2)), GridSpec(2, 8))
    with pytest.raises(ValueError):
        homogenized_tensor(a, [solve_periodic_corrector(a, [1.0, 0.0])])


def test_invariant_measure_closed_form():
    # a = (2 + sin 2 pi x1) I in 2-D: m = sqrt(3) / (2 + sin) after normalisation
    per = PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 1.0)])
    g = GridSpec(2, 32)
    a = sample_periodic(CoefficientModel(per, mu_min=0.5, mu_max=4.0), g)
    meas = solve_periodic_invariant_measure(a)
    x = g.coords()[0]
    exact = 1.0 / (2 + np.sin(2 * np.pi * x))
    exact /= exact.mean()
    assert np.abs(meas.m_per.values - exact).max() < 1e-12
    assert meas.mean == pytest.approx(1.0)
    assert meas.residual < 1e-12
    assert meas.kernel_gap > 0


def test_invariant_measure_identity_is_one():
    a = sample_periodic(CoefficientModel(PeriodicSpec.identity(3)), GridSpec(3, 8))
    meas = solve_periodic_invariant_measure(a)
    assert np.abs(meas.m_per.values - 1.0).max() < 1e-13


def test_invariant_measure_gap_threshold():
    a = sample_periodic(CoefficientModel(PeriodicSpec.identity(2)), GridSpec(2, 8))
    with pytest.raises(KernelError):
        solve_periodic_invariant_measure(a, kernel_tol=1e3)


def test_vector_potential_skew_and_consistent():
    per = PeriodicSpec(((2.0, 0.0), (0.0, 2.0)),
                       (TrigTerm(0, 0, 0.5, (1, 1)), TrigTerm(1, 1, 0.4, (1, 0), "cos")))
    g = GridSpec(2, 32)
    a = sample_periodic(CoefficientModel(per, mu_min=0.5, mu_max=4.0), g)
    meas = solve_periodic_invariant_measure(a)
    B = periodic_vector_potential(a, meas)
    assert np.abs(B.values + np.swapaxes(B.values, 0, 1)).max() == 0.0
    target = matrix_divergence(meas.m_per.values * a.values, g.h)
    got = matrix_divergence(B.values, g.h)
    assert np.abs(got - target).max() < 1e-9 * max(1.0, np.abs(target).max())
    with pytest.raises(ValueError):
        periodic_vector_potential(a, np.ones(g.shape))


def test_skew_vector_roundtrip():
    v = np.random.default_rng(3).standard_normal((3, 4, 4, 4))
    B = vector_to_skew(v)
    assert np.array_equal(skew_to_vector(B), v)
    assert np.array_equal(B, -np.swapaxes(B, 0, 1))
