import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from defecthom.coeff import CoefficientModel, DefectSpec, PeriodicSpec
from defecthom.estimators import CellHomogenizer, DecayLawRegressor, OperatorNormEstimator


def test_cell_homogenizer_laminate():
    model = CoefficientModel(PeriodicSpec.laminate(2, [(2.0, 1.0), (2.0, 1.0)]), mu_min=0.5)
    est = CellHomogenizer(n=64, invariant_measure=True).fit(model)
    assert np.abs(est.a_star_ - np.diag([np.sqrt(3), 2.0])).max() < 1e-3
    assert est.m_per_.min > 0
    flux = est.transform([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(flux, est.a_star_.T)
    with pytest.raises(NotFittedError):
        CellHomogenizer().transform([[1.0, 0.0]])


def test_clone_and_params():
    est = CellHomogenizer(n=32)
    assert est.get_params() == {"n": 32, "invariant_measure": False}
    c = clone(est.set_params(n=16))
    assert c.n == 16 and not hasattr(c, "a_star_")
    o = clone(OperatorNormEstimator(t_grid=(0.0, 1.0), q_list=(2.0,)))
    assert o.get_params()["q_list"] == (2.0,)


def test_decay_law_regressor():
    R = np.array([1.0, 2.0, 4.0, 8.0])
    y = 3.0 * R**-2.0
    reg = DecayLawRegressor().fit(R, y)
    assert reg.slope_ == pytest.approx(-2.0)
    assert reg.predict([16.0])[0] == pytest.approx(3.0 / 256)
    assert reg.score(R, y) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        DecayLawRegressor().fit([1.0], [1.0])


def test_operator_norm_estimator():
    model = CoefficientModel(PeriodicSpec.identity(2), DefectSpec("gaussian", 0.5, width=1.0))
    est = OperatorNormEstimator(n=8, L=2, t_grid=(0.0, 1.0), q_list=(2.0,), probe_count=4)
    est.fit(model)
    assert len(est.estimates_) == 2
    assert est.max_ratio_[2.0] >= est.estimates_[0].max_ratio
