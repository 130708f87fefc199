import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from martingale_search.benchmarks import shifted
from martingale_search.ensemble import ConfigError
from martingale_search.estimator import MartingaleSearch, check_bounds


def test_params_roundtrip():
    est = MartingaleSearch(n_p=2, p_i=0.5)
    params = est.get_params()
    assert params["n_p"] == 2 and params["p_i"] == 0.5
    assert clone(est).get_params() == params
    est.set_params(n_e=8)
    assert est.n_e == 8


def test_fit_callable_with_bounds():
    est = MartingaleSearch(max_iter=3000, random_state=1)
    est.fit(lambda x: float(((x - 0.25) ** 2).sum()), bounds=[(-1, 1), (-1, 1)], f_opt=[0.0])
    assert est.status_ == "converged"
    np.testing.assert_allclose(est.x_, [0.25, 0.25], atol=1e-2)
    assert est.fun_[0] < 1e-5
    assert est.predict() is est.x_


def test_fit_benchmark_object():
    bench = shifted("sphere", 3, seed=0)
    est = MartingaleSearch(max_iter=4000).fit(bench)
    assert est.record_.final_error < 1e-5 and est.n_iter_ > 0 and est.n_evals_ > 0


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        MartingaleSearch().predict()


@pytest.mark.parametrize("bounds", [[(0, 0)], [(1, 0), (0, 1)], [[0, 1, 2]], [(0, np.inf)]])
def test_bad_bounds(bounds):
    with pytest.raises(ConfigError):
        check_bounds(bounds)


def test_bounds_pairs():
    lb, ub = check_bounds([(-1, 1), (0, 2), (3, 4)])
    np.testing.assert_array_equal(lb, [-1, 0, 3])
    np.testing.assert_array_equal(ub, [1, 2, 4])
