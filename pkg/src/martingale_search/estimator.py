"""Scikit-learn style estimator around the search engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .ensemble import ConfigError, ObjectiveSpec, SearchConfig
from .harness import run_single


def check_bounds(bounds):
    """Validate ``(low, high)`` pairs, one per dimension, and return two float vectors."""
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError("bounds must be a sequence of (low, high) pairs")
    lb, ub = arr[:, 0], arr[:, 1]
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))) or np.any(lb >= ub):
        raise ConfigError("bounds must be finite with lb < ub")
    return lb, ub


def check_objective(objective, bounds=None, n_f=None, f_opt=None):
    """Accept an ObjectiveSpec, an object with ``objective()``, or a callable plus bounds."""
    if isinstance(objective, ObjectiveSpec):
        return objective
    if hasattr(objective, "objective") and callable(objective.objective):
        return objective.objective()
    if not callable(objective):
        raise ConfigError("objective must be callable")
    if bounds is None:
        raise ConfigError("bounds are required for a plain callable")
    lb, ub = check_bounds(bounds)
    if n_f is None:
        n_f = np.atleast_1d(np.asarray(objective(0.5 * (lb + ub)), dtype=float)).size
    return ObjectiveSpec(objective, lb, ub, n_f=n_f, f_opt=f_opt,
                         name=getattr(objective, "__name__", "objective"))


class MartingaleSearch(BaseEstimator):
    """Ensemble global minimiser with an estimator-style interface.

    ``fit(objective, bounds=None)`` runs one seeded search. Fitted
    attributes: ``x_`` (best point seen), ``fun_`` (its objective
    vector), ``record_`` (the RunRecord), ``n_iter_`` and ``n_evals_``.
    ``predict()`` returns ``x_``.
    """

    def __init__(self, n_e=20, n_p=1, p_i=0.9, eps=1e-5, max_iter=10_000, alpha=1.0,
                 sigma_w=1.0, sigma_b=None, noise_scaling="relative", bounds_policy="clip",
                 use_coalescence=True, use_selection=True, max_evals=None, stride=10,
                 random_state=0):
        self.n_e = n_e
        self.n_p = n_p
        self.p_i = p_i
        self.eps = eps
        self.max_iter = max_iter
        self.alpha = alpha
        self.sigma_w = sigma_w
        self.sigma_b = sigma_b
        self.noise_scaling = noise_scaling
        self.bounds_policy = bounds_policy
        self.use_coalescence = use_coalescence
        self.use_selection = use_selection
        self.max_evals = max_evals
        self.stride = stride
        self.random_state = random_state

    def search_config(self):
        return SearchConfig(
            n_e=self.n_e, n_p=self.n_p, p_i=self.p_i, eps=self.eps, max_iter=self.max_iter,
            alpha=self.alpha, sigma_w=self.sigma_w, sigma_b=self.sigma_b,
            noise_scaling=self.noise_scaling, bounds_policy=self.bounds_policy,
            use_coalescence=self.use_coalescence, use_selection=self.use_selection,
        )

    def fit(self, objective, bounds=None, f_opt=None):
        spec = check_objective(objective, bounds, f_opt=f_opt)
        cfg = self.search_config().validate(spec)
        seed = 0 if self.random_state is None else int(self.random_state)
        rec = run_single(spec, cfg, seed, stride=self.stride, max_evals=self.max_evals,
                         timing=False)
        self.record_ = rec
        self.x_ = rec.best_x
        self.fun_ = None if rec.best_x is None else spec.evaluate(rec.best_x)
        self.n_iter_ = rec.iterations
        self.n_evals_ = rec.evals
        self.status_ = rec.status
        return self

    def predict(self, X=None):
        if not hasattr(self, "x_"):
            raise NotFittedError("call fit before predict")
        return self.x_
