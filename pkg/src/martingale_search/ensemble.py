"""Particles, objectives, search configuration and ensemble statistics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .rng import RngStream

BOUNDS_POLICIES = ("clip", "reflect")
NOISE_SCALINGS = ("absolute", "relative")


class ConfigError(ValueError):
    """Invalid objective or search configuration."""


class GainSolveError(RuntimeError):
    """The gain system could not be solved even after diagonal jitter."""


@dataclass
class ObjectiveSpec:
    """Black-box objective ``f: R^n_x -> R^n_f`` on a box ``[lb, ub]``.

    ``evaluator`` maps one length-``n_x`` vector to a scalar or a
    length-``n_f`` vector. ``f_opt`` is the known optimal value when there
    is one; it is only used for error reporting.
    """

    evaluator: Callable
    lb: np.ndarray
    ub: np.ndarray
    n_f: int = 1
    f_opt: Optional[np.ndarray] = None
    name: str = "objective"

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        if self.lb.shape != self.ub.shape or self.lb.size == 0:
            raise ConfigError("lb and ub must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ConfigError("bounds must be finite")
        if np.any(self.lb >= self.ub):
            raise ConfigError("lb < ub must hold component-wise")
        if int(self.n_f) < 1:
            raise ConfigError("n_f must be positive")
        self.n_f = int(self.n_f)
        if self.f_opt is not None:
            self.f_opt = np.atleast_1d(np.asarray(self.f_opt, dtype=float))
            if self.f_opt.shape != (self.n_f,):
                raise ConfigError(f"f_opt must have length n_f={self.n_f}")

    @property
    def n_x(self):
        return self.lb.size

    def evaluate(self, x):
        out = np.atleast_1d(np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float))
        if out.shape != (self.n_f,):
            raise ValueError(f"{self.name}: evaluator returned shape {out.shape}, expected ({self.n_f},)")
        return out

    def evaluate_many(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            return np.empty((0, self.n_f))
        return np.stack([self.evaluate(x) for x in X])


@dataclass
class SearchConfig:
    """Tunables of the search.

    ``sigma_b`` is the per-dimension prediction noise scale. ``sigma_w``
    is the per-objective cost noise scale and ``alpha`` the coalescence
    noise intensity.

    With ``noise_scaling="relative"`` (default) the measurement noise
    entries are multiplied by the ensemble spread of the matching
    innovation row, and an unset ``sigma_b`` becomes ``sigma_b_rel``
    times the per-dimension particle spread, so damping shrinks with the
    ensemble. ``"absolute"`` uses the values as given, with an unset
    ``sigma_b`` meaning ``1e-3 * (ub - lb)``.

    ``refresh_best`` lets each substructure step of the split engine
    lower ``f_tilde`` to the best value among the current composites.
    """

    n_e: int = 20
    n_p: int = 1
    p_i: float = 0.9
    eps: float = 1e-5
    max_iter: int = 10_000
    sigma_b: Optional[object] = None
    sigma_w: object = 1.0
    alpha: float = 1.0
    use_prediction: bool = True
    use_cost_innovation: bool = True
    use_coalescence: bool = True
    use_selection: bool = True
    use_scrambling: bool = True
    use_blending: bool = True
    bounds_policy: str = "clip"
    permute_partition: bool = False
    noise_scaling: str = "relative"
    sigma_b_rel: float = 1e-3
    refresh_best: bool = True
    seed: Optional[int] = 0

    def validate(self, spec: Optional[ObjectiveSpec] = None):
        if int(self.n_e) < 2:
            raise ConfigError("n_e must be at least 2")
        if int(self.n_p) < 1:
            raise ConfigError("n_p must be at least 1")
        if not 0.0 <= float(self.p_i) <= 1.0:
            raise ConfigError("p_i must lie in [0, 1]")
        if not float(self.alpha) > 0:
            raise ConfigError("alpha must be positive")
        if np.any(np.asarray(self.sigma_w, dtype=float) <= 0):
            raise ConfigError("sigma_w must be positive")
        if self.sigma_b is not None and np.any(np.asarray(self.sigma_b, dtype=float) < 0):
            raise ConfigError("sigma_b must be nonnegative")
        if not float(self.eps) > 0:
            raise ConfigError("eps must be positive")
        if int(self.max_iter) < 0:
            raise ConfigError("max_iter must be nonnegative")
        if self.noise_scaling not in NOISE_SCALINGS:
            raise ConfigError(f"noise_scaling must be one of {NOISE_SCALINGS}")
        if not float(self.sigma_b_rel) >= 0:
            raise ConfigError("sigma_b_rel must be nonnegative")
        if self.bounds_policy not in BOUNDS_POLICIES:
            raise ConfigError(f"bounds_policy must be one of {BOUNDS_POLICIES}")
        if not (self.use_cost_innovation or self.use_coalescence):
            raise ConfigError("at least one of cost innovation and coalescence must be on")
        if spec is not None:
            if int(self.n_p) > spec.n_x:
                raise ConfigError(f"n_p={self.n_p} exceeds n_x={spec.n_x}")
            self.sigma_b_for(spec)
            self.sigma_w_for(spec)
        return self

    def sigma_b_for(self, spec):
        if self.sigma_b is None:
            return 1e-3 * (spec.ub - spec.lb)
        return _broadcast(self.sigma_b, spec.n_x, "sigma_b")

    def sigma_w_for(self, spec_or_nf):
        n_f = spec_or_nf.n_f if hasattr(spec_or_nf, "n_f") else int(spec_or_nf)
        return _broadcast(self.sigma_w, n_f, "sigma_w")

    def replace(self, **changes):
        return replace(self, **changes)


def _broadcast(value, n, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    arr = arr.ravel()
    if arr.size != n:
        raise ConfigError(f"{name} must be a scalar or have length {n}")
    return arr


@dataclass
class Ensemble:
    """State of the ``n_e`` particles at one iteration.

    ``values`` holds evaluator outputs and is only trustworthy when
    ``fresh`` is set; rows that were moved without evaluation hold NaN.
    """

    particles: np.ndarray
    values: np.ndarray
    fitness: np.ndarray
    weights: np.ndarray
    fresh: bool = True

    @property
    def n_e(self):
        return self.particles.shape[0]

    @property
    def n_x(self):
        return self.particles.shape[1]

    def copy(self):
        return Ensemble(
            self.particles.copy(),
            self.values.copy(),
            self.fitness.copy(),
            self.weights.copy(),
            self.fresh,
        )


def init_ensemble(spec: ObjectiveSpec, cfg: SearchConfig, rng: RngStream) -> Ensemble:
    """Uniform scatter on the box, uniform weights, fitness against the ensemble best."""
    n_e = int(cfg.n_e)
    if n_e < 2:
        raise ConfigError("n_e must be at least 2")
    u = rng.uniform((n_e, spec.n_x))
    particles = spec.lb + u * (spec.ub - spec.lb)
    values = spec.evaluate_many(particles)
    f_tilde = best_vector(values)
    return Ensemble(
        particles=particles,
        values=values,
        fitness=fitness(f_tilde, values),
        weights=np.full(n_e, 1.0 / n_e),
        fresh=True,
    )


def best_vector(ens_or_values):
    """Component-wise minimum of the objective values over the ensemble."""
    values = ens_or_values.values if isinstance(ens_or_values, Ensemble) else ens_or_values
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return values.min(axis=0)


def fitness(f_tilde, f_x):
    """Euclidean misfit ``||f_tilde - f_x||``; row-wise when ``f_x`` is 2-D."""
    diff = np.asarray(f_tilde, dtype=float) - np.asarray(f_x, dtype=float)
    if diff.ndim == 0:
        return float(abs(diff))
    if diff.ndim == 1:
        out = float(np.sqrt(np.dot(diff, diff)))
        return out if out >= _TINY else float(_scaled_norm(diff[None, :])[0])
    out = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    small = out < _TINY
    if np.any(small):
        out[small] = _scaled_norm(diff[small])
    return out


# below this the squared sum may have underflowed
_TINY = 1e-150


def _scaled_norm(diff):
    scale = np.max(np.abs(diff), axis=1)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.einsum("ij,ij->i", diff / safe[:, None], diff / safe[:, None]))


def ensemble_mean(ens_or_particles):
    particles = ens_or_particles.particles if isinstance(ens_or_particles, Ensemble) else ens_or_particles
    return np.mean(np.asarray(particles, dtype=float), axis=0)
