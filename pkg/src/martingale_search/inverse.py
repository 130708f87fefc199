"""Absorption recovery on a 1-D diffusion toy model.

The forward model discretises ``-kappa phi'' + mu phi = S`` on ``N``
interior nodes with ``phi = 0`` at both ends. Measurements are samples
of ``H = mu * phi`` at a few detector nodes. The global optimizer and a
prediction/gain-only filter both try to recover ``mu``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .ensemble import ConfigError, Ensemble, ObjectiveSpec, SearchConfig
from .harness import run_single
from .update import apply_bounds, compute_gain, predict

BACKGROUND = 0.01
CONTRAST = 5.0


@dataclass
class ToyForwardModel:
    n: int = 20
    kappa: float = 0.01
    source: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigError("grid needs at least one node")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        self.n = int(self.n)
        self.source = (np.ones(self.n) if self.source is None
                       else np.asarray(self.source, dtype=float).ravel())
        if self.source.shape != (self.n,):
            raise ConfigError("source length must equal n")

    @property
    def h(self):
        return 1.0 / (self.n + 1)

    @property
    def nodes(self):
        return self.h * np.arange(1, self.n + 1)

    def matrix(self, mu):
        """Dense system matrix, for checks."""
        c = self.kappa / self.h ** 2
        A = np.diag(2.0 * c + np.asarray(mu, dtype=float))
        A -= c * (np.eye(self.n, k=1) + np.eye(self.n, k=-1))
        return A


def solve_forward(model: ToyForwardModel, mu):
    """Fluence ``phi`` from a banded Cholesky solve of the SPD system."""
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.shape != (model.n,):
        raise ValueError(f"mu must have length {model.n}")
    if not np.all(mu > 0):
        raise ValueError("mu must be positive")
    c = model.kappa / model.h ** 2
    ab = np.empty((2, model.n))
    ab[0, 0] = 0.0
    ab[0, 1:] = -c
    ab[1] = 2.0 * c + mu
    return scipy.linalg.solveh_banded(ab, model.source)


def absorbed_energy(model, mu):
    mu = np.asarray(mu, dtype=float).ravel()
    return mu * solve_forward(model, mu)


def default_detectors(n, count):
    """``count`` distinct nodes spread evenly over the grid."""
    if not 1 <= count <= n:
        raise ConfigError(f"detector count must lie in [1, {n}]")
    return np.floor((np.arange(count) + 0.5) * n / count).astype(int)


def true_field(n, background=BACKGROUND, contrast=CONTRAST):
    """Background level with one anomaly block covering the middle fifth."""
    mu = np.full(n, background)
    width = max(1, n // 5)
    start = (n - width) // 2
    mu[start:start + width] = contrast * background
    return mu


def anomaly_mask(n):
    return true_field(n, 1.0, 2.0) > 1.5


@dataclass
class MeasurementSet:
    detectors: np.ndarray
    values: np.ndarray
    noise_rel: float

    def __post_init__(self):
        self.detectors = np.asarray(self.detectors, dtype=int)
        self.values = np.asarray(self.values, dtype=float)


def synthesize(model, mu_true, detectors, noise_rel, rng):
    """``y_d = H_true(d) (1 + noise_rel xi_d)``; ``rng`` is a numpy Generator or RngStream."""
    detectors = np.asarray(detectors, dtype=int)
    if detectors.size == 0 or len(set(detectors.tolist())) != detectors.size:
        raise ConfigError("detector indices must be distinct and nonempty")
    if detectors.min() < 0 or detectors.max() >= model.n:
        raise ConfigError("detector index outside the grid")
    H = absorbed_energy(model, mu_true)[detectors]
    if noise_rel == 0:
        return MeasurementSet(detectors, H, 0.0)
    xi = rng.normal((detectors.size,)) if hasattr(rng, "other_index") else rng.standard_normal(detectors.size)
    return MeasurementSet(detectors, H * (1.0 + noise_rel * xi), float(noise_rel))


def misfit_objective(meas: MeasurementSet, model, background=BACKGROUND):
    """Per-detector absolute residuals on the box ``[0.2 b, 10 b]``."""
    def evaluate(mu):
        return np.abs(absorbed_energy(model, mu)[meas.detectors] - meas.values)

    n_f = meas.detectors.size
    return ObjectiveSpec(
        evaluate, np.full(model.n, 0.2 * background), np.full(model.n, 10.0 * background),
        n_f=n_f, f_opt=np.zeros(n_f), name=f"inverse_{n_f}det",
    )


def baseline_config(cfg: SearchConfig):
    """Config under which the full engine degenerates to the plain filter."""
    return cfg.replace(
        n_p=1, p_i=0.0, use_coalescence=False, use_cost_innovation=True,
        use_scrambling=False, use_blending=False, use_selection=False,
    )


def filtering_step(ens, spec, cfg, rng):
    """Prediction then a plain gain update ``x + G (f_tilde - f(x))``."""
    pred = predict(ens, spec, cfg, rng)
    x = pred.particles
    values = pred.values.copy()
    stale = np.isnan(values).any(axis=1)
    if stale.any():
        values[stale] = spec.evaluate_many(x[stale])
    f_tilde = values.min(axis=0)
    innov = f_tilde[None, :] - values
    gain = compute_gain(x, innov, cfg, spec.n_f).gain
    moved = apply_bounds(x + innov @ gain.T, spec.lb, spec.ub, cfg.bounds_policy)
    out_values = values.copy()
    out_values[:] = np.nan
    return Ensemble(moved, out_values, np.sqrt(np.sum(innov * innov, axis=1)),
                    ens.weights, fresh=False)


def filtering_baseline(spec, cfg, seed, max_evals=None, stride=10, timing=False):
    """RunRecord of the plain filter; its estimate is ``record.mean_x``."""
    bcfg = baseline_config(cfg)
    return run_single(spec, bcfg, seed, stride=stride, max_evals=max_evals,
                      timing=timing, engine=filtering_step)


def optimizer_config(cfg: SearchConfig):
    return cfg.replace(n_p=2, use_coalescence=False)


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def contrast_ratio(mu, mask):
    return float(np.mean(mu[mask]) / np.mean(mu[~mask]))


@dataclass
class StudyRow:
    method: str
    detectors: int
    seed: int
    rmse: float
    contrast: float
    evals: int
    status: str


@dataclass
class StudyResult:
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def select(self, method, detectors):
        return [r for r in self.rows if r.method == method and r.detectors == detectors]

    def median_rmse(self, method, detectors):
        return float(np.median([r.rmse for r in self.select(method, detectors)]))


def default_study_config():
    return SearchConfig(n_e=20, max_iter=100_000, eps=1e-12, noise_scaling="relative",
                        alpha=1.0, sigma_w=1.0, refresh_best=True)


def run_recovery_study(n=20, detector_counts=(20, 10, 5), seeds=range(10), noise_rel=0.01,
                       budget=20_000, cfg: Optional[SearchConfig] = None, kappa=0.01,
                       out=None):
    """Optimizer (two substructures, no coalescence) against the plain filter.

    Both methods get the same ensemble size and evaluation budget. The
    optimizer reports its best particle, the filter its ensemble mean.
    """
    cfg = default_study_config() if cfg is None else cfg
    model = ToyForwardModel(n=n, kappa=kappa)
    mu_true = true_field(n)
    mask = anomaly_mask(n)
    result = StudyResult()
    for count in detector_counts:
        if count > n:
            raise ConfigError("detector count exceeds grid size")
        dets = default_detectors(n, count)
        for seed in seeds:
            meas = synthesize(model, mu_true, dets, noise_rel, np.random.default_rng(10_000 + seed))
            spec = misfit_objective(meas, model)
            opt = run_single(spec, optimizer_config(cfg), seed, max_evals=budget, timing=False)
            base = filtering_baseline(spec, cfg, seed, max_evals=budget)
            for method, rec, est in (("optimizer", opt, opt.best_x), ("baseline", base, base.mean_x)):
                result.rows.append(StudyRow(method, count, seed, rmse(est, mu_true),
                                            contrast_ratio(est, mask), rec.evals, rec.status))
                result.records.append((method, count, rec))
    if out:
        write_summary(result, out)
    return result


def write_summary(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "detectors", "seed", "rmse", "contrast", "evals", "status"])
        for r in result.rows:
            w.writerow([r.method, r.detectors, r.seed, format(r.rmse, ".17g"),
                        format(r.contrast, ".17g"), r.evals, r.status])
