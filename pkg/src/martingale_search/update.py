"""One iteration of the unsplit search: prediction, gain, scrambling, blending,
relaxation and selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ensemble import ConfigError, Ensemble, GainSolveError, fitness

RETAIN, REGULAR, BLENDED = 0, 1, 2


def apply_bounds(x, lb, ub, policy="clip"):
    if policy == "reflect":
        width = ub - lb
        # fold into [lb, lb + 2*width) then mirror the upper half
        y = np.mod(x - lb, 2.0 * width)
        y = np.where(y > width, 2.0 * width - y, y)
        return np.clip(lb + y, lb, ub)
    return np.clip(x, lb, ub)


def perturbation_matrix(rows):
    """Mean deviations of the rows of ``rows`` (n_e x d), as a d x n_e matrix
    scaled by ``1/sqrt(n_e - 1)``."""
    rows = np.asarray(rows, dtype=float)
    n_e = rows.shape[0]
    return (rows - rows.mean(axis=0)).T / np.sqrt(n_e - 1)


def predict(ens: Ensemble, spec, cfg, rng) -> Ensemble:
    """Random-walk prediction with per-dimension noise ``sigma_b``.

    Under relative scaling with no explicit ``sigma_b`` the noise is
    ``sigma_b_rel`` times the per-dimension ensemble spread.
    """
    if not cfg.use_prediction:
        return ens.copy()
    if cfg.noise_scaling == "relative" and cfg.sigma_b is None:
        sigma_b = cfg.sigma_b_rel * ens.particles.std(axis=0)
    else:
        sigma_b = cfg.sigma_b_for(spec)
    noise = rng.normal(ens.particles.shape) * sigma_b
    moved = apply_bounds(ens.particles + noise, spec.lb, spec.ub, cfg.bounds_policy)
    out = ens.copy()
    out.particles = moved
    changed = np.any(moved != ens.particles, axis=1)
    out.values[changed] = np.nan
    out.fresh = ens.fresh and not changed.any()
    return out


def draw_partners(n_e, n_x, cfg, rng):
    """Coalescence partner per particle and per-component scrambling partners."""
    sigma1 = rng.other_index((n_e,)) if cfg.use_coalescence else None
    sigma2 = rng.other_index((n_e, n_x)) if cfg.use_scrambling else None
    return sigma1, sigma2


def assemble_innovation(particles, values, f_tilde, sigma1, cfg):
    """Innovation rows ``[f_tilde - f(x_j) ; x_j - x_sigma1(j)]`` for active blocks."""
    blocks = []
    if cfg.use_cost_innovation:
        blocks.append(np.asarray(f_tilde, dtype=float)[None, :] - values)
    if cfg.use_coalescence:
        if sigma1 is None:
            raise ValueError("coalescence requires partner indices")
        if np.any(sigma1 == np.arange(len(sigma1))):
            raise ValueError("partner index must differ from the particle index")
        blocks.append(particles - particles[sigma1])
    if not blocks:
        raise ConfigError("at least one of cost innovation and coalescence must be on")
    return np.hstack(blocks)


def measurement_covariance(cfg, n_f, n_x, FX=None):
    """Block-diagonal ``diag(sigma_w^2, ..., alpha, ...)`` over the active blocks.

    With ``cfg.noise_scaling == "relative"`` each diagonal entry is further
    multiplied by the spread of the matching innovation row (rows with no
    spread keep the absolute value), so the damping follows the ensemble.
    """
    diag = []
    if cfg.use_cost_innovation:
        diag.append(cfg.sigma_w_for(n_f) ** 2)
    if cfg.use_coalescence:
        diag.append(np.full(n_x, float(cfg.alpha)))
    diag = np.concatenate(diag)
    if cfg.noise_scaling == "relative" and FX is not None:
        spread = np.einsum("ij,ij->i", FX, FX)
        diag = np.where(spread > 0, diag * spread, diag)
    return np.diag(diag)


@dataclass
class GainContext:
    X: np.ndarray
    FX: np.ndarray
    cov_meas: np.ndarray
    gain: np.ndarray
    jittered: bool = False


def compute_gain(state, innovations, cfg, n_f, n_x=None):
    """Ensemble gain ``X FX^T (FX FX^T + Cov_meas)^-1`` via a Cholesky solve.

    ``state`` is n_e x n_s (the full particles, or one substructure of the
    composites); ``innovations`` is n_e x d. ``n_x`` is the length of the
    coalescence block and defaults to the state width.
    """
    state = np.asarray(state, dtype=float)
    n_e = state.shape[0]
    if n_e < 2:
        raise ConfigError("gain needs at least two particles")
    if n_x is None:
        n_x = state.shape[1]
    X = perturbation_matrix(state)
    # deviations of the predicted-measurement vector, i.e. of -innovation:
    # the cost block becomes the deviations of f(x) and the update descends
    FX = perturbation_matrix(-np.asarray(innovations, dtype=float))
    cov = measurement_covariance(cfg, n_f, n_x, FX)
    if cov.shape[0] != FX.shape[0]:
        raise ValueError(f"innovation length {FX.shape[0]} does not match Cov_meas {cov.shape[0]}")
    A = FX @ FX.T + cov
    rhs = FX @ X.T  # d x n_s; G^T solves A G^T = FX X^T
    jittered = False
    try:
        gt = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), rhs)
        ok = np.all(np.isfinite(gt))
    except (np.linalg.LinAlgError, ValueError):
        ok = False
    if not ok:
        jittered = True
        d = A.shape[0]
        A = A + (1e-10 * np.trace(A) / d) * np.eye(d)
        try:
            gt = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise GainSolveError(f"gain system singular after jitter: {exc}") from exc
        if not np.all(np.isfinite(gt)):
            raise GainSolveError("gain system produced non-finite values")
    return GainContext(X=X, FX=FX, cov_meas=cov, gain=gt.T, jittered=jittered)


def scrambled_update(base, updates, sigma2, lb, ub, policy="clip"):
    """Element-wise scrambled update: ``base[sigma2[j, l], l] + updates[j, l]``.

    ``base`` holds the predicted particles (or one substructure of them);
    with ``sigma2=None`` no swap takes place.
    """
    if sigma2 is None:
        swapped = base
    else:
        swapped = base[sigma2, np.arange(base.shape[1])[None, :]]
    return apply_bounds(swapped + updates, lb, ub, policy)


def blend_weights(prev_weights, chi):
    """Fitness-driven blend weights, normalised; uniform if every misfit is zero."""
    prev_weights = np.asarray(prev_weights, dtype=float)
    chi = np.asarray(chi, dtype=float)
    cw = chi * prev_weights
    w_tilde = np.maximum(cw.sum() - cw, 0.0)
    total = w_tilde.sum()
    if not total > 0 or not np.isfinite(total):
        return np.full(chi.shape, 1.0 / chi.size)
    return w_tilde / total


def blended_update(original, updated, weights, lb=None, ub=None, policy="clip"):
    w = np.asarray(weights, dtype=float)[:, None]
    out = w * original + (1.0 - w) * updated
    if lb is not None:
        out = apply_bounds(out, lb, ub, policy)
    return out


def choose_strategies(n_e, cfg, rng):
    """Per-particle strategy code: RETAIN, REGULAR (scrambled) or BLENDED.

    Update with probability ``1 - p_i``; updates split evenly between the
    regular and blended candidates. Draws are skipped when the outcome is
    forced, so degenerate settings consume no randomness.
    """
    p_i = float(cfg.p_i)
    if p_i <= 0.0:
        update = np.ones(n_e, dtype=bool)
    elif p_i >= 1.0:
        update = np.zeros(n_e, dtype=bool)
    else:
        update = rng.uniform((n_e,)) < (1.0 - p_i)
    codes = np.where(update, REGULAR, RETAIN)
    if cfg.use_blending and update.any():
        coin = rng.uniform((n_e,))
        codes = np.where(update & (coin >= 0.5), BLENDED, codes)
    return codes


@dataclass
class SelectionResult:
    particles: np.ndarray
    values: np.ndarray
    codes: np.ndarray
    accepted: np.ndarray
    candidate_fitness: np.ndarray
    n_evals: int


def relax_and_select(original, original_values, original_fitness, scrambled, blended,
                     f_tilde, spec, cfg, rng):
    """Apply the retain/regular/blended randomiser and, optionally, selection.

    With selection on, the chosen candidates are evaluated and replace the
    original only when their misfit against ``f_tilde`` is strictly lower.
    Without selection, moved rows get NaN values (not evaluated here).
    """
    n_e = original.shape[0]
    codes = choose_strategies(n_e, cfg, rng)
    cand = np.where((codes == BLENDED)[:, None], blended, scrambled)
    moving = codes != RETAIN
    particles = original.copy()
    values = np.array(original_values, dtype=float, copy=True)
    cand_fit = np.full(n_e, np.nan)
    accepted = np.zeros(n_e, dtype=bool)
    n_evals = 0
    if cfg.use_selection:
        idx = np.flatnonzero(moving)
        if idx.size:
            cvals = spec.evaluate_many(cand[idx])
            n_evals = idx.size
            cand_fit[idx] = fitness(f_tilde, cvals)
            better = cand_fit[idx] < original_fitness[idx]
            take = idx[better]
            particles[take] = cand[take]
            values[take] = cvals[better]
            accepted[take] = True
    else:
        particles[moving] = cand[moving]
        values[moving] = np.nan
        accepted = moving
    return SelectionResult(particles, values, codes, accepted, cand_fit, n_evals)


@dataclass
class StepInfo:
    """Diagnostics of one iteration, used by invariant checks and the harness."""

    f_tilde: np.ndarray
    weights: list
    selections: list
    n_evals: int


def _evaluate_stale(spec, particles, values):
    stale = np.isnan(values).any(axis=1)
    n = int(stale.sum())
    if n:
        values = values.copy()
        values[stale] = spec.evaluate_many(particles[stale])
    return values, n


def iterate(ens: Ensemble, spec, cfg, rng, return_info=False):
    """One unsplit iteration: predict, gain update, scramble, blend, relax, select."""
    pred = predict(ens, spec, cfg, rng)
    n_e, n_x = pred.particles.shape
    sigma1, sigma2 = draw_partners(n_e, n_x, cfg, rng)
    values, n_evals = _evaluate_stale(spec, pred.particles, pred.values)
    f_tilde = values.min(axis=0)
    chi = fitness(f_tilde, values)
    weights = blend_weights(ens.weights, chi)
    innov = assemble_innovation(pred.particles, values, f_tilde, sigma1, cfg)
    ctx = compute_gain(pred.particles, innov, cfg, spec.n_f)
    updates = innov @ ctx.gain.T
    scr = scrambled_update(pred.particles, updates, sigma2, spec.lb, spec.ub, cfg.bounds_policy)
    bl = blended_update(pred.particles, scr, weights, spec.lb, spec.ub, cfg.bounds_policy)
    sel = relax_and_select(pred.particles, values, chi, scr, bl, f_tilde, spec, cfg, rng)
    n_evals += sel.n_evals
    out = Ensemble(
        particles=sel.particles,
        values=sel.values,
        fitness=chi,
        weights=weights,
        fresh=not np.isnan(sel.values).any(),
    )
    if return_info:
        return out, StepInfo(f_tilde, [weights], [(chi, sel)], n_evals)
    return out
