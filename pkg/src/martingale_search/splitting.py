"""State-space splitting: sequential substructure updates on composite states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import ConfigError, Ensemble, fitness
from .update import (
    StepInfo,
    _evaluate_stale,
    assemble_innovation,
    blend_weights,
    blended_update,
    compute_gain,
    draw_partners,
    predict,
    relax_and_select,
    scrambled_update,
)


@dataclass(frozen=True)
class Partition:
    """Substructure layout: ``blocks[m]`` lists the state indices of substructure m."""

    n_x: int
    blocks: tuple

    @property
    def n_p(self):
        return len(self.blocks)

    @property
    def sizes(self):
        return tuple(len(b) for b in self.blocks)


def make_partition(n_x, n_p, permutation=None):
    """First ``n_p - 1`` blocks get ``n_x // n_p`` indices, the last takes the rest.

    ``permutation`` reorders state indices before blocking.
    """
    n_x, n_p = int(n_x), int(n_p)
    if n_p < 1:
        raise ConfigError("n_p must be at least 1")
    if n_p > n_x:
        raise ConfigError(f"n_p={n_p} exceeds n_x={n_x}")
    order = np.arange(n_x) if permutation is None else np.asarray(permutation, dtype=int)
    if sorted(order.tolist()) != list(range(n_x)):
        raise ConfigError("permutation must be a permutation of range(n_x)")
    size = n_x // n_p
    cuts = [m * size for m in range(n_p)] + [n_x]
    blocks = tuple(np.sort(order[cuts[m]:cuts[m + 1]]) for m in range(n_p))
    for b in blocks:
        b.setflags(write=False)
    return Partition(n_x, blocks)


def partition_for(spec, cfg):
    if cfg.permute_partition:
        perm = np.random.default_rng(cfg.seed).permutation(spec.n_x)
        return make_partition(spec.n_x, cfg.n_p, perm)
    return make_partition(spec.n_x, cfg.n_p)


def substructure_gain(composites, innovations, partition, m, cfg, n_f):
    """Gain of substructure ``m``: its own deviations against full-length innovations."""
    block = partition.blocks[m]
    # C order keeps reductions bit-identical to the unsplit engine
    state = np.ascontiguousarray(composites[:, block])
    return compute_gain(state, innovations, cfg, n_f, n_x=partition.n_x)


def substructure_blend_weights(prev_w, fitness_m):
    """Weights for substructure m from those of m-1 and the composite misfits."""
    return blend_weights(prev_w, fitness_m)


def iterate_3s(ens: Ensemble, spec, cfg, partition, rng, return_info=False):
    """One split iteration: predict once, then update substructures in order.

    Each substructure sees composites whose earlier blocks are already
    updated and whose later blocks are still the predicted values.
    """
    if partition.n_x != spec.n_x:
        raise ConfigError("partition does not match the objective dimension")
    pred = predict(ens, spec, cfg, rng)
    n_e, n_x = pred.particles.shape
    sigma1, sigma2 = draw_partners(n_e, n_x, cfg, rng)
    predicted = pred.particles
    comp = predicted.copy()
    comp_values, n_evals = _evaluate_stale(spec, comp, pred.values)
    f_tilde = comp_values.min(axis=0)
    w = ens.weights
    weights_seen, selections = [], []
    chi = None
    for m, block in enumerate(partition.blocks):
        if m > 0:
            comp_values, n = _evaluate_stale(spec, comp, comp_values)
            n_evals += n
        if m > 0 and cfg.refresh_best:
            f_tilde = np.minimum(f_tilde, comp_values.min(axis=0))
        chi = fitness(f_tilde, comp_values)
        w = substructure_blend_weights(w, chi)
        innov = assemble_innovation(comp, comp_values, f_tilde, sigma1, cfg)
        ctx = substructure_gain(comp, innov, partition, m, cfg, spec.n_f)
        updates = innov @ ctx.gain.T
        lb, ub = spec.lb[block], spec.ub[block]
        s_pred = predicted[:, block]
        sub_sigma2 = None if sigma2 is None else sigma2[:, block]
        s_scr = scrambled_update(s_pred, updates, sub_sigma2, lb, ub, cfg.bounds_policy)
        s_bl = blended_update(s_pred, s_scr, w, lb, ub, cfg.bounds_policy)
        scr = comp.copy()
        scr[:, block] = s_scr
        bl = comp.copy()
        bl[:, block] = s_bl
        sel = relax_and_select(comp, comp_values, chi, scr, bl, f_tilde, spec, cfg, rng)
        n_evals += sel.n_evals
        comp, comp_values = sel.particles, sel.values
        weights_seen.append(w)
        selections.append((chi, sel))
    out = Ensemble(
        particles=comp,
        values=comp_values,
        fitness=chi,
        weights=w,
        fresh=not np.isnan(comp_values).any(),
    )
    if return_info:
        return out, StepInfo(f_tilde, weights_seen, selections, n_evals)
    return out
