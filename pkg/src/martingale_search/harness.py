"""Seeded experiment runs, convergence detection and record serialisation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import ConfigError, GainSolveError, ObjectiveSpec, SearchConfig, init_ensemble
from .rng import RngStream
from .splitting import iterate_3s, partition_for
from .update import iterate

log = logging.getLogger(__name__)

STAGNATION_WINDOW = 500


@dataclass
class TracePoint:
    iteration: int
    best_f: tuple
    error: Optional[float]
    evals: int
    wall_ms: Optional[float]


@dataclass
class RunRecord:
    """Convergence trace of one seeded run.

    ``status`` is ``converged``, ``max_iter`` or ``error``. ``best_x`` and
    ``mean_x`` are kept in memory only and never serialised.
    """

    seed: int
    n_f: int
    trace: list = field(default_factory=list)
    status: str = "max_iter"
    name: str = ""
    message: str = ""
    best_x: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    mean_x: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def final(self):
        return self.trace[-1] if self.trace else None

    @property
    def final_error(self):
        return None if not self.trace else self.trace[-1].error

    @property
    def iterations(self):
        return 0 if not self.trace else self.trace[-1].iteration

    @property
    def evals(self):
        return 0 if not self.trace else self.trace[-1].evals


class BestTracker:
    """Wraps an objective, counting evaluations and keeping running minima.

    ``best_f`` is the component-wise minimum over every evaluation seen;
    ``best_x`` is the point with the lowest scalar score (the value itself
    for one objective, otherwise the norm of the gap to ``f_opt`` or the sum).
    """

    def __init__(self, spec: ObjectiveSpec):
        self.inner = spec
        self.evals = 0
        self.best_f = np.full(spec.n_f, np.inf)
        self.best_x = None
        self._best_score = np.inf
        self.spec = ObjectiveSpec(self._evaluate, spec.lb, spec.ub, spec.n_f, spec.f_opt, spec.name)

    def _score(self, f):
        if f.size == 1:
            return float(f[0])
        if self.inner.f_opt is not None:
            return float(np.linalg.norm(f - self.inner.f_opt))
        return float(np.sum(f))

    def _evaluate(self, x):
        f = self.inner.evaluate(x)
        self.evals += 1
        np.minimum(self.best_f, f, out=self.best_f)
        s = self._score(f)
        if s < self._best_score:
            self._best_score = s
            self.best_x = np.array(x, dtype=float, copy=True)
        return f

    def error(self):
        if self.inner.f_opt is None:
            return None
        return float(np.linalg.norm(self.best_f - self.inner.f_opt))


def run_single(spec: ObjectiveSpec, cfg: SearchConfig, seed: int, stride: int = 10,
               max_evals: Optional[int] = None, timing: bool = True,
               stagnation_window: int = STAGNATION_WINDOW, engine=None) -> RunRecord:
    """Run the search on ``spec`` with ``seed`` until convergence or ``cfg.max_iter``.

    Converged means error < ``cfg.eps`` when ``f_opt`` is known, otherwise no
    component of the best-so-far improved by more than ``eps`` over the last
    ``stagnation_window`` iterations. ``max_evals`` caps the evaluation
    budget. ``engine`` overrides the per-iteration step (signature
    ``engine(ens, spec, cfg, rng)``).
    """
    cfg = cfg.replace(seed=seed)
    cfg.validate(spec)
    tracker = BestTracker(spec)
    tspec = tracker.spec
    rng = RngStream(seed)
    record = RunRecord(seed=seed, n_f=spec.n_f, name=spec.name)
    t0 = time.perf_counter()

    def point(k):
        wall = (time.perf_counter() - t0) * 1e3 if timing else None
        return TracePoint(k, tuple(float(v) for v in tracker.best_f), tracker.error(),
                          tracker.evals, wall)

    if engine is None:
        if cfg.n_p == 1:
            engine = iterate
        else:
            partition = partition_for(spec, cfg)

            def engine(e, s, c, r):
                return iterate_3s(e, s, c, partition, r)

    history = []
    ens = None
    try:
        ens = init_ensemble(tspec, cfg, rng)
        record.trace.append(point(0))
        history.append(tracker.best_f.copy())
        k = 0
        status = "max_iter"
        while True:
            err = tracker.error()
            if err is not None and err < cfg.eps:
                status = "converged"
                break
            if err is None and len(history) > stagnation_window:
                gain = history[-stagnation_window - 1] - history[-1]
                if np.all(gain <= cfg.eps):
                    status = "converged"
                    break
            if k >= cfg.max_iter or (max_evals is not None and tracker.evals >= max_evals):
                break
            ens = engine(ens, tspec, cfg, rng)
            k += 1
            history.append(tracker.best_f.copy())
            if len(history) > stagnation_window + 1:
                history.pop(0)
            if stride and k % stride == 0:
                record.trace.append(point(k))
        record.status = status
        if record.trace[-1].iteration != k:
            record.trace.append(point(k))
    except (GainSolveError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("seed %s failed: %s", seed, exc)
        record.status = "error"
        record.message = str(exc)
        if not record.trace or record.trace[-1].evals != tracker.evals:
            record.trace.append(point(record.trace[-1].iteration + 1 if record.trace else 0))
    record.best_x = tracker.best_x
    if ens is not None:
        record.mean_x = ens.particles.mean(axis=0)
    return record


@dataclass
class ExperimentConfig:
    """One objective, one search configuration, a list of seeds."""

    objective: ObjectiveSpec
    search: SearchConfig
    seeds: list
    out: Optional[str] = None
    stride: int = 10
    fmt: str = "csv"
    max_evals: Optional[int] = None
    timing: bool = True

    def validate(self):
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.fmt not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.stride < 0:
            raise ConfigError("stride must be nonnegative")
        self.search.validate(self.objective)
        return self


def run_experiment(exp: ExperimentConfig):
    """One RunRecord per seed; a failing seed is recorded, not raised."""
    exp.validate()
    records = [
        run_single(exp.objective, exp.search, int(s), stride=exp.stride,
                   max_evals=exp.max_evals, timing=exp.timing)
        for s in exp.seeds
    ]
    if exp.out:
        write_records(records, exp.out, exp.fmt)
    return records


def _fmt(v):
    if v is None:
        return ""
    return format(float(v), ".17g")


def csv_header(n_f):
    return ["seed", "iteration"] + [f"best_f_{i + 1}" for i in range(n_f)] + [
        "error", "evals", "wall_ms", "status"]


def write_records(records, path, fmt="csv"):
    """Write records as CSV (one row per trace point) or JSON."""
    try:
        if fmt == "csv":
            n_f = max((r.n_f for r in records), default=1)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(csv_header(n_f))
                for r in records:
                    for i, p in enumerate(r.trace):
                        status = r.status if i == len(r.trace) - 1 else "running"
                        best = [_fmt(v) for v in p.best_f] + [""] * (n_f - len(p.best_f))
                        w.writerow([r.seed, p.iteration, *best, _fmt(p.error), p.evals,
                                    _fmt(p.wall_ms), status])
        elif fmt == "json":
            with open(path, "w") as fh:
                fh.write(dumps_json({"records": [_record_dict(r) for r in records]}))
                fh.write("\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc}") from exc


def _record_dict(r):
    return {
        "seed": r.seed,
        "name": r.name,
        "n_f": r.n_f,
        "status": r.status,
        "message": r.message,
        "trace": [
            {
                "iteration": p.iteration,
                "best_f": list(p.best_f),
                "error": p.error,
                "evals": p.evals,
                "wall_ms": p.wall_ms,
            }
            for p in r.trace
        ],
    }


def dumps_json(obj):
    """JSON text with floats written to 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return json.dumps(v)
        return format(v, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def read_records(path, fmt="json"):
    """Inverse of :func:`write_records` for the JSON format."""
    if fmt != "json":
        raise ValueError("only JSON records can be read back")
    with open(path) as fh:
        data = json.load(fh)
    out = []
    for d in data["records"]:
        trace = [
            TracePoint(p["iteration"], tuple(float(v) for v in p["best_f"]),
                       None if p["error"] is None else float(p["error"]),
                       p["evals"], None if p["wall_ms"] is None else float(p["wall_ms"]))
            for p in d["trace"]
        ]
        out.append(RunRecord(seed=d["seed"], n_f=d["n_f"], trace=trace, status=d["status"],
                             name=d["name"], message=d["message"]))
    return out
