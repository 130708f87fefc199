"""Command line front end: ``martingale-search --function sphere --dim 20 ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .benchmarks import BASE_FUNCTIONS, make_suite, read_manifest, shifted, write_manifest
from .ensemble import ConfigError, SearchConfig
from .harness import ExperimentConfig, run_experiment, write_records

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def parse_seeds(text):
    """``"3"``, ``"0,2,5"`` or ``"0-9"`` (inclusive range) of nonnegative seeds."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise ConfigError("seed list must be nonempty")
    return seeds


def read_config_file(path):
    """``key = value`` lines; keys are long flag names with or without dashes."""
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{n}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                out[key.lstrip("-").replace("-", "_")] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def build_parser():
    p = _Parser(prog="martingale-search", description="Ensemble global search on benchmark objectives.")
    p.add_argument("--config", help="key=value file supplying defaults for any flag")
    g = p.add_argument_group("problem")
    g.add_argument("--function", choices=BASE_FUNCTIONS, default="sphere")
    g.add_argument("--suite", choices=("cec_like", "bbob_like"))
    g.add_argument("--manifest", help="write the generated instances to this JSON file")
    g.add_argument("--from-manifest", help="run the instances stored in this JSON file")
    g.add_argument("--dim", type=int, default=10)
    g.add_argument("--instance-seed", type=int, default=0, help="seed of the benchmark instance")
    g.add_argument("--rotate", action="store_true", help="rotate a single --function instance")
    s = p.add_argument_group("search")
    s.add_argument("--ensemble", type=int, default=20)
    s.add_argument("--substructures", type=int, default=1)
    s.add_argument("--inertia", type=float, default=0.9)
    s.add_argument("--epsilon", type=float, default=1e-5)
    s.add_argument("--max-iters", type=int, default=10_000)
    s.add_argument("--max-evals", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--sigma-b", type=float)
    s.add_argument("--sigma-w", type=float)
    s.add_argument("--noise-scaling", choices=("absolute", "relative"))
    s.add_argument("--no-prediction", action="store_true")
    s.add_argument("--no-coalescence", action="store_true")
    s.add_argument("--no-cost-innovation", action="store_true")
    s.add_argument("--no-selection", action="store_true")
    s.add_argument("--bounds-policy", choices=("clip", "reflect"), default="clip")
    r = p.add_argument_group("runs and output")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--seeds", help="seed list, e.g. 0-9 or 1,4,7 (overrides --seed)")
    r.add_argument("--out", help="record file; with --suite one file per instance")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--stride", type=int, default=10)
    r.add_argument("--timing", action="store_true", help="fill wall_ms (output no longer reproducible)")
    d = p.add_argument_group("inverse demo")
    d.add_argument("--demo", choices=("inverse",))
    d.add_argument("--grid-n", type=int, default=20)
    d.add_argument("--detectors", default="20,10,5")
    d.add_argument("--noise", type=float, default=0.01)
    d.add_argument("--kappa", type=float, default=0.01)
    d.add_argument("--budget", type=int, default=20_000)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_args(argv):
    parser = build_parser()
    first = _Parser(add_help=False)
    first.add_argument("--config")
    pre, _ = first.parse_known_args(argv)
    if pre.config:
        values = read_config_file(pre.config)
        known = {a.dest: a for a in parser._actions}
        defaults = {}
        for key, value in values.items():
            if key not in known or key == "config":
                raise ConfigError(f"unknown config key {key!r}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                conv = action.type or str
                try:
                    defaults[key] = conv(value)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {value!r}") from exc
                if action.choices and defaults[key] not in action.choices:
                    raise ConfigError(f"{key} must be one of {list(action.choices)}")
        parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def search_config(args):
    kw = dict(
        n_e=args.ensemble, n_p=args.substructures, p_i=args.inertia, eps=args.epsilon,
        max_iter=args.max_iters, use_prediction=not args.no_prediction,
        use_coalescence=not args.no_coalescence,
        use_cost_innovation=not args.no_cost_innovation,
        use_selection=not args.no_selection, bounds_policy=args.bounds_policy,
    )
    for flag, key in (("alpha", "alpha"), ("sigma_b", "sigma_b"), ("sigma_w", "sigma_w"),
                      ("noise_scaling", "noise_scaling")):
        v = getattr(args, flag)
        if v is not None:
            kw[key] = v
    cfg = SearchConfig(**kw)
    cfg.validate()
    return cfg


def _instances(args):
    if args.from_manifest:
        return read_manifest(args.from_manifest)
    if args.dim < 1:
        raise ConfigError("--dim must be positive")
    if args.suite:
        try:
            return make_suite(args.suite, args.dim, seed=args.instance_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.function == "rosenbrock" and args.dim < 2:
        raise ConfigError("rosenbrock needs --dim >= 2")
    return [shifted(args.function, args.dim, seed=args.instance_seed, name=args.function,
                    rotate=args.rotate)]


def _out_path(out, name, many):
    if not out or not many:
        return out
    stem, ext = os.path.splitext(out)
    return f"{stem}_{name}{ext}"


def _fmt_err(v):
    return "-" if v is None else format(v, ".6g")


def run_benchmarks(args):
    cfg = search_config(args)
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    suite = _instances(args)
    if args.manifest:
        write_manifest(suite, args.manifest)
    failed = False
    for bench in suite:
        exp = ExperimentConfig(
            objective=bench.objective(), search=cfg, seeds=seeds, stride=args.stride,
            fmt=args.format, max_evals=args.max_evals, timing=args.timing,
        )
        records = run_experiment(exp)
        path = _out_path(args.out, bench.name, len(suite) > 1)
        if path:
            write_records(records, path, args.format)
        for rec in records:
            print(f"{bench.name} seed={rec.seed} status={rec.status} iterations={rec.iterations} "
                  f"evals={rec.evals} error={_fmt_err(rec.final_error)}"
                  + (f" message={rec.message}" if rec.message else ""))
            failed |= rec.status == "error"
    return EXIT_ENGINE if failed else EXIT_OK


def run_inverse(args):
    from .inverse import default_study_config, run_recovery_study

    counts = [int(c) for c in str(args.detectors).split(",") if c.strip()]
    if not counts or any(c < 1 or c > args.grid_n for c in counts):
        raise ConfigError("--detectors must be counts in [1, grid-n]")
    if args.noise < 0:
        raise ConfigError("--noise must be nonnegative")
    seeds = parse_seeds(args.seeds) if args.seeds else list(range(10))
    cfg = default_study_config().replace(n_e=args.ensemble)
    result = run_recovery_study(n=args.grid_n, detector_counts=counts, seeds=seeds,
                                noise_rel=args.noise, budget=args.budget, cfg=cfg,
                                kappa=args.kappa, out=args.out)
    for c in counts:
        print(f"detectors={c} median_rmse optimizer={result.median_rmse('optimizer', c):.6g} "
              f"baseline={result.median_rmse('baseline', c):.6g}")
    return EXIT_ENGINE if any(r.status == "error" for r in result.rows) else EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        np.seterr(over="ignore", under="ignore")
        if args.demo == "inverse":
            return run_inverse(args)
        return run_benchmarks(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError, ArithmeticError) as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
