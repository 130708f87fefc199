"""Shifted, rotated and grouped benchmark functions.

Base functions all have minimum 0; rosenbrock is evaluated on ``z + 1`` so
that every composite attains its minimum at the shift vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import ObjectiveSpec

BASE_FUNCTIONS = (
    "sphere", "elliptic", "rastrigin", "ackley", "schwefel_1_2", "rosenbrock",
    "linear_slope", "discus", "bent_cigar",
)

# search half-widths per base function (CEC'2010 / BBOB domains)
DOMAINS = {
    "sphere": 100.0,
    "elliptic": 100.0,
    "rastrigin": 5.0,
    "ackley": 32.0,
    "schwefel_1_2": 100.0,
    "rosenbrock": 100.0,
    "linear_slope": 5.0,
    "discus": 5.0,
    "bent_cigar": 5.0,
}


def sphere(z):
    return float(np.dot(z, z))


def elliptic(z):
    n = z.size
    if n == 1:
        return float(z[0] * z[0])
    w = 10.0 ** (6.0 * np.arange(n) / (n - 1))
    return float(np.dot(w, z * z))


def rastrigin(z):
    return float(np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z) + 10.0))


def ackley(z):
    n = z.size
    a = -0.2 * np.sqrt(np.dot(z, z) / n)
    b = np.sum(np.cos(2.0 * np.pi * z)) / n
    # grouped so that z = 0 gives exactly 0
    return float(20.0 * (1.0 - np.exp(a)) + (np.e - np.exp(b)))


def schwefel_1_2(z):
    c = np.cumsum(z)
    return float(np.dot(c, c))


def rosenbrock(z):
    """Chain rosenbrock with its minimum at the all-ones vector."""
    if z.size < 2:
        raise ValueError("rosenbrock needs at least two components")
    a, b = z[:-1], z[1:]
    return float(np.sum(100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2))


def discus(z):
    return float(1e6 * z[0] * z[0] + np.dot(z[1:], z[1:]))


def bent_cigar(z):
    return float(z[0] * z[0] + 1e6 * np.dot(z[1:], z[1:]))


_BASE = {
    "sphere": sphere,
    "elliptic": elliptic,
    "rastrigin": rastrigin,
    "ackley": ackley,
    "schwefel_1_2": schwefel_1_2,
    "rosenbrock": rosenbrock,
    "discus": discus,
    "bent_cigar": bent_cigar,
}


def eval_base(fn, z):
    """Evaluate a base function by name on ``z``.

    ``linear_slope`` is not a pure function of ``z`` (it needs the optimum
    location) and is only available through :class:`CompositeBenchmark`.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("empty input")
    try:
        return _BASE[fn](z)
    except KeyError:
        raise ValueError(f"unknown base function {fn!r}") from None


def random_rotation(n, rng):
    """Orthogonal matrix from the QR factorisation of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class CompositeBenchmark:
    """A base function composed with a shift, a permutation and grouped rotations.

    ``structure`` is one of

    * ``separable``: ``f(z)`` (rotated as a whole if ``rotations`` has one
      matrix of full size),
    * ``single_group``: ``1e6 * f(R z[g]) + rest(z[not g])``,
    * ``half_groups``: ``sum_k f(R_k z[g_k]) + rest(z[remaining])`` over
      ``n_x // (2 n)`` groups,
    * ``full_groups``: ``sum_k f(R_k z[g_k])`` over ``n_x // n`` groups
      (any leftover components go through ``rest``).

    ``rest`` is the base function itself for elliptic/rastrigin/ackley and
    the sphere for schwefel_1_2/rosenbrock.
    """

    name: str
    base: str
    n_x: int
    shift: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    structure: str = "separable"
    group_size: int = 0
    permutation: Optional[np.ndarray] = None
    rotations: list = field(default_factory=list)
    seed: Optional[int] = None
    family: str = "custom"

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.permutation is not None:
            self.permutation = np.asarray(self.permutation, dtype=int)
        self.rotations = [np.asarray(r, dtype=float) for r in self.rotations]
        if self.shift.shape != (self.n_x,):
            raise ValueError("shift length must equal n_x")

    @property
    def rest_base(self):
        return "sphere" if self.base in ("schwefel_1_2", "rosenbrock") else self.base

    def _groups(self):
        perm = self.permutation if self.permutation is not None else np.arange(self.n_x)
        n = self.group_size
        if self.structure == "single_group":
            k = 1
        elif self.structure == "half_groups":
            k = self.n_x // (2 * n)
        elif self.structure == "full_groups":
            k = self.n_x // n
        else:
            return [], perm
        return [perm[i * n:(i + 1) * n] for i in range(k)], perm[k * n:]

    def _f(self, base, z):
        if base == "rosenbrock":
            return rosenbrock(z + 1.0)
        return _BASE[base](z)

    def __call__(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_x:
            raise ValueError(f"{self.name}: expected length {self.n_x}, got {x.size}")
        if self.base == "linear_slope":
            return self._linear_slope(x)
        z = x - self.shift
        if self.structure == "separable":
            if self.rotations:
                z = self.rotations[0] @ z
            return self._f(self.base, z)
        groups, rest = self._groups()
        total = 0.0
        for k, g in enumerate(groups):
            zg = z[g]
            if k < len(self.rotations):
                zg = self.rotations[k] @ zg
            total += self._f(self.base, zg)
        if self.structure == "single_group":
            total *= 1e6
        if rest.size:
            total += self._f(self.rest_base, z[rest])
        return float(total)

    def _linear_slope(self, x):
        s = np.sign(self.shift) * 10.0 ** (np.arange(self.n_x) / max(self.n_x - 1, 1))
        z = np.where(x * self.shift < self.shift * self.shift, x, self.shift)
        return float(np.sum(np.abs(s) * np.abs(self.shift) - s * z))

    @property
    def argmin(self):
        return self.shift.copy()

    def objective(self):
        return ObjectiveSpec(self, self.lb, self.ub, n_f=1, f_opt=np.zeros(1), name=self.name)

    def to_dict(self):
        return {
            "name": self.name,
            "family": self.family,
            "base": self.base,
            "n_x": self.n_x,
            "seed": self.seed,
            "structure": self.structure,
            "group_size": self.group_size,
            "lb": self.lb.tolist(),
            "ub": self.ub.tolist(),
            "shift": self.shift.tolist(),
            "permutation": None if self.permutation is None else self.permutation.tolist(),
            "rotations": [r.tolist() for r in self.rotations],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"], base=d["base"], n_x=int(d["n_x"]), shift=d["shift"],
            lb=d["lb"], ub=d["ub"], structure=d["structure"],
            group_size=int(d["group_size"]), permutation=d["permutation"],
            rotations=d["rotations"], seed=d["seed"], family=d["family"],
        )


def eval_composite(bench, x):
    return bench(x)


def shifted(base, n_x, seed=0, name=None, rotate=False):
    """Separable shifted benchmark (optionally fully rotated) on its standard domain."""
    rng = np.random.default_rng(seed)
    h = DOMAINS[base]
    if base == "linear_slope":
        shift = np.where(rng.random(n_x) < 0.5, -h, h)
    else:
        shift = rng.uniform(-0.8 * h, 0.8 * h, n_x)
    rotations = [random_rotation(n_x, rng)] if rotate else []
    return CompositeBenchmark(
        name=name or f"shifted_{base}", base=base, n_x=n_x, shift=shift,
        lb=np.full(n_x, -h), ub=np.full(n_x, h), rotations=rotations, seed=seed,
    )


def _grouped(base, n_x, structure, group_size, rng, rotate, name, seed, family):
    h = DOMAINS[base]
    shift = rng.uniform(-0.8 * h, 0.8 * h, n_x)
    perm = rng.permutation(n_x)
    if structure == "single_group":
        k = 1
    elif structure == "half_groups":
        k = n_x // (2 * group_size)
    else:
        k = n_x // group_size
    rotations = [random_rotation(group_size, rng) for _ in range(k)] if rotate else []
    return CompositeBenchmark(
        name=name, base=base, n_x=n_x, shift=shift, lb=np.full(n_x, -h),
        ub=np.full(n_x, h), structure=structure, group_size=group_size,
        permutation=perm, rotations=rotations, seed=seed, family=family,
    )


CEC_LIKE = (
    # name, base, structure, rotated
    ("F1", "elliptic", "separable", False),
    ("F2", "rastrigin", "separable", False),
    ("F3", "ackley", "separable", False),
    ("F4", "elliptic", "single_group", True),
    ("F7", "schwefel_1_2", "single_group", False),
    ("F9", "elliptic", "half_groups", True),
    ("F12", "schwefel_1_2", "half_groups", False),
    ("F14", "elliptic", "full_groups", True),
    ("F19", "schwefel_1_2", "separable", False),
    ("F20", "rosenbrock", "separable", False),
)

BBOB_LIKE = (
    ("IF1", "sphere", False),
    ("IF2", "elliptic", False),
    ("IF5", "linear_slope", False),
    ("IF11", "discus", True),
    ("IF12", "bent_cigar", True),
    ("IF15", "rastrigin", True),
)


def make_suite(family, n_x, seed=0, group_size=None):
    """Deterministic suite of benchmark instances.

    ``cec_like`` gives one instance per structural class (10 instances),
    ``bbob_like`` the six analogues of IF1/IF2/IF5/IF11/IF12/IF15.
    """
    n_x = int(n_x)
    if family == "cec_like":
        if group_size is None:
            group_size = max(1, n_x // 4)
        if n_x < 2 * group_size or n_x < 2:
            raise ValueError(f"n_x={n_x} too small for group size {group_size}")
        rng = np.random.default_rng(seed)
        suite = []
        for name, base, structure, rotate in CEC_LIKE:
            if structure == "separable":
                h = DOMAINS[base]
                shift = rng.uniform(-0.8 * h, 0.8 * h, n_x)
                suite.append(CompositeBenchmark(
                    name=name, base=base, n_x=n_x, shift=shift, lb=np.full(n_x, -h),
                    ub=np.full(n_x, h), seed=seed, family=family))
            else:
                suite.append(_grouped(base, n_x, structure, group_size, rng, rotate,
                                      name, seed, family))
        return suite
    if family == "bbob_like":
        if n_x < 2:
            raise ValueError("n_x must be at least 2")
        rng = np.random.default_rng(seed)
        suite = []
        for name, base, rotate in BBOB_LIKE:
            h = DOMAINS[base]
            if base == "linear_slope":
                shift = np.where(rng.random(n_x) < 0.5, -h, h)
            else:
                shift = rng.uniform(-0.8 * h, 0.8 * h, n_x)
            rotations = [random_rotation(n_x, rng)] if rotate else []
            suite.append(CompositeBenchmark(
                name=name, base=base, n_x=n_x, shift=shift, lb=np.full(n_x, -h),
                ub=np.full(n_x, h), rotations=rotations, seed=seed, family=family))
        return suite
    raise ValueError(f"unknown suite family {family!r}")


def write_manifest(suite, path):
    with open(path, "w") as fh:
        json.dump([b.to_dict() for b in suite], fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return [CompositeBenchmark.from_dict(d) for d in json.load(fh)]
