"""Seeded random streams, including a record/replay tape for equivalence tests."""

from __future__ import annotations

import numpy as np


class RngStream:
    """Deterministic source of uniform, normal and index variates.

    Every draw goes through :meth:`_draw` so subclasses can record or
    replay the exact sequence of arrays handed to the engines.
    """

    def __init__(self, seed=None):
        self.seed = seed
        self._gen = np.random.default_rng(seed)

    def _draw(self, kind, shape):
        if kind == "uniform":
            return self._gen.random(shape)
        if kind == "normal":
            return self._gen.standard_normal(shape)
        if kind == "index":
            # shape[0] is the ensemble size; values in [0, n_e - 2]
            return self._gen.integers(0, shape[0] - 1, size=shape)
        raise ValueError(f"unknown draw kind {kind!r}")

    def uniform(self, shape):
        return self._draw("uniform", _as_shape(shape))

    def normal(self, shape):
        return self._draw("normal", _as_shape(shape))

    def other_index(self, shape):
        """Indices ``idx[j, ...] != j`` drawn uniformly from the other rows.

        ``shape[0]`` is the number of particles ``n``; every entry in row
        ``j`` is uniform on ``{0, ..., n-1} \\ {j}``.
        """
        shape = _as_shape(shape)
        n = shape[0]
        if n < 2:
            raise ValueError("need at least two particles to draw a partner index")
        r = self._draw("index", shape)
        rows = np.arange(n).reshape((n,) + (1,) * (len(shape) - 1))
        return r + (r >= rows)


class RecordingStream(RngStream):
    """RngStream that keeps a copy of every raw draw in ``tape``."""

    def __init__(self, seed=None):
        super().__init__(seed)
        self.tape = []

    def _draw(self, kind, shape):
        out = super()._draw(kind, shape)
        self.tape.append((kind, np.array(out, copy=True)))
        return out


class ReplayStream(RngStream):
    """Feeds back a recorded tape; raises if the consumer asks for a different draw."""

    def __init__(self, tape):
        super().__init__(None)
        self._tape = list(tape)
        self._pos = 0

    def _draw(self, kind, shape):
        if self._pos >= len(self._tape):
            raise RuntimeError("draw tape exhausted")
        rec_kind, arr = self._tape[self._pos]
        if rec_kind != kind or arr.shape != tuple(shape):
            raise RuntimeError(
                f"draw {self._pos}: expected {rec_kind}{arr.shape}, got {kind}{tuple(shape)}"
            )
        self._pos += 1
        return arr.copy()

    @property
    def exhausted(self):
        return self._pos == len(self._tape)


def _as_shape(shape):
    if np.isscalar(shape):
        return (int(shape),)
    return tuple(int(s) for s in shape)
