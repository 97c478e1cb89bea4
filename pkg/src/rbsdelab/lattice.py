"""Recombining binomial model of a one-dimensional Brownian filtration.

Node-indexed processes are stored as ``(N + 1, N + 1)`` float arrays where
entry ``[i, j]`` holds the value at step ``i`` after ``j`` up-moves.  Slots
with ``j > i`` are NaN.  The non-recombining path tree only appears in the
brute-force helpers at the bottom of this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np

from .errors import CapacityError, InvalidConfiguration, OutOfRange

MAX_RULE_DEPTH = 5
MAX_PATH_DEPTH = 12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (isinstance(self.steps, (int, np.integer)) and self.steps >= 1):
            raise InvalidConfiguration(f"steps must be a positive integer, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidConfiguration(f"horizon must be positive, got {self.horizon!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        t.flags.writeable = False
        return t

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        k = round(t / self.dt)
        if k < 0 or k > self.steps or abs(k * self.dt - t) > tol * max(1.0, self.horizon):
            raise InvalidConfiguration(f"time {t!r} is off grid (dt={self.dt!r})")
        return int(k)


class NodeIndex(NamedTuple):
    step: int
    up_count: int


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Symmetric random walk approximation of Brownian motion on ``grid``."""

    grid: TimeGrid
    branch_probability: float = field(default=0.5, init=False)

    @property
    def N(self) -> int:
        return self.grid.steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @cached_property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.grid.dt)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def node_count(self) -> int:
        return (self.N + 1) * (self.N + 2) // 2

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean ``(N+1, N+1)`` array, True on valid nodes."""
        m = np.tri(self.N + 1, dtype=bool)
        m.flags.writeable = False
        return m

    @cached_property
    def brownian(self) -> np.ndarray:
        i = np.arange(self.N + 1)[:, None]
        j = np.arange(self.N + 1)[None, :]
        b = np.where(self.mask, (2 * j - i) * self.sqrt_dt, np.nan)
        b.flags.writeable = False
        return b

    @cached_property
    def time_grid(self) -> np.ndarray:
        """Node array holding ``t_i`` at every node of step ``i``."""
        t = np.where(self.mask, self.times[:, None], np.nan)
        t.flags.writeable = False
        return t

    @cached_property
    def probabilities(self) -> np.ndarray:
        """Probability of reaching each node from the root."""
        prob = np.full((self.N + 1, self.N + 1), np.nan)
        prob[0, 0] = 1.0
        for i in range(self.N):
            row = np.zeros(i + 2)
            row[:-1] += 0.5 * prob[i, : i + 1]
            row[1:] += 0.5 * prob[i, : i + 1]
            prob[i + 1, : i + 2] = row
        prob.flags.writeable = False
        return prob

    def brownian_value(self, node) -> float:
        i, j = self.check_node(node)
        return (2 * j - i) * self.sqrt_dt

    def check_node(self, node) -> NodeIndex:
        i, j = node
        if not (0 <= j <= i <= self.N):
            raise OutOfRange(f"node {tuple(node)} outside lattice with N={self.N}")
        return NodeIndex(int(i), int(j))

    def empty(self, fill: float = np.nan) -> np.ndarray:
        return np.full((self.N + 1, self.N + 1), fill)

    def zeros(self) -> np.ndarray:
        """Node array of zeros on valid nodes, NaN elsewhere."""
        return np.where(self.mask, 0.0, np.nan)

    def layer(self, values: np.ndarray, i: int) -> np.ndarray:
        return values[i, : i + 1]

    def valid(self, values: np.ndarray) -> np.ndarray:
        """Flat view of the valid entries of a node array."""
        return values[self.mask]

    def expected_sum(self, values: np.ndarray) -> float:
        """``sum_i E[X_i]`` for a node array (NaN slots ignored)."""
        return float(np.nansum(self.probabilities * values))

    def layer_expectation(self, values: np.ndarray, i: int) -> np.ndarray:
        """One-step conditional expectation of step ``i + 1`` values, at all step-``i`` nodes."""
        return 0.5 * (values[i + 1, 1 : i + 2] + values[i + 1, : i + 1])

    def layer_coefficient(self, values: np.ndarray, i: int) -> np.ndarray:
        return (values[i + 1, 1 : i + 2] - values[i + 1, : i + 1]) / (2.0 * self.sqrt_dt)


def build_lattice(T: float, N: int) -> LatticeModel:
    """Return the binomial lattice with ``N`` steps on ``[0, T]``."""
    return LatticeModel(TimeGrid(float(T), N))


def _children(model: LatticeModel, node, next_values) -> tuple[float, float]:
    i, _ = model.check_node(node)
    if i >= model.N:
        raise OutOfRange(f"node {tuple(node)} is terminal; no successors")
    v_up, v_down = next_values
    return float(v_up), float(v_down)


def conditional_expectation(model: LatticeModel, node, next_values) -> float:
    """``E[v | node]`` given ``next_values = (v_up, v_down)`` at the two children."""
    v_up, v_down = _children(model, node, next_values)
    return 0.5 * (v_up + v_down)


def martingale_coefficient(model: LatticeModel, node, next_values) -> float:
    """The unique ``z`` with ``v_child = E[v | node] + z * dB_child``."""
    v_up, v_down = _children(model, node, next_values)
    return (v_up - v_down) / (2.0 * model.sqrt_dt)


# -- path tree ---------------------------------------------------------------


def stopping_rule_count(N: int) -> int:
    """Number of stopping rules on a depth-``N`` binary tree: ``f(k) = 1 + f(k-1)**2``."""
    count = 1
    for _ in range(N):
        count = 1 + count * count
    return count


@dataclass(frozen=True)
class StoppingRule:
    """A stopping time on the depth-``N`` path tree.

    ``stop_set`` is the cut of histories (tuples of moves, 1 = up) at which the
    rule stops.  Every path meets exactly one of them, and depth-``N``
    histories always stop.
    """

    depth: int
    stop_set: frozenset

    def flag(self, history) -> bool | None:
        """True = stop, False = continue, None = never reached."""
        history = tuple(history)
        for k in range(len(history)):
            if history[:k] in self.stop_set:
                return None
        if history in self.stop_set:
            return True
        return False if len(history) < self.depth else True

    def stopping_step(self, path) -> int:
        path = tuple(path)
        for k in range(self.depth + 1):
            if path[:k] in self.stop_set:
                return k
        raise AssertionError("stop_set is not a cut")  # pragma: no cover


def _rules(depth: int, prefix: tuple) -> Iterator[frozenset]:
    yield frozenset((prefix,))
    if depth == 0:
        return
    for up in _rules(depth - 1, prefix + (1,)):
        for down in _rules(depth - 1, prefix + (0,)):
            yield up | down


def enumerate_stopping_rules(N: int) -> Iterator[StoppingRule]:
    """Lazily yield every adapted stopping rule on the depth-``N`` path tree."""
    if N < 0:
        raise InvalidConfiguration("depth must be nonnegative")
    if N > MAX_RULE_DEPTH:
        raise CapacityError(
            f"depth {N} has {stopping_rule_count(N)} stopping rules; limit is depth {MAX_RULE_DEPTH}"
        )
    for cut in _rules(N, ()):
        yield StoppingRule(N, cut)


def all_paths(N: int) -> np.ndarray:
    """All ``2**N`` move sequences as an int array (1 = up), lexicographic order."""
    if N > MAX_PATH_DEPTH:
        raise CapacityError(f"2**{N} paths exceeds the depth-{MAX_PATH_DEPTH} limit")
    idx = np.arange(2**N)[:, None]
    shifts = np.arange(N - 1, -1, -1)[None, :]
    return ((idx >> shifts) & 1).astype(np.int64)


def path_up_counts(paths: np.ndarray) -> np.ndarray:
    """Up-count ``j`` at steps ``0..N`` along each path."""
    zeros = np.zeros((paths.shape[0], 1), dtype=np.int64)
    return np.concatenate([zeros, np.cumsum(paths, axis=1)], axis=1)


def along_paths(values: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Sample a node array along paths; result has shape ``(n_paths, N + 1)``."""
    j = path_up_counts(paths)
    i = np.broadcast_to(np.arange(j.shape[1]), j.shape)
    return values[i, j]


def path_max_sum(model: LatticeModel, terms: np.ndarray) -> float:
    """``max over paths of sum_i terms[i, j_i]`` by backward max-plus recursion."""
    N = model.N
    acc = np.nan_to_num(terms[N, : N + 1].astype(float))
    for i in range(N - 1, -1, -1):
        acc = np.nan_to_num(terms[i, : i + 1]) + np.maximum(acc[1:], acc[:-1])
    return float(acc[0])
