"""Exact linear combinatorial optimization layers.

Two feasible sets are supported: monotone paths on an ``N x N`` grid (minimize)
and 0/1 multi-dimensional knapsack selections (maximize). Every layer also
offers ``solve_min`` so callers can work in a single minimize convention:
for a knapsack, ``solve_min(c)`` maximizes ``-c``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InputError, NumericError

MAX_GRID_ENUM = 6
MAX_ITEMS_ENUM = 20
# largest d-dimensional DP table before falling back to branch-and-bound
MAX_DP_CELLS = 4_000_000


@dataclass(frozen=True)
class Solution:
    y: np.ndarray
    objective: float

    def key(self):
        return tuple(int(v) for v in self.y)


def _check_costs(theta, n):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (n,):
        raise InputError(f"expected a cost vector of length {n}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise NumericError("non-finite cost vector")
    return theta


class GridGraph:
    """Directed grid whose arcs only move right or down.

    Nodes are numbered row-major, so node order is a topological order.
    Arcs are numbered by scanning nodes in order and emitting the right arc
    before the down arc.
    """

    sense = "minimize"
    kind = "grid"

    def __init__(self, N):
        if int(N) != N or N < 2:
            raise InputError("grid side N must be an integer >= 2")
        self.N = int(N)
        self.edges = []
        self._out = [[] for _ in range(self.N * self.N)]
        for r in range(self.N):
            for c in range(self.N):
                u = r * self.N + c
                if c < self.N - 1:
                    self._out[u].append((len(self.edges), u + 1))
                    self.edges.append((u, u + 1))
                if r < self.N - 1:
                    self._out[u].append((len(self.edges), u + self.N))
                    self.edges.append((u, u + self.N))
        self._edge_index = {e: i for i, e in enumerate(self.edges)}

    @property
    def n_y(self):
        return 2 * self.N * (self.N - 1)

    @property
    def source(self):
        return 0

    @property
    def target(self):
        return self.N * self.N - 1

    def path_to_y(self, nodes):
        y = np.zeros(self.n_y)
        for u, v in zip(nodes, nodes[1:]):
            y[self._edge_index[(u, v)]] = 1.0
        return y

    def is_feasible(self, y):
        y = np.asarray(y)
        if y.shape != (self.n_y,) or not np.all((y == 0) | (y == 1)):
            return False
        u, steps = self.source, 0
        while u != self.target:
            nxt = [(i, v) for i, v in self._out[u] if y[i] == 1]
            if len(nxt) != 1:
                return False
            u = nxt[0][1]
            steps += 1
        return steps == 2 * (self.N - 1) and int(y.sum()) == steps

    def shortest_path(self, theta):
        theta = _check_costs(theta, self.n_y)
        n = self.N * self.N
        to_go = np.zeros(n)
        choice = [None] * n
        for u in range(n - 2, -1, -1):
            best, arg = math.inf, None
            for i, v in self._out[u]:
                cand = theta[i] + to_go[v]
                # strict comparison keeps the lower-index arc on ties
                if cand < best:
                    best, arg = cand, (i, v)
            to_go[u], choice[u] = best, arg
        y = np.zeros(self.n_y)
        u = self.source
        while u != self.target:
            i, u = choice[u]
            y[i] = 1.0
        return Solution(y, float(theta @ y))

    solve = shortest_path

    def solve_min(self, costs):
        return self.shortest_path(costs)

    def enumerate(self):
        if self.N > MAX_GRID_ENUM:
            raise CapacityError(f"refusing to enumerate paths for N={self.N} > {MAX_GRID_ENUM}")
        N = self.N

        def walk(u, nodes):
            if u == self.target:
                yield self.path_to_y(nodes)
                return
            r, c = divmod(u, N)
            if c < N - 1:
                yield from walk(u + 1, nodes + [u + 1])
            if r < N - 1:
                yield from walk(u + N, nodes + [u + N])

        yield from walk(self.source, [self.source])

    def to_dict(self):
        return {"kind": self.kind, "N": self.N}


class KnapsackInstance:
    """0/1 knapsack with ``d`` resource dimensions; rewards are maximized."""

    sense = "maximize"
    kind = "knapsack"

    def __init__(self, weights, capacities):
        self.weights = np.array(weights, dtype=np.float64, ndmin=2)
        self.capacities = np.array(capacities, dtype=np.float64).reshape(-1)
        if self.weights.shape[0] != self.capacities.shape[0]:
            raise InputError("weights must have one row per capacity")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.capacities))):
            raise NumericError("non-finite knapsack data")
        if np.any(self.weights < 0):
            raise InputError("knapsack weights must be nonnegative")
        if np.any(self.capacities <= 0):
            raise InputError("knapsack capacities must be positive")
        self.d, self.m = self.weights.shape
        self._integral = bool(
            np.all(self.weights == np.round(self.weights))
        )

    @classmethod
    def generate(cls, m, rng, d=2, low=3, high=8, capacity_ratio=0.5):
        """Random instance: integer weights in ``{low..high}``, capacity a
        fraction of the total weight per dimension."""
        weights = rng.integers(low, high + 1, size=(d, m)).astype(np.float64)
        return cls(weights, capacity_ratio * weights.sum(axis=1))

    @property
    def n_y(self):
        return self.m

    def is_feasible(self, y):
        y = np.asarray(y)
        if y.shape != (self.m,) or not np.all((y == 0) | (y == 1)):
            return False
        return bool(np.all(self.weights @ y <= self.capacities + 1e-9))

    def knapsack_max(self, theta):
        theta = _check_costs(theta, self.m)
        if not np.any(theta > 0):
            return Solution(np.zeros(self.m), 0.0)
        caps = np.floor(self.capacities + 1e-9).astype(int)
        if self._integral and np.prod(caps + 1, dtype=float) <= MAX_DP_CELLS:
            y = self._dp(theta, caps)
        else:
            y = self._branch_and_bound(theta)
        return Solution(y, float(theta @ y))

    solve = knapsack_max

    def solve_min(self, costs):
        sol = self.knapsack_max(-np.asarray(costs, dtype=np.float64))
        return Solution(sol.y, -sol.objective)

    def _dp(self, theta, caps):
        w = self.weights.astype(int)
        value = np.zeros(tuple(caps + 1))
        taken = []
        for j in range(self.m):
            take = np.zeros(value.shape, dtype=bool)
            if theta[j] > 0 and np.all(w[:, j] <= caps):
                src = tuple(slice(0, c + 1 - wj) for c, wj in zip(caps, w[:, j]))
                dst = tuple(slice(wj, c + 1) for c, wj in zip(caps, w[:, j]))
                cand = value[src] + theta[j]
                take[dst] = cand > value[dst]
                new = value.copy()
                new[dst] = np.where(take[dst], cand, value[dst])
                value = new
            taken.append(take)
        y = np.zeros(self.m)
        c = caps.copy()
        for j in range(self.m - 1, -1, -1):
            if taken[j][tuple(c)]:
                y[j] = 1.0
                c = c - w[:, j]
        return y

    def _branch_and_bound(self, theta):
        order = [j for j in range(self.m) if theta[j] > 0]
        W = self.weights

        # suffix sums of positive rewards bound the remaining gain
        suffix = np.zeros(len(order) + 1)
        for k in range(len(order) - 1, -1, -1):
            suffix[k] = suffix[k + 1] + theta[order[k]]

        best_val = 0.0
        best_sel = []

        def dfs(k, val, load, sel):
            nonlocal best_val, best_sel
            if val > best_val:
                best_val, best_sel = val, list(sel)
            if k == len(order) or val + suffix[k] <= best_val:
                return
            j = order[k]
            new_load = load + W[:, j]
            if np.all(new_load <= self.capacities + 1e-12):
                sel.append(j)
                dfs(k + 1, val + theta[j], new_load, sel)
                sel.pop()
            dfs(k + 1, val, load, sel)

        dfs(0, 0.0, np.zeros(self.d), [])
        y = np.zeros(self.m)
        y[best_sel] = 1.0
        return y

    def enumerate(self):
        if self.m > MAX_ITEMS_ENUM:
            raise CapacityError(f"refusing to enumerate subsets for m={self.m} > {MAX_ITEMS_ENUM}")
        for bits in itertools.product((0.0, 1.0), repeat=self.m):
            y = np.array(bits)
            if np.all(self.weights @ y <= self.capacities + 1e-9):
                yield y

    def to_dict(self):
        return {
            "kind": self.kind,
            "m": self.m,
            "d": self.d,
            "weights": self.weights.tolist(),
            "capacities": self.capacities.tolist(),
        }


def shortest_path(g, theta):
    return g.shortest_path(theta)


def knapsack_max(inst, theta):
    return inst.knapsack_max(theta)


def enumerate_solutions(layer):
    """Yield every feasible 0/1 vector of ``layer`` exactly once."""
    return layer.enumerate()


def brute_force_min(layer, costs):
    """Minimum of ``costs . y`` over all feasible ``y`` by enumeration."""
    costs = np.asarray(costs, dtype=np.float64)
    best = None
    for y in layer.enumerate():
        val = float(costs @ y)
        if best is None or val < best.objective:
            best = Solution(y, val)
    return best


def layer_from_dict(data):
    kind = data.get("kind")
    if kind == "grid":
        return GridGraph(data["N"])
    if kind == "knapsack":
        inst = KnapsackInstance(data["weights"], data["capacities"])
        if inst.m != data.get("m", inst.m) or inst.d != data.get("d", inst.d):
            raise InputError("knapsack header disagrees with weight matrix")
        return inst
    raise InputError(f"unknown layer kind {kind!r}")
