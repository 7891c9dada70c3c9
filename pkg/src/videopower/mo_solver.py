"""Polyblock outer approximation for weighted-sum-PSNR power control.

The objective is increasing in the rate vector, so the problem is a monotonic
program over the intersection of the achievable-rate region (a normal set)
and the set of rates meeting the quality floors (a conormal set). A polyblock
enclosing that intersection is shrunk one vertex at a time:

1. take the vertex with the largest objective value (an upper bound),
2. scale it back toward the origin onto the region boundary,
3. record the boundary point if it beats the incumbent,
4. replace the vertex by its K children at the boundary point,

until the best vertex is within ``epsilon`` of the incumbent.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .feasibility import PowerOracle, min_power_for_rates, ray_bracket
from .model import (
    RATE_FLOOR,
    ChannelRealization,
    QualityProfile,
    SystemParams,
    min_rate_targets,
    quality,
    rates,
)

DEFAULT_EPSILON = 1e-3
DEFAULT_VERTEX_CAP = 10**6
DOMINANCE_TOL = 1e-9


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    VERTEX_CAP_EXCEEDED = "VertexCapExceeded"


@njit(cache=True)
def _any_covers(vertices, alive, n, c, tol):
    K = c.shape[0]
    for i in range(n):
        if not alive[i]:
            continue
        for k in range(K):
            if vertices[i, k] < c[k] - tol:
                break
        else:
            return True
    return False


class PolyblockState:
    """Vertex set of the enclosing polyblock plus incumbent and trace.

    Vertices live in append-only arrays so that a row index doubles as the
    insertion order; removed rows are only flagged dead. A heap keyed on
    ``(-value, index)`` yields the best vertex, lowest index first on ties.
    ``scale_lo[i]`` is a scale known to keep vertex i inside the rate region.
    """

    def __init__(self, K: int, capacity: int = 1024):
        self.K = K
        self.vertices = np.empty((capacity, K))
        self.values = np.empty(capacity)
        self.scale_lo = np.empty(capacity)
        self.alive = np.zeros(capacity, dtype=bool)
        self.used = 0
        self.count = 0
        self.heap: list[tuple[float, int]] = []
        self.incumbent_Q = 0.0
        self.incumbent_R: np.ndarray | None = None
        self.incumbent_P: np.ndarray | None = None
        self.iteration = 0
        self.trace: list[tuple[int, float, float, int]] = []

    def add(self, vertex, value: float, scale_lo: float) -> None:
        if self.used == len(self.values):
            grow = len(self.values)
            self.vertices = np.concatenate([self.vertices, np.empty((grow, self.K))])
            self.values = np.concatenate([self.values, np.empty(grow)])
            self.scale_lo = np.concatenate([self.scale_lo, np.empty(grow)])
            self.alive = np.concatenate([self.alive, np.zeros(grow, dtype=bool)])
        i = self.used
        self.vertices[i] = vertex
        self.values[i] = value
        self.scale_lo[i] = scale_lo
        self.alive[i] = True
        self.used += 1
        self.count += 1
        heapq.heappush(self.heap, (-value, i))

    def remove(self, i: int) -> None:
        if self.alive[i]:
            self.alive[i] = False
            self.count -= 1

    def best(self) -> int | None:
        """Index of the live vertex with the largest value, or None."""
        heap = self.heap
        while heap and not self.alive[heap[0][1]]:
            heapq.heappop(heap)
        return heap[0][1] if heap else None

    def dominated(self, vertex, tol: float = DOMINANCE_TOL) -> bool:
        return _any_covers(self.vertices, self.alive, self.used, np.asarray(vertex, dtype=float), tol)

    def prune_below(self, q: float) -> None:
        n = self.used
        drop = self.alive[:n] & (self.values[:n] <= q)
        self.alive[:n] &= ~drop
        self.count -= int(drop.sum())

    @property
    def upper_bound(self) -> float:
        # vertices at or below the incumbent are discarded as they appear
        i = self.best()
        if i is None:
            return self.incumbent_Q
        return max(self.incumbent_Q, float(self.values[i]))

    def live_vertices(self) -> np.ndarray:
        return self.vertices[: self.used][self.alive[: self.used]]


@dataclass
class MoSolution:
    R_opt: np.ndarray | None
    P_opt: np.ndarray | None
    Q_opt: float
    iterations: int
    status: Status
    upper_bound: float
    trace: list[tuple[int, float, float, int]]

    @property
    def gap(self) -> float:
        return self.upper_bound - self.Q_opt

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "lower", "upper", "vertex_count"])
    for it, lower, upper, n in trace:
        w.writerow([it, repr(float(lower)), repr(float(upper)), n])
    return buf.getvalue()


def initial_box(params: SystemParams, channel) -> np.ndarray:
    """Interference-free full-power rate of every user.

    Each coordinate bounds the corresponding rate over the whole power
    budget, so the box [0, V] contains the achievable region.
    """
    G = channel.gains if isinstance(channel, ChannelRealization) else np.asarray(channel, float)
    snr = params.Pmax * np.diag(G) / (params.c2 * params.noise)
    return params.c1 * params.B * np.log2(1.0 + snr)


def _objective(profile: QualityProfile, R: np.ndarray) -> np.ndarray:
    # objective on rates already known to be >= RATE_FLOOR
    return np.log(R / 1e3) @ (profile.omega * profile.alpha) + profile.omega @ profile.beta


def recover_power(params: SystemParams, channel, R_opt) -> np.ndarray:
    """Least power vector for ``R_opt``; checks that it reproduces the rates."""
    P = min_power_for_rates(params, channel, R_opt)
    R_back = rates(params, channel, P)
    R_opt = np.asarray(R_opt, dtype=float)
    if not np.allclose(R_back, R_opt, rtol=1e-8, atol=1e-6):
        raise AssertionError(f"power recovery round trip failed: {R_back} vs {R_opt}")
    return P


def solve(
    params: SystemParams,
    profile: QualityProfile,
    channel,
    epsilon: float = DEFAULT_EPSILON,
    vertex_cap: int = DEFAULT_VERTEX_CAP,
) -> MoSolution:
    """Maximize weighted-sum PSNR over power vectors within the budget.

    Ties between equally good vertices go to the lowest index. Children with a
    coordinate below the minimum rate (or the rate floor) are dropped, as are
    children dominated by a surviving vertex and vertices that cannot improve
    on the incumbent.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if profile.K != params.K:
        raise ValueError(f"profile has {profile.K} users, params has K={params.K}")
    K = params.K
    oracle = PowerOracle(params, channel)
    r_min = np.maximum(min_rate_targets(profile), RATE_FLOOR)
    box = initial_box(params, channel)

    if np.any(box < r_min):
        return MoSolution(None, None, -math.inf, 0, Status.INFEASIBLE, -math.inf, [])

    weights = (profile.omega * profile.alpha).tolist()
    state = PolyblockState(K)
    state.add(box, float(_objective(profile, box)), 0.0)
    state.trace.append((0, state.incumbent_Q, state.upper_bound, 1))
    have_incumbent = False

    while True:
        best = state.best()
        if best is None or state.values[best] - state.incumbent_Q < epsilon:
            break
        v = state.vertices[best].copy()
        v_value = float(state.values[best])
        state.remove(best)
        state.iteration += 1

        br = ray_bracket(oracle, v, params.Pmax, lo=float(state.scale_lo[best]))
        z = br.lo * np.maximum(v, RATE_FLOOR)
        if np.all(z >= r_min):
            qz = float(_objective(profile, z))
            if qz > state.incumbent_Q:
                state.incumbent_Q = qz
                state.incumbent_R = z
                state.incumbent_P = br.power
                have_incumbent = True
                state.prune_below(qz)

        # child k swaps coordinate k of v for that of z
        for k in range(K):
            if not (z[k] < v[k]) or z[k] < r_min[k]:
                continue
            value = v_value + weights[k] * math.log(z[k] / v[k])
            if value <= state.incumbent_Q:
                continue
            child = v.copy()
            child[k] = z[k]
            if state.dominated(child):
                continue
            state.add(child, value, br.lo)

        state.trace.append((state.iteration, state.incumbent_Q, state.upper_bound, state.count))
        if state.count > vertex_cap:
            return _finish(params, channel, state, Status.VERTEX_CAP_EXCEEDED, have_incumbent)

    if not have_incumbent:
        return _finish(params, channel, state, Status.INFEASIBLE, False)
    return _finish(params, channel, state, Status.OPTIMAL, True)


def _finish(params, channel, state: PolyblockState, status: Status, have_incumbent: bool) -> MoSolution:
    P = recover_power(params, channel, state.incumbent_R) if have_incumbent else None
    return MoSolution(
        R_opt=state.incumbent_R,
        P_opt=P,
        Q_opt=state.incumbent_Q if have_incumbent else -math.inf,
        iterations=state.iteration,
        status=status,
        upper_bound=state.upper_bound,
        trace=state.trace,
    )


def per_user_quality(profile: QualityProfile, sol: MoSolution) -> np.ndarray:
    return quality(profile, sol.R_opt)
