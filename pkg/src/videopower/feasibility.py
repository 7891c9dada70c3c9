"""Rate-region membership: the least power vector that supports a rate target.

Inverting the rate model turns a rate target into a required SINR
``t_k = 2^(R_k / (c1 B)) - 1``, and the power needed to meet every target
solves the linear fixed point ``P = A P + b`` with

    A[k, i] = t_k c2 g[i, k] / g[k, k]   (i != k),   b[k] = t_k c2 N0 B / g[k, k].

A nonnegative solution exists iff the spectral radius of A is below one, in
which case it is also the componentwise-least power vector meeting the
targets. Solving ``(I - A) P = b`` directly and checking the sign of the
result therefore doubles as the spectral test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import RATE_FLOOR, ChannelRealization, SystemParams

PIVOT_TOL = 1e-12
NONNEG_TOL = 1e-12
BUDGET_RTOL = 1e-12
BISECTION_RTOL = 1e-8
BISECTION_MAX_ITER = 100


class InfeasibleError(Exception):
    """Rate target outside the achievable region.

    ``reason`` is ``"spectral"`` when no nonnegative power vector supports the
    target at all, and ``"budget"`` when one does but exceeds the power budget.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"infeasible ({reason}){': ' + detail if detail else ''}")


def sinr_targets(params: SystemParams, targets) -> np.ndarray:
    """Required effective SINR for each rate target in bit/s."""
    R = np.asarray(targets, dtype=float)
    return np.expm1(R * (math.log(2.0) / (params.c1 * params.B)))


@njit(cache=True)
def _least_power(cross, noise, scale, targets, out):
    """Solve ``(I - A) P = b`` into ``out`` by elimination with partial pivoting.

    Returns 0 on success and 1 when a pivot falls below ``PIVOT_TOL`` or the
    solution has a negative entry, i.e. the target lies outside the region
    reachable with any finite power.
    """
    K = targets.shape[0]
    M = np.empty((K, K))
    b = np.empty(K)
    for k in range(K):
        tk = math.expm1(targets[k] * scale)
        for i in range(K):
            M[k, i] = -tk * cross[k, i]
        M[k, k] = 1.0
        b[k] = tk * noise[k]
    for col in range(K):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, K):
            a = abs(M[r, col])
            if a > best:
                piv = r
                best = a
        if best < PIVOT_TOL:
            return 1
        if piv != col:
            for c in range(K):
                tmp = M[col, c]
                M[col, c] = M[piv, c]
                M[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / M[col, col]
        for r in range(col + 1, K):
            f = M[r, col] * inv
            if f != 0.0:
                for c in range(col + 1, K):
                    M[r, c] -= f * M[col, c]
                b[r] -= f * b[col]
    for r in range(K - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, K):
            acc -= M[r, c] * out[c]
        out[r] = acc / M[r, r]
    for k in range(K):
        if out[k] < -NONNEG_TOL:
            return 1
        if out[k] < 0.0:
            out[k] = 0.0
    return 0


@njit(cache=True)
def _feasible_total(cross, noise, scale, targets, budget, out):
    # total power, inf when spectrally infeasible; feasibility flag
    if _least_power(cross, noise, scale, targets, out) != 0:
        return math.inf, False
    total = 0.0
    for k in range(out.shape[0]):
        total += out[k]
    return total, total <= budget * (1.0 + BUDGET_RTOL)


@njit(cache=True)
def _ray_search(cross, noise, scale, d, budget, lo, rtol, max_iter, p_lo):
    K = d.shape[0]
    trial = np.empty(K)
    p = np.empty(K)
    total, ok = _feasible_total(cross, noise, scale, d, budget, p)
    evals = 1
    if ok:
        p_lo[:] = p
        return 1.0, 1.0, evals
    log_budget = math.log(budget)
    hi = 1.0
    h_hi = math.log(total) - log_budget
    h_lo = -math.inf
    p_lo[:] = 0.0
    if lo > 0.0:
        for k in range(K):
            trial[k] = lo * d[k]
        total, ok = _feasible_total(cross, noise, scale, trial, budget, p)
        evals += 1
        if ok:
            p_lo[:] = p
            if total > 0.0:
                h_lo = math.log(total) - log_budget
        else:
            lo = 0.0
    side = 0
    for _ in range(max_iter):
        width = hi - lo
        if width <= rtol * hi:
            break
        x = 0.5 * (lo + hi)
        if math.isfinite(h_lo) and math.isfinite(h_hi):
            x_rf = lo - h_lo * width / (h_hi - h_lo)
            if lo < x_rf < hi:
                x = x_rf
        # keep probes a half-tolerance inside the bracket so a converged end
        # is closed off on the next step instead of by repeated halving
        step = 0.5 * rtol * hi
        x = min(max(x, lo + step), hi - step)
        for k in range(K):
            trial[k] = x * d[k]
        total, ok = _feasible_total(cross, noise, scale, trial, budget, p)
        evals += 1
        h = math.log(total) - log_budget if total > 0.0 else -math.inf
        if ok:
            lo = x
            h_lo = h
            p_lo[:] = p
            if side == -1:
                h_hi *= 0.5
            side = -1
        else:
            hi = x
            h_hi = h
            if side == 1:
                h_lo *= 0.5
            side = 1
    return lo, hi, evals


class PowerOracle:
    """Per-channel precomputation for repeated least-power solves.

    The polyblock solver calls this thousands of times per channel, so the
    channel-dependent coefficients are folded once up front.
    """

    def __init__(self, params: SystemParams, channel):
        G = channel.gains if isinstance(channel, ChannelRealization) else np.asarray(channel, float)
        K = params.K
        if G.shape != (K, K):
            raise ValueError(f"channel shape {G.shape} does not match K={K}")
        self.params = params
        self.K = K
        direct = np.diag(G).copy()
        # cross[k, i] = c2 * g[i, k] / g[k, k], zero on the diagonal
        cross = params.c2 * G.T / direct[:, None]
        np.fill_diagonal(cross, 0.0)
        self.cross = np.ascontiguousarray(cross)
        self.noise = params.c2 * params.noise / direct
        self.rate_scale = math.log(2.0) / (params.c1 * params.B)

    def solve(self, targets) -> np.ndarray | None:
        """Least power for ``targets`` (bit/s) ignoring the budget, or None."""
        out = np.empty(self.K)
        R = np.ascontiguousarray(targets, dtype=float)
        if _least_power(self.cross, self.noise, self.rate_scale, R, out) != 0:
            return None
        return out

    def feasible_power(self, targets, budget: float) -> tuple[np.ndarray | None, str, float]:
        """Least power within ``budget``: ``(power or None, reason, total or inf)``."""
        out = np.empty(self.K)
        R = np.ascontiguousarray(targets, dtype=float)
        total, ok = _feasible_total(self.cross, self.noise, self.rate_scale, R, budget, out)
        if ok:
            return out, "", total
        return None, ("spectral" if math.isinf(total) else "budget"), total


def min_power_for_rates(params: SystemParams, channel, targets) -> np.ndarray:
    """Componentwise-least power vector achieving ``targets`` within ``Pmax``.

    Raises :class:`InfeasibleError` tagged ``spectral`` or ``budget``.
    """
    R = np.asarray(targets, dtype=float)
    if R.shape != (params.K,):
        raise ValueError(f"targets must have shape ({params.K},), got {R.shape}")
    if np.any(R < 0):
        raise ValueError("rate targets must be nonnegative")
    P, reason, total = PowerOracle(params, channel).feasible_power(R, params.Pmax)
    if P is None:
        detail = f"total power {total:.6g} W > {params.Pmax:.6g} W" if reason == "budget" else ""
        raise InfeasibleError(reason, detail)
    return P


@dataclass
class RayBracket:
    """Result of a ray search: ``lo`` is feasible, ``hi`` is not (or ``lo == hi == 1``)."""

    lo: float
    hi: float
    power: np.ndarray
    evaluations: int


def ray_bracket(
    oracle: PowerOracle,
    direction,
    budget: float,
    rtol: float = BISECTION_RTOL,
    max_iter: int = BISECTION_MAX_ITER,
    lo: float = 0.0,
) -> RayBracket:
    """Bracket the largest feasible scale of ``direction`` in [0, 1].

    Total power along the ray is increasing and finite up to the spectral
    boundary, and grows roughly exponentially in the scale, so the budget
    boundary is sought as the root of ``log(sum P(s) / budget)``. Each step is
    an Illinois false-position step when both ends carry finite values and a
    plain bisection otherwise; either way the bracket keeps a feasible lower
    end and an infeasible upper end.

    ``lo`` may name a scale already known to be feasible, which shortens the
    search; it is re-checked and ignored if it turns out not to be.
    """
    d = np.maximum(np.asarray(direction, dtype=float), RATE_FLOOR)
    power = np.empty(oracle.K)
    lo, hi, evals = _ray_search(
        oracle.cross, oracle.noise, oracle.rate_scale, d, float(budget),
        float(lo), rtol, max_iter, power,
    )
    return RayBracket(lo, hi, power, evals)


def max_scale_on_ray(params: SystemParams, channel, direction, budget: float | None = None) -> float:
    """Largest ``s`` in [0, 1] with ``s * direction`` achievable within ``budget``.

    Components of ``direction`` are clamped to the rate floor first.
    """
    budget = params.Pmax if budget is None else budget
    return ray_bracket(PowerOracle(params, channel), direction, budget).lo
