"""System constants, the AMC rate model and the PSNR-rate video quality model.

Rates are carried in bit/s everywhere. The quality model is fitted with rates
in kbit/s, so the conversion happens only in :func:`quality` and
:func:`min_rate_targets`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Rates below this (bit/s) have no defined quality.
RATE_FLOOR = 1.0

# PSNR-rate fit per CIF sequence: (alpha dB per ln(kbit/s), beta dB).
VIDEO_TABLE: dict[str, tuple[float, float]] = {
    "akiyo": (5.0545, 17.1145),
    "bus": (4.7205, 5.4764),
    "coastguard": (3.5261, 13.8425),
    "foreman": (4.5006, 13.0780),
    "news": (5.6218, 10.0016),
}

DEFAULT_VIDEOS = ("akiyo", "bus", "coastguard", "foreman", "news")


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the shared-spectrum downlink.

    ``Pmax`` defaults to ``K`` watts.
    """

    K: int
    B: float = 1e5
    N0: float = 1e-6
    c1: float = 0.905
    c2: float = 1.34
    Pmax: float | None = None

    def __post_init__(self):
        if self.Pmax is None:
            object.__setattr__(self, "Pmax", float(self.K))
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if self.B <= 0 or self.N0 <= 0 or self.c1 <= 0 or self.Pmax <= 0:
            raise ValueError("B, N0, c1 and Pmax must be positive")
        if self.c2 < 1:
            raise ValueError(f"SNR gap c2 must be >= 1, got {self.c2}")

    @property
    def noise(self) -> float:
        """Noise power N0*B in watts."""
        return self.N0 * self.B


@dataclass(frozen=True)
class QualityProfile:
    alpha: np.ndarray
    beta: np.ndarray
    omega: np.ndarray
    q_min: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("alpha", "beta", "omega", "q_min"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        K = self.alpha.shape[0]
        if self.alpha.ndim != 1 or any(
            getattr(self, n).shape != (K,) for n in ("beta", "omega", "q_min")
        ):
            raise ValueError("alpha, beta, omega and q_min must be length-K vectors")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha must be positive")
        if np.any(self.omega < 0) or np.any(self.omega > 1):
            raise ValueError("weights must lie in [0, 1]")
        if abs(self.omega.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.omega.sum()}")

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @classmethod
    def from_videos(
        cls,
        names: Sequence[str],
        weights: Sequence[float] | None = None,
        q_min: float | Sequence[float] = 0.0,
    ) -> "QualityProfile":
        """Build a profile from sequence names in :data:`VIDEO_TABLE`.

        Weights default to uniform and the quality floor to 0 dB, which asks
        for at most a few hundred bit/s per user; it only binds on channels
        with a nearly vanishing direct gain.
        """
        names = tuple(n.strip().lower() for n in names)
        unknown = [n for n in names if n not in VIDEO_TABLE]
        if unknown:
            raise ValueError(
                f"unknown video(s) {unknown}; known: {sorted(VIDEO_TABLE)}"
            )
        K = len(names)
        alpha = [VIDEO_TABLE[n][0] for n in names]
        beta = [VIDEO_TABLE[n][1] for n in names]
        omega = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, float)
        qm = np.broadcast_to(np.asarray(q_min, float), (K,)).copy()
        return cls(alpha, beta, omega, qm, names)

    @classmethod
    def default(cls, K: int) -> "QualityProfile":
        """First ``K`` tabulated sequences, cycling if ``K`` exceeds the table."""
        return cls.from_videos([DEFAULT_VIDEOS[k % len(DEFAULT_VIDEOS)] for k in range(K)])


@dataclass(frozen=True)
class ChannelRealization:
    """Channel power gains, ``gains[i, k]`` from transmit stream i to user k."""

    gains: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        g = np.array(self.gains, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"gains must be a square matrix, got shape {g.shape}")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValueError("gains must be finite and nonnegative")
        if np.any(np.diag(g) <= 0):
            raise ValueError("direct-link gains must be positive")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def K(self) -> int:
        return self.gains.shape[0]

    def flat(self) -> np.ndarray:
        return self.gains.reshape(-1).copy()


def _gains(channel) -> np.ndarray:
    return channel.gains if isinstance(channel, ChannelRealization) else np.asarray(channel, float)


def sinr(params: SystemParams, channel, power) -> np.ndarray:
    """Effective SINR after the SNR gap, P_k g_kk / (c2 (N0 B + interference))."""
    G = _gains(channel)
    P = np.asarray(power, dtype=float)
    K = params.K
    if G.shape[-2:] != (K, K) or P.shape[-1] != K:
        raise ValueError(
            f"dimension mismatch: K={K}, gains {G.shape}, power {P.shape}"
        )
    direct = np.diagonal(G, axis1=-2, axis2=-1)
    signal = P * direct
    received = np.einsum("...i,...ik->...k", P, G)
    interference = received - signal
    return signal / (params.c2 * (params.noise + interference))


def rates(params: SystemParams, channel, power) -> np.ndarray:
    """Per-user transmission rate in bit/s.

    Accepts a single (K, K) channel with a (K,) power vector, or stacked
    batches with shapes (..., K, K) and (..., K).
    """
    return params.c1 * params.B * np.log2(1.0 + sinr(params, channel, power))


def quality(profile: QualityProfile, rates_bps) -> np.ndarray:
    """Per-user PSNR in dB. Users below :data:`RATE_FLOOR` get NaN."""
    R = np.asarray(rates_bps, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = profile.alpha * np.log(R / 1e3) + profile.beta
    return np.where(R >= RATE_FLOOR, q, np.nan)


def weighted_sum_quality(profile: QualityProfile, rates_bps, clamp: bool = False):
    """Weighted sum PSNR, the monotone objective of the power-control problem.

    With ``clamp=False`` any user below the rate floor raises ``ValueError``.
    ``clamp=True`` evaluates such users at the floor instead; this is what the
    training metrics use, since a network may switch a user off entirely.
    """
    R = np.asarray(rates_bps, dtype=float)
    if clamp:
        R = np.maximum(R, RATE_FLOOR)
    q = quality(profile, R)
    if np.any(np.isnan(q)):
        raise ValueError("quality undefined: rate below the floor for some user")
    return np.sum(profile.omega * q, axis=-1)


def min_rate_targets(profile: QualityProfile) -> np.ndarray:
    """Rates in bit/s at which each user just meets its quality floor."""
    return 1e3 * np.exp((profile.q_min - profile.beta) / profile.alpha)
