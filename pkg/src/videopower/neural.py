"""Feedforward power-allocation network trained on polyblock labels.

Hidden layers are affine maps followed by a rectifier. The output layer
rectifies its pre-activations ``z`` and rescales them to the power budget,

    P_k = max(z_k, 0) / sum_j max(z_j, 0) * Pmax,

so every output is a nonnegative power vector that spends the whole budget.
When no pre-activation is positive the budget is split evenly and no gradient
flows through the output layer.
"""

from __future__ import annotations

import csv
import io
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .model import QualityProfile, SystemParams, rates, weighted_sum_quality

CHECKPOINT_MAGIC = b"VPNN"
CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("epoch", "train_mse", "val_mse", "train_psnr", "val_psnr")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 20
    epochs: int = 30
    rmsprop_decay: float = 0.9
    rmsprop_smoothing: float = 1e-8
    init_stddev: float = 0.1
    init_bias: float = 0.1
    hidden: tuple[int, ...] = (200, 80, 80)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        self.hidden = tuple(int(h) for h in self.hidden)


class MlpNetwork:
    """Weights are stored input-major: ``weights[l]`` has shape (fan_in, fan_out)."""

    def __init__(self, layer_dims, Pmax: float, weights=None, biases=None):
        self.layer_dims = [int(d) for d in layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        self.Pmax = float(Pmax)
        shapes = list(zip(self.layer_dims[:-1], self.layer_dims[1:]))
        if weights is None:
            weights = [np.zeros(s) for s in shapes]
            biases = [np.zeros(s[1]) for s in shapes]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for (fan_in, fan_out), w, b in zip(shapes, self.weights, self.biases):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(f"parameter shapes do not chain for dims {self.layer_dims}")

    @classmethod
    def initialize(cls, K: int, Pmax: float, config: TrainConfig, rng=None) -> "MlpNetwork":
        """Truncated-normal weights (cut at two standard deviations), constant biases."""
        rng = np.random.default_rng(config.seed) if rng is None else rng
        dims = [K * K, *config.hidden, K]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = truncnorm.rvs(-2.0, 2.0, scale=config.init_stddev, size=(fan_in, fan_out), random_state=rng)
            weights.append(np.asarray(w, dtype=float))
            biases.append(np.full(fan_out, config.init_bias))
        return cls(dims, Pmax, weights, biases)

    @property
    def K(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            self.layer_dims, self.Pmax,
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
        )

    def __call__(self, gamma_flat) -> np.ndarray:
        return forward(self, gamma_flat)


def _pre_activations(net: MlpNetwork, x: np.ndarray):
    """Hidden activations and output pre-activations for a (n, K^2) batch."""
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = h @ w + b
        if i == last:
            return acts, a
        h = np.maximum(a, 0.0)
        acts.append(h)
    raise AssertionError("unreachable")


def normalize_output(z: np.ndarray, Pmax: float) -> np.ndarray:
    r = np.maximum(z, 0.0)
    S = r.sum(axis=-1, keepdims=True)
    K = z.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(S > 0, r / np.where(S > 0, S, 1.0) * Pmax, Pmax / K)
    return P


def normalize_jacobian(z: np.ndarray, Pmax: float) -> np.ndarray:
    """dP_k/dz_j for one pre-activation vector; zero if nothing is positive."""
    r = np.maximum(z, 0.0)
    S = r.sum()
    K = len(z)
    if S <= 0:
        return np.zeros((K, K))
    active = (z > 0).astype(float)
    return Pmax * active[None, :] * (np.eye(K) * S - r[:, None]) / S**2


def forward(net: MlpNetwork, gamma_flat) -> np.ndarray:
    """Power allocation for one input vector (K^2,) or a batch (n, K^2)."""
    x = np.asarray(gamma_flat, dtype=float)
    if x.shape[-1] != net.layer_dims[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.layer_dims[0]}")
    single = x.ndim == 1
    _, z = _pre_activations(net, np.atleast_2d(x))
    P = normalize_output(z, net.Pmax)
    return P[0] if single else P


def loss(net: MlpNetwork, gammas, labels) -> float:
    """Mean squared error in W^2 over samples and users."""
    P = forward(net, np.atleast_2d(gammas))
    return float(np.mean((P - np.atleast_2d(labels)) ** 2))


def backward(net: MlpNetwork, gammas, labels) -> tuple[float, list[np.ndarray]]:
    """MSE and its gradient, ordered like :meth:`MlpNetwork.parameters`."""
    x = np.atleast_2d(np.asarray(gammas, dtype=float))
    y = np.atleast_2d(np.asarray(labels, dtype=float))
    acts, z = _pre_activations(net, x)
    P = normalize_output(z, net.Pmax)
    diff = P - y
    value = float(np.mean(diff**2))

    g = 2.0 * diff / diff.size  # dL/dP
    r = np.maximum(z, 0.0)
    S = r.sum(axis=1, keepdims=True)
    ok = S > 0
    S_safe = np.where(ok, S, 1.0)
    # dL/dz_j = Pmax [z_j > 0] (g_j S - sum_k g_k r_k) / S^2
    dz = net.Pmax * (z > 0) * (g * S_safe - np.sum(g * r, axis=1, keepdims=True)) / S_safe**2
    dz = np.where(ok, dz, 0.0)

    grads: list[np.ndarray] = []
    delta = dz
    for i in range(len(net.weights) - 1, -1, -1):
        h = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append(h.T @ delta)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (h > 0)
    grads.reverse()
    # reversed pairs come out as (W, b) per layer
    return value, grads


@dataclass
class RmsPropState:
    mean_square: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, net: MlpNetwork) -> "RmsPropState":
        return cls([np.zeros_like(p) for p in net.parameters()])


def rmsprop_step(net: MlpNetwork, grads, state: RmsPropState, config: TrainConfig) -> None:
    """In-place RMSProp update of ``net`` and ``state``."""
    rho = config.rmsprop_decay
    lr = config.learning_rate
    eps = config.rmsprop_smoothing
    for p, g, r in zip(net.parameters(), grads, state.mean_square):
        r *= rho
        r += (1.0 - rho) * g * g
        p -= lr * g / (np.sqrt(r) + eps)


@dataclass
class EpochMetrics:
    epoch: int
    train_mse: float
    val_mse: float
    train_psnr: float
    val_psnr: float
    seconds: float = 0.0


def achieved_psnr(net: MlpNetwork, params: SystemParams, profile: QualityProfile, gammas) -> np.ndarray:
    """Weighted-sum PSNR per sample when the network's powers are applied."""
    gammas = np.atleast_2d(gammas)
    P = forward(net, gammas)
    K = params.K
    R = rates(params, gammas.reshape(-1, K, K), P)
    return weighted_sum_quality(profile, R, clamp=True)


def _evaluate(net, params, profile, gammas, labels):
    if len(gammas) == 0:
        return math.nan, math.nan
    P = forward(net, gammas)
    mse = float(np.mean((P - labels) ** 2))
    R = rates(params, gammas.reshape(-1, params.K, params.K), P)
    psnr = float(np.mean(weighted_sum_quality(profile, R, clamp=True)))
    return mse, psnr


def train(
    train_set,
    val_set,
    params: SystemParams,
    profile: QualityProfile,
    config: TrainConfig,
    net: MlpNetwork | None = None,
    callback=None,
) -> tuple[MlpNetwork, list[EpochMetrics]]:
    """Mini-batch RMSProp on MSE against the solver's power labels.

    ``train_set`` and ``val_set`` are ``(gammas, powers)`` pairs of arrays.
    The network is initialized from ``config.seed`` unless given; the batch
    order is shuffled every epoch from a separate stream of the same seed.
    Row 0 of the returned metrics describes the untrained network.
    """
    X, Y = (np.asarray(a, dtype=float) for a in train_set)
    Xv, Yv = (np.asarray(a, dtype=float) for a in val_set)
    if len(X) == 0:
        raise ValueError("training set is empty")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    if net is None:
        net = MlpNetwork.initialize(params.K, params.Pmax, config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    state = RmsPropState.zeros_like(net)

    def snapshot(epoch, seconds):
        tr = _evaluate(net, params, profile, X, Y)
        va = _evaluate(net, params, profile, Xv, Yv)
        m = EpochMetrics(epoch, tr[0], va[0], tr[1], va[1], seconds)
        if callback is not None:
            callback(m)
        return m

    metrics = [snapshot(0, 0.0)]
    n = len(X)
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = backward(net, X[idx], Y[idx])
            rmsprop_step(net, grads, state, config)
        metrics.append(snapshot(epoch, time.perf_counter() - t0))
        if not all(np.all(np.isfinite(p)) for p in net.parameters()):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
    return net, metrics


def metrics_csv(metrics: list[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow([m.epoch] + [repr(float(getattr(m, c))) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


def timing_csv(metrics: list[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "seconds"])
    for m in metrics:
        w.writerow([m.epoch, f"{m.seconds:.6f}"])
    return buf.getvalue()


def save_checkpoint(net: MlpNetwork, path) -> None:
    """Binary checkpoint: little-endian header then float64 arrays.

    Layout: magic ``VPNN``, u32 version, u32 K, u32 layer count, u32 per layer
    width, f64 Pmax, then for every layer the weight matrix (row-major,
    fan_in x fan_out) followed by the bias vector.
    """
    dims = net.layer_dims
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<III{len(dims)}Id", CHECKPOINT_VERSION, net.K, len(dims), *dims, net.Pmax
    )
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters()
    )
    Path(path).write_bytes(header + body)


def load_checkpoint(path) -> MlpNetwork:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, K, n = struct.unpack_from("<III", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    dims = list(struct.unpack_from(f"<{n}I", data, off))
    off += 4 * n
    (Pmax,) = struct.unpack_from("<d", data, off)
    off += 8
    if dims[0] != K * K or dims[-1] != K:
        raise ValueError(f"{path}: layer widths {dims} inconsistent with K={K}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return MlpNetwork(dims, Pmax, weights, biases)
