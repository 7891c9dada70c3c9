"""Evaluation, hyperparameter sweeps and the solver-vs-network timing bench."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from pathlib import Path

import numpy as np

from . import mo_solver
from .data import ChannelSpec, Dataset, SplitData, sample_channel
from .model import QualityProfile, SystemParams
from .neural import EpochMetrics, MlpNetwork, TrainConfig, achieved_psnr, forward, metrics_csv, train

#: Batch-size sweep threshold, as a fraction of the untrained validation MSE.
THRESHOLD_FRACTION = 0.05


def evaluate(net: MlpNetwork, split: SplitData, params: SystemParams, profile: QualityProfile) -> dict:
    """Compare the network against the stored solver labels on one split."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    dnn_q = achieved_psnr(net, params, profile, split.gammas)
    P = forward(net, split.gammas)
    dev = np.abs(P.sum(axis=1) - params.Pmax)
    return {
        "samples": len(split),
        "mo_psnr": float(np.mean(split.q_opt)),
        "dnn_psnr": float(np.mean(dnn_q)),
        "psnr_gap": float(np.mean(split.q_opt) - np.mean(dnn_q)),
        "max_power_sum_dev": float(dev.max()),
        "power_mse": float(np.mean((P - split.powers) ** 2)),
    }


def per_sample_csv(net: MlpNetwork, split: SplitData, params: SystemParams, profile: QualityProfile) -> str:
    """One row per test sample: both PSNRs and both allocations."""
    P = forward(net, split.gammas)
    dnn_q = achieved_psnr(net, params, profile, split.gammas)
    K = params.K
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["index", "seed", "mo_psnr", "dnn_psnr", "dnn_power_sum"]
        + [f"mo_p_{k + 1}" for k in range(K)]
        + [f"dnn_p_{k + 1}" for k in range(K)]
    )
    for j in range(len(split)):
        w.writerow(
            [j, int(split.seeds[j]), repr(float(split.q_opt[j])), repr(float(dnn_q[j])),
             repr(float(P[j].sum()))]
            + [repr(float(x)) for x in split.powers[j]]
            + [repr(float(x)) for x in P[j]]
        )
    return buf.getvalue()


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for key, value in report.items():
        w.writerow([key, repr(value) if isinstance(value, float) else value])
    return buf.getvalue()


def epochs_to_threshold(metrics: list[EpochMetrics], threshold: float) -> float:
    """First epoch whose validation MSE is at or below ``threshold`` (inf if none)."""
    for m in metrics:
        if m.val_mse <= threshold:
            return m.epoch
    return math.inf


def sweep(
    dataset: Dataset,
    params: SystemParams,
    profile: QualityProfile,
    base: TrainConfig,
    batch_sizes=(),
    learning_rates=(),
    out_dir=None,
) -> list[dict]:
    """Retrain from the same initialization under each batch size and learning rate.

    Batch sizes are swept at ``base.learning_rate`` and learning rates at
    ``base.batch_size``. Each run's metrics go to ``sweep_<kind>_<value>.csv``;
    the returned summary rows are also written to ``sweep_summary.csv``.
    """
    tr, va = dataset["train"], dataset["val"]
    runs = [("batch", bs, dataclasses.replace(base, batch_size=int(bs))) for bs in batch_sizes]
    runs += [("lr", lr, dataclasses.replace(base, learning_rate=float(lr))) for lr in learning_rates]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    summary = []
    for kind, value, cfg in runs:
        _, metrics = train((tr.gammas, tr.powers), (va.gammas, va.powers), params, profile, cfg)
        threshold = THRESHOLD_FRACTION * metrics[0].val_mse
        row = {
            "kind": kind,
            "value": value,
            "epochs_to_threshold": epochs_to_threshold(metrics, threshold),
            "threshold": threshold,
            "final_val_mse": metrics[-1].val_mse,
            "final_val_psnr": metrics[-1].val_psnr,
        }
        summary.append(row)
        if out is not None:
            (out / f"sweep_{kind}_{value:g}.csv").write_text(metrics_csv(metrics))
    if out is not None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(summary[0]) if summary else ["kind"], lineterminator="\n")
        w.writeheader()
        for row in summary:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        (out / "sweep_summary.csv").write_text(buf.getvalue())
    return summary


def bench(
    net: MlpNetwork,
    split: SplitData,
    params: SystemParams,
    profile: QualityProfile,
    spec: ChannelSpec,
    epsilon: float,
    samples: int = 100,
) -> dict:
    """Mean wall time per sample: polyblock solve vs one network forward pass.

    Channels are regenerated from the split's seeds so the solver sees the
    same instances the network does. Both paths are warmed up first.
    """
    n = min(samples, len(split))
    if n == 0:
        raise ValueError("bench needs at least one sample")
    channels = [sample_channel(spec, int(s)) for s in split.seeds[:n]]
    mo_solver.solve(params, profile, channels[0], epsilon=epsilon)
    forward(net, split.gammas[0])

    t0 = time.perf_counter()
    for ch in channels:
        mo_solver.solve(params, profile, ch, epsilon=epsilon)
    mo_time = (time.perf_counter() - t0) / n

    t0 = time.perf_counter()
    for g in split.gammas[:n]:
        forward(net, g)
    dnn_time = (time.perf_counter() - t0) / n
    return {
        "samples": n,
        "epsilon": epsilon,
        "mo_seconds_per_sample": mo_time,
        "dnn_seconds_per_sample": dnn_time,
        "speedup": mo_time / dnn_time,
    }
