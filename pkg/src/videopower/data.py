"""Channel sampling, solver labeling and the on-disk dataset format.

A dataset directory holds ``train.csv``, ``val.csv``, ``test.csv`` and
``manifest.json``. Each CSV row is one channel realization (row-major gains),
the solver's power allocation, its weighted-sum PSNR and the seed that
regenerates the channel. Seeds are laid out so the splits never overlap.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mo_solver
from .model import ChannelRealization, QualityProfile, SystemParams, rates, weighted_sum_quality

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
DEFAULT_COUNTS = (10_000, 1_000, 1_000)
#: Tolerance (dB) used when labeling; see README for the accuracy trade-off.
DEFAULT_LABEL_EPSILON = 0.1
MAX_SKIP_RATE = 0.5
_SEED_STRIDE = 10**8  # per split; split seed ranges cannot overlap below this count


class DatasetError(Exception):
    pass


class DatasetAbort(DatasetError):
    """Too many channel draws produced no usable label."""


@dataclass(frozen=True)
class ChannelSpec:
    """Distribution of the K x K power-gain matrix.

    ``exponential`` draws i.i.d. unit-mean exponential gains (Rayleigh
    fading); ``constant:<g>`` fills every entry with ``g``.
    """

    name: str
    K: int
    value: float = 1.0

    @classmethod
    def parse(cls, text: str, K: int) -> "ChannelSpec":
        kind, _, arg = text.strip().lower().partition(":")
        if kind in ("exponential", "rayleigh"):
            return cls("exponential", K, float(arg) if arg else 1.0)
        if kind == "constant":
            return cls("constant", K, float(arg) if arg else 1.0)
        raise ValueError(f"unknown channel spec {text!r}")

    def __str__(self) -> str:
        if self.name == "exponential" and self.value == 1.0:
            return "exponential"
        return f"{self.name}:{self.value!r}"


def sample_channel(spec: ChannelSpec, seed: int) -> ChannelRealization:
    K = spec.K
    if spec.name == "exponential":
        gains = np.random.default_rng(seed).exponential(spec.value, size=(K, K))
    elif spec.name == "constant":
        gains = np.full((K, K), spec.value)
    else:
        raise ValueError(f"unknown channel spec {spec.name!r}")
    return ChannelRealization(gains, seed)


def sample_seed(master_seed: int, split: int, index: int) -> int:
    if index >= _SEED_STRIDE:
        raise ValueError(f"split too large: index {index}")
    return (int(master_seed) * len(SPLITS) + split) * _SEED_STRIDE + index


@dataclass
class LabeledSample:
    gamma_flat: np.ndarray
    p_label: np.ndarray
    q_opt: float
    seed: int
    feasible: bool = True


@dataclass
class SplitData:
    gammas: np.ndarray
    powers: np.ndarray
    q_opt: np.ndarray
    seeds: np.ndarray

    def __len__(self) -> int:
        return len(self.seeds)

    @classmethod
    def from_samples(cls, samples: list[LabeledSample], K: int) -> "SplitData":
        if not samples:
            return cls(np.empty((0, K * K)), np.empty((0, K)), np.empty(0), np.empty(0, dtype=np.int64))
        return cls(
            np.array([s.gamma_flat for s in samples]),
            np.array([s.p_label for s in samples]),
            np.array([s.q_opt for s in samples]),
            np.array([s.seed for s in samples], dtype=np.int64),
        )

    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(g, p, float(q), int(s))
            for g, p, q, s in zip(self.gammas, self.powers, self.q_opt, self.seeds)
        ]


@dataclass
class Dataset:
    manifest: dict
    splits: dict[str, SplitData]

    def __getitem__(self, split: str) -> SplitData:
        return self.splits[split]


def csv_header(K: int) -> list[str]:
    gains = [f"g_{i}_{k}" for i in range(1, K + 1) for k in range(1, K + 1)]
    return gains + [f"p_{k}" for k in range(1, K + 1)] + ["q_opt", "seed"]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def label_channel(params, profile, spec, seed, epsilon, vertex_cap) -> tuple[LabeledSample | None, str]:
    """Solve one channel draw; returns the sample or ``(None, status)``."""
    channel = sample_channel(spec, seed)
    sol = mo_solver.solve(params, profile, channel, epsilon=epsilon, vertex_cap=vertex_cap)
    if sol.status is not mo_solver.Status.OPTIMAL:
        return None, sol.status.value
    return LabeledSample(channel.flat(), sol.P_opt, float(sol.Q_opt), seed), sol.status.value


def _label_job(job):
    return label_channel(*job)


def _write_split(path: Path, samples: list[LabeledSample], K: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(K))
        for s in samples:
            w.writerow(
                [_fmt(g) for g in s.gamma_flat]
                + [_fmt(p) for p in s.p_label]
                + [_fmt(s.q_opt), str(s.seed)]
            )


def _profile_dict(profile: QualityProfile) -> dict:
    return {
        "videos": list(profile.names),
        "alpha": profile.alpha.tolist(),
        "beta": profile.beta.tolist(),
        "omega": profile.omega.tolist(),
        "q_min": profile.q_min.tolist(),
    }


def params_dict(params: SystemParams) -> dict:
    return {"K": params.K, "B": params.B, "N0": params.N0, "c1": params.c1, "c2": params.c2, "Pmax": params.Pmax}


def build_dataset(
    params: SystemParams,
    profile: QualityProfile,
    spec: ChannelSpec,
    counts=DEFAULT_COUNTS,
    master_seed: int = 0,
    epsilon: float = DEFAULT_LABEL_EPSILON,
    out_dir=None,
    vertex_cap: int = mo_solver.DEFAULT_VERTEX_CAP,
    workers: int = 1,
) -> Dataset:
    """Label ``counts`` channel draws per split and optionally write them out.

    Draws the solver cannot label (infeasible or vertex cap hit) are skipped
    and counted; more than half skipped in any split raises
    :class:`DatasetAbort` before anything is written.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != len(SPLITS) or any(c < 0 for c in counts) or sum(counts) == 0:
        raise ValueError(f"counts must be three nonnegative integers, got {counts}")
    K = params.K
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "params": params_dict(params),
        "profile": _profile_dict(profile),
        "channel": str(spec),
        "master_seed": int(master_seed),
        "epsilon": float(epsilon),
        "vertex_cap": int(vertex_cap),
        "requested": dict(zip(SPLITS, counts)),
        "written": {},
        "skipped": {},
        "files": {s: f"{s}.csv" for s in SPLITS},
    }
    splits = {}
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for split_idx, (name, n) in enumerate(zip(SPLITS, counts)):
            jobs = [
                (params, profile, spec, sample_seed(master_seed, split_idx, j), epsilon, vertex_cap)
                for j in range(n)
            ]
            results = pool.map(_label_job, jobs, chunksize=16) if pool else map(_label_job, jobs)
            samples, skipped = [], {}
            for j, (sample, status) in enumerate(results):
                if sample is None:
                    skipped[status] = skipped.get(status, 0) + 1
                else:
                    samples.append(sample)
                if (j + 1) % 1000 == 0:
                    log.info("%s: labeled %d/%d", name, j + 1, n)
            n_skip = sum(skipped.values())
            if n and n_skip / n > MAX_SKIP_RATE:
                raise DatasetAbort(
                    f"{name}: {n_skip} of {n} channel draws had no feasible allocation "
                    f"({skipped}); skip rate exceeds {MAX_SKIP_RATE:.0%}"
                )
            manifest["written"][name] = len(samples)
            manifest["skipped"][name] = dict(sorted(skipped.items()))
            splits[name] = SplitData.from_samples(samples, K)
    finally:
        if pool:
            pool.shutdown()

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            _write_split(out / manifest["files"][name], splits[name].samples(), K)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Dataset(manifest, splits)


def read_split(path, params: SystemParams) -> SplitData:
    """Parse and validate one split CSV.

    Every row must be finite, carry nonnegative gains with positive direct
    links, and a label inside the power budget.
    """
    K = params.K
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: missing header") from None
        if header != csv_header(K):
            raise DatasetError(f"{path}: header does not match schema v{SCHEMA_VERSION} for K={K}")
        rows = list(reader)
    n_g = K * K
    gammas = np.empty((len(rows), n_g))
    powers = np.empty((len(rows), K))
    q = np.empty(len(rows))
    seeds = np.empty(len(rows), dtype=np.int64)
    for j, row in enumerate(rows):
        where = f"{path}: row {j + 1}"
        if len(row) != n_g + K + 2:
            raise DatasetError(f"{where}: expected {n_g + K + 2} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row[:-1]]
            seeds[j] = int(row[-1])
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(f"{where}: non-finite entry")
        g = np.array(vals[:n_g])
        p = np.array(vals[n_g:n_g + K])
        if np.any(g < 0) or np.any(np.diag(g.reshape(K, K)) <= 0):
            raise DatasetError(f"{where}: invalid channel gains")
        if np.any(p < 0):
            raise DatasetError(f"{where}: negative power in label")
        if p.sum() > params.Pmax * (1 + 1e-9):
            raise DatasetError(f"{where}: label exceeds power budget ({p.sum()} W)")
        gammas[j], powers[j], q[j] = g, p, vals[-1]
    return SplitData(gammas, powers, q, seeds)


def audit_split(data: SplitData, params: SystemParams, profile: QualityProfile, q_tol: float = 1e-6):
    """Row indices whose stored PSNR differs from re-evaluating the label."""
    if len(data) == 0:
        return []
    K = params.K
    R = rates(params, data.gammas.reshape(-1, K, K), data.powers)
    q = weighted_sum_quality(profile, R, clamp=True)
    return [int(i) for i in np.flatnonzero(np.abs(q - data.q_opt) > q_tol)]


def params_from_manifest(manifest: dict) -> tuple[SystemParams, QualityProfile]:
    p = manifest["params"]
    params = SystemParams(p["K"], p["B"], p["N0"], p["c1"], p["c2"], p["Pmax"])
    pr = manifest["profile"]
    profile = QualityProfile(pr["alpha"], pr["beta"], pr["omega"], pr["q_min"], tuple(pr["videos"]))
    return params, profile


def load_dataset(path, audit: bool = False) -> Dataset:
    """Read a dataset directory written by :func:`build_dataset`."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"{path}: no manifest.json") from None
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"{path}: schema version {manifest.get('schema_version')} != {SCHEMA_VERSION}")
    params, profile = params_from_manifest(manifest)
    splits = {}
    for name in SPLITS:
        data = read_split(path / manifest["files"][name], params)
        if audit:
            bad = audit_split(data, params, profile)
            if bad:
                raise DatasetError(f"{path / manifest['files'][name]}: row {bad[0] + 1}: q_opt does not match label")
        splits[name] = data
    return Dataset(manifest, splits)
