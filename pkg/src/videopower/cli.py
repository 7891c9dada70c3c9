"""Command-line entry point: ``videopower <command> [--config FILE] [--key value ...]``.

Settings come from built-in defaults, then a JSON config file (``--config``
or the ``VIDEOPOWER_CONFIG`` environment variable), then command-line flags.
Everything a command writes lands under ``--out-dir``.

Exit codes: 0 success, 1 usage or input error, 2 infeasible instance or
aborted dataset build.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import experiments, mo_solver, neural
from .model import QualityProfile, SystemParams

log = logging.getLogger("videopower")

CONFIG_ENV = "VIDEOPOWER_CONFIG"
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _names(text):
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _opt_float(text):
    return None if text is None else float(text)


# key: (converter, default, help)
SETTINGS = {
    "K": (int, 3, "number of users"),
    "B": (float, 1e5, "bandwidth in Hz"),
    "N0": (float, 1e-6, "noise spectral density in W/Hz"),
    "c1": (float, 0.905, "rate adjustment factor"),
    "c2": (float, 1.34, "SNR gap"),
    "Pmax": (_opt_float, None, "power budget in W (default: K)"),
    "videos": (_names, None, "comma-separated sequence names, one per user"),
    "weights": (_floats, None, "comma-separated user weights (default: uniform)"),
    "q_min": (_floats, [0.0], "minimum PSNR in dB, one value or one per user"),
    "channel": (str, "exponential", "channel distribution: exponential | constant:<g>"),
    "counts": (_ints, list(data_mod.DEFAULT_COUNTS), "train,val,test sample counts"),
    "seed": (int, 0, "master seed"),
    "epsilon": (float, mo_solver.DEFAULT_EPSILON, "solver tolerance in dB for `solve`"),
    "label_epsilon": (float, data_mod.DEFAULT_LABEL_EPSILON, "solver tolerance in dB for dataset labels"),
    "vertex_cap": (int, mo_solver.DEFAULT_VERTEX_CAP, "polyblock vertex limit"),
    "workers": (int, 1, "labeling processes"),
    "learning_rate": (float, 1e-4, "RMSProp learning rate"),
    "batch_size": (int, 20, "mini-batch size"),
    "epochs": (int, 30, "training epochs"),
    "rmsprop_decay": (float, 0.9, "RMSProp decay"),
    "rmsprop_smoothing": (float, 1e-8, "RMSProp smoothing term"),
    "init_stddev": (float, 0.1, "truncated-normal weight scale"),
    "hidden": (_ints, [200, 80, 80], "hidden layer widths"),
    "batch_sizes": (_ints, [20, 100, 500], "batch sizes for `sweep`"),
    "learning_rates": (_floats, [1e-3, 1e-4, 1e-5], "learning rates for `sweep`"),
    "out_dir": (str, "runs", "output directory"),
    "data_dir": (str, None, "dataset directory (default: <out_dir>/data)"),
    "checkpoint": (str, None, "network checkpoint (default: <out_dir>/model.bin)"),
    "channel_seed": (int, 0, "channel seed for `solve`"),
    "bench_samples": (int, 100, "samples timed by `bench` and `eval` (0 skips timing in `eval`)"),
}

COMMANDS = {
    "gen-data": "label channel draws with the polyblock solver",
    "solve": "solve one channel draw and write its bound trace",
    "train": "train the network on a dataset",
    "eval": "compare a trained network with the solver labels on the test split",
    "sweep": "retrain under several batch sizes and learning rates",
    "bench": "time the solver against the network",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="videopower", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, (_, _, h) in SETTINGS.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None, help=h)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    cfg = {k: default for k, (_, default, _) in SETTINGS.items()}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        unknown = sorted(set(file_cfg) - set(SETTINGS))
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key, (conv, _, _) in SETTINGS.items():
        if cfg[key] is not None:
            try:
                cfg[key] = conv(cfg[key])
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key}: {cfg[key]!r} ({exc})") from None
    return cfg


def system_from_config(cfg: dict) -> tuple[SystemParams, QualityProfile]:
    K = cfg["K"]
    try:
        params = SystemParams(K, cfg["B"], cfg["N0"], cfg["c1"], cfg["c2"], cfg["Pmax"])
        if cfg["videos"] is None:
            base = QualityProfile.default(K)
            names = list(base.names)
        else:
            names = cfg["videos"]
            if len(names) != K:
                raise ValueError(f"{len(names)} videos given for K={K}")
        q_min = cfg["q_min"]
        q_min = q_min[0] if len(q_min) == 1 else q_min
        profile = QualityProfile.from_videos(names, cfg["weights"], q_min)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return params, profile


def train_config(cfg: dict) -> neural.TrainConfig:
    try:
        return neural.TrainConfig(
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            epochs=cfg["epochs"],
            rmsprop_decay=cfg["rmsprop_decay"],
            rmsprop_smoothing=cfg["rmsprop_smoothing"],
            init_stddev=cfg["init_stddev"],
            hidden=tuple(cfg["hidden"]),
            seed=cfg["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _inside(path: Path, root: Path) -> Path:
    path, root = path.resolve(), root.resolve()
    if path != root and root not in path.parents:
        raise UsageError(f"{path} is outside the output directory {root}")
    return path


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(cfg) -> Path:
    return Path(cfg["data_dir"]) if cfg["data_dir"] else Path(cfg["out_dir"]) / "data"


def _checkpoint(cfg) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out_dir"]) / "model.bin"


def _load(cfg):
    try:
        ds = data_mod.load_dataset(_data_dir(cfg))
    except data_mod.DatasetError as exc:
        raise UsageError(str(exc)) from None
    params, profile = data_mod.params_from_manifest(ds.manifest)
    return ds, params, profile


def cmd_gen_data(cfg) -> int:
    params, profile = system_from_config(cfg)
    out = _out_dir(cfg)
    target = _inside(_data_dir(cfg), out)
    try:
        spec = data_mod.ChannelSpec.parse(cfg["channel"], params.K)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if len(cfg["counts"]) != 3:
        raise UsageError("counts must be three comma-separated integers")
    ds = data_mod.build_dataset(
        params, profile, spec, cfg["counts"], cfg["seed"], cfg["label_epsilon"],
        out_dir=target, vertex_cap=cfg["vertex_cap"], workers=cfg["workers"],
    )
    print(f"wrote {target}: " + ", ".join(f"{k}={v}" for k, v in ds.manifest["written"].items()))
    print("skipped: " + json.dumps(ds.manifest["skipped"], sort_keys=True))
    return 0


def cmd_solve(cfg) -> int:
    params, profile = system_from_config(cfg)
    out = _out_dir(cfg)
    try:
        spec = data_mod.ChannelSpec.parse(cfg["channel"], params.K)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    channel = data_mod.sample_channel(spec, cfg["channel_seed"])
    sol = mo_solver.solve(params, profile, channel, cfg["epsilon"], cfg["vertex_cap"])
    trace_path = out / f"trace_seed{cfg['channel_seed']}.csv"
    trace_path.write_text(sol.trace_csv())
    for it, lower, upper, n in sol.trace:
        print(f"iter {it:6d}  lower {lower:.6f}  upper {upper:.6f}  vertices {n}")
    print(f"status   {sol.status.value}")
    print(f"gains    {np.array2string(channel.gains, precision=6)}")
    if sol.P_opt is not None:
        print(f"Q_opt    {sol.Q_opt:.6f} dB  (gap {sol.gap:.3g} dB, {sol.iterations} iterations)")
        print(f"P_opt    {np.array2string(sol.P_opt, precision=6)} W  (sum {sol.P_opt.sum():.9f})")
        print(f"R_opt    {np.array2string(sol.R_opt / 1e3, precision=4)} kbit/s")
    print(f"trace -> {trace_path}")
    return 0 if sol.status is mo_solver.Status.OPTIMAL else EXIT_INFEASIBLE


def cmd_train(cfg) -> int:
    out = _out_dir(cfg)
    ds, params, profile = _load(cfg)
    tc = train_config(cfg)
    tr, va = ds["train"], ds["val"]
    if len(tr) == 0:
        raise UsageError("training split is empty")

    def report(m):
        log.info("epoch %3d  train_mse %.6f  val_mse %.6f  val_psnr %.4f", m.epoch, m.train_mse, m.val_mse, m.val_psnr)

    net, metrics = neural.train((tr.gammas, tr.powers), (va.gammas, va.powers), params, profile, tc, callback=report)
    ckpt = _inside(out / "model.bin", out)
    neural.save_checkpoint(net, ckpt)
    (out / "metrics.csv").write_text(neural.metrics_csv(metrics))
    (out / "timing.csv").write_text(neural.timing_csv(metrics))
    last = metrics[-1]
    print(f"epochs {last.epoch}: train_mse {last.train_mse:.6g}  val_mse {last.val_mse:.6g}  val_psnr {last.val_psnr:.4f} dB")
    print(f"checkpoint -> {ckpt}")
    return 0


def _load_net(cfg, params):
    try:
        net = neural.load_checkpoint(_checkpoint(cfg))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    if net.K != params.K:
        raise UsageError(f"checkpoint is for K={net.K}, dataset has K={params.K}")
    return net


def cmd_eval(cfg) -> int:
    out = _out_dir(cfg)
    ds, params, profile = _load(cfg)
    net = _load_net(cfg, params)
    report = experiments.evaluate(net, ds["test"], params, profile)
    if cfg["bench_samples"] > 0:
        spec = data_mod.ChannelSpec.parse(ds.manifest["channel"], params.K)
        timing = experiments.bench(
            net, ds["test"], params, profile, spec, ds.manifest["epsilon"], cfg["bench_samples"]
        )
        report["timed_samples"] = timing["samples"]
        report["mo_seconds_per_sample"] = timing["mo_seconds_per_sample"]
        report["dnn_seconds_per_sample"] = timing["dnn_seconds_per_sample"]
    (out / "eval.csv").write_text(experiments.report_csv(report))
    (out / "eval_samples.csv").write_text(experiments.per_sample_csv(net, ds["test"], params, profile))
    for k, v in report.items():
        print(f"{k:20s} {v}")
    return 0


def cmd_sweep(cfg) -> int:
    out = _out_dir(cfg)
    ds, params, profile = _load(cfg)
    if not cfg["batch_sizes"] and not cfg["learning_rates"]:
        raise UsageError("sweep needs batch_sizes or learning_rates")
    summary = experiments.sweep(
        ds, params, profile, train_config(cfg), cfg["batch_sizes"], cfg["learning_rates"], out
    )
    for row in summary:
        print(
            f"{row['kind']:5s} {row['value']:<8g} epochs_to_threshold {row['epochs_to_threshold']}"
            f"  final_val_mse {row['final_val_mse']:.6g}"
        )
    return 0


def cmd_bench(cfg) -> int:
    out = _out_dir(cfg)
    ds, params, profile = _load(cfg)
    net = _load_net(cfg, params)
    spec = data_mod.ChannelSpec.parse(ds.manifest["channel"], params.K)
    report = experiments.bench(
        net, ds["test"], params, profile, spec, ds.manifest["epsilon"], cfg["bench_samples"]
    )
    (out / "bench.csv").write_text(experiments.report_csv(report))
    for k, v in report.items():
        print(f"{k:24s} {v}")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"videopower: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except data_mod.DatasetAbort as exc:
        print(f"videopower: aborted: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
