"""Command-line surface.

Every subcommand writes deterministic output for fixed flags and seed:
CSVs carry a header row and 9-significant-digit floats; plots are SVG with
hashed ids salted by a fixed string and no embedded timestamps.

Exit codes: 0 success, 1 usage error (bad flags, bad parameter values),
2 data error (unreadable or malformed input files).
"""

import argparse
import json
import sys

import numpy as np

from . import bucketing, stats, tensorio
from .errors import DataError, ParameterError
from .experiment import mean_bias_experiment
from .precond import Preconditioner
from .sampler import SamplerConfig, sample
from .schedule import (
    DEFAULT_TERMINAL_CLAMP,
    build_vp_schedule,
    inference_indices,
    inference_sigmas,
    rescale_to_ztsnr,
    sigma_view,
)
from .training import TrainConfig, gaussian_blob, load_toy, save_toy, train_toy


def _fmt(x) -> str:
    return format(float(x), ".9g")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as exit code 1."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _emit(lines, path):
    text = "\n".join(lines) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------- schedule

def _cmd_schedule(args):
    schedule = build_vp_schedule(args.steps, args.beta_start, args.beta_end)
    if args.ztsnr:
        schedule = rescale_to_ztsnr(schedule)
    # rows in sampling order: timestep T down to 1
    timesteps = np.arange(schedule.num_steps, 0, -1)
    alpha_bars = schedule.alpha_bars[::-1]
    sigmas = sigma_view(schedule, args.clamp).sigmas
    snrs = schedule.snr_per_timestep()[::-1]
    if args.inference_steps is not None:
        # the sampler's trailing 0 marker is a step target, not a table row
        picks = inference_indices(len(sigmas), args.inference_steps)
        timesteps, alpha_bars = timesteps[picks], alpha_bars[picks]
        sigmas, snrs = sigmas[picks], snrs[picks]
    lines = ["index,timestep,alpha_bar,sigma,snr"]
    lines += [
        f"{i},{t},{_fmt(ab)},{_fmt(s)},{_fmt(snr)}"
        for i, (t, ab, s, snr) in enumerate(zip(timesteps, alpha_bars, sigmas, snrs))
    ]
    _emit(lines, args.output)
    return 0


# ----------------------------------------------------------------- buckets

def _cmd_buckets_generate(args):
    layout = bucketing.generate_buckets(args.max_area, args.max_dim, args.step)
    lines = ["width,height,aspect"]
    lines += [f"{w},{h},{_fmt(w / h)}" for w, h in layout.buckets]
    _emit(lines, args.output)
    return 0


def _cmd_buckets_assign(args):
    items = bucketing.read_manifest(args.manifest)
    layout = bucketing.generate_buckets()
    lines = []
    for item in items:
        idx = bucketing.assign_bucket(layout, (item["width"], item["height"]),
                                      args.prune_threshold)
        annotated = dict(item)
        annotated["bucket"] = idx
        lines.append(json.dumps(annotated, sort_keys=True))
    _emit(lines, args.output)
    return 0


def _cmd_buckets_plan(args):
    items = bucketing.read_manifest(args.manifest)
    layout = bucketing.generate_buckets()
    plan = bucketing.plan_epoch(items, layout, args.epoch, args.world_size,
                                args.batch_size, args.seed, args.prune_threshold)
    lines = []
    for rank, batches in enumerate(plan.ranks):
        for i, batch in enumerate(batches):
            row = {
                "rank": rank,
                "index": i,
                "bucket": batch.bucket,
                "resolution": None if batch.bucket is None else list(layout.buckets[batch.bucket]),
                "items": list(batch.item_ids),
            }
            if batch.bucket is None:
                row["item_buckets"] = list(batch.item_buckets)
            lines.append(json.dumps(row, sort_keys=True))
    _emit(lines, args.output)
    return 0


# ------------------------------------------------------------------- stats

def _cmd_stats_welford(args):
    state = None
    for path in args.tensors:
        batch = tensorio.read_tensor(path)
        if batch.ndim < 2:
            raise DataError(f"{path}: expected a channel-major tensor of rank >= 2")
        if state is None:
            state = stats.ChannelStats(batch.shape[0])
        state.update(batch)
    lines = ["channel,mean,std,count"]
    stds = state.stds
    for c in range(state.channels):
        lines.append(f"{c},{_fmt(state.means[c])},{_fmt(stds[c])},{state.counts[c]}")
    _emit(lines, args.output)
    return 0


def _read_stats_csv(path) -> stats.ChannelStats:
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse stats CSV: {exc}") from exc
    if table.shape[1] != 4:
        raise DataError(f"{path}: expected channel,mean,std,count columns")
    return stats.ChannelStats.from_moments(table[:, 1], table[:, 2], int(table[0, 3]))


def _cmd_stats_normalize(args):
    state = _read_stats_csv(args.stats)
    latent = tensorio.read_tensor(args.input)
    out = stats.normalize(latent, state)
    tensorio.write_tensor(args.output or args.input, out.astype(latent.dtype))
    return 0


# --------------------------------------------------------------- toy model

def _parse_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{line_no}: expected key = value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from exc
    return values


_CONFIG_DEFAULTS = {
    "data_mean": "3.0, -2.0",
    "data_std": "3.0",
    "data_count": "4096",
    "num_timesteps": "1000",
    "beta_start": "0.00085",
    "beta_end": "0.012",
    "ztsnr": "true",
    "steps": "5000",
    "batch_size": "256",
    "learning_rate": "0.03",
    "seed": "0",
    "minsnr_gamma": "5.0",
    "minsnr_variant": "ztsnr_safe",
    "terminal_clamp": str(DEFAULT_TERMINAL_CLAMP),
    "loss_log": "",
}


def _cmd_train_toy(args):
    cfg = dict(_CONFIG_DEFAULTS)
    file_values = _parse_config_file(args.config)
    unknown = set(file_values) - set(cfg) - {"model_out"}
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg.update(file_values)
    if "model_out" not in cfg:
        raise DataError("config must set model_out")

    try:
        mean = [float(v) for v in cfg["data_mean"].split(",")]
        ztsnr = cfg["ztsnr"].lower() in ("true", "1", "yes")
        schedule = build_vp_schedule(int(cfg["num_timesteps"]),
                                     float(cfg["beta_start"]), float(cfg["beta_end"]))
        if ztsnr:
            schedule = rescale_to_ztsnr(schedule)
        data = gaussian_blob(mean, float(cfg["data_std"]), int(cfg["data_count"]),
                             seed=int(cfg["seed"]))
        train_config = TrainConfig(
            schedule=schedule,
            learning_rate=float(cfg["learning_rate"]),
            steps=int(cfg["steps"]),
            batch_size=int(cfg["batch_size"]),
            seed=int(cfg["seed"]),
            minsnr_gamma=float(cfg["minsnr_gamma"]),
            minsnr_variant=cfg["minsnr_variant"],
            terminal_clamp=float(cfg["terminal_clamp"]),
        )
    except ValueError as exc:
        raise DataError(f"bad config value: {exc}") from exc

    sigma_data = float(np.sqrt(np.mean(data**2)))
    precond = Preconditioner(sigma_data=sigma_data)

    loss_rows = ["step,loss"]
    net = train_toy(train_config, data, precond,
                    loss_hook=lambda step, loss: loss_rows.append(f"{step},{_fmt(loss)}"))
    if cfg["loss_log"]:
        _emit(loss_rows, cfg["loss_log"])

    meta = {
        "sigma_data": sigma_data,
        "terminal_clamp": float(cfg["terminal_clamp"]),
        "schedule": {
            "num_steps": int(cfg["num_timesteps"]),
            "beta_start": float(cfg["beta_start"]),
            "beta_end": float(cfg["beta_end"]),
            "ztsnr": ztsnr,
        },
    }
    save_toy(cfg["model_out"], net, meta)
    final = loss_rows[-1].split(",")[1] if len(loss_rows) > 1 else "n/a"
    print(f"wrote {cfg['model_out']} (final loss {final})")
    return 0


def _load_model(path):
    try:
        net, meta = load_toy(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc
    for key in ("sigma_data", "terminal_clamp", "schedule"):
        if key not in meta:
            raise DataError(f"model sidecar is missing '{key}'")
    return net, meta


def _cmd_sample_toy(args):
    net, meta = _load_model(args.model)
    sched_meta = meta["schedule"]
    schedule = build_vp_schedule(sched_meta["num_steps"], sched_meta["beta_start"],
                                 sched_meta["beta_end"])
    if sched_meta["ztsnr"]:
        schedule = rescale_to_ztsnr(schedule)
    ztsnr_step = sched_meta["ztsnr"] if args.ztsnr is None else args.ztsnr

    table = sigma_view(schedule, meta["terminal_clamp"])
    config = SamplerConfig(
        sigmas=inference_sigmas(table, args.steps),
        ztsnr_first_step=ztsnr_step,
        cfg_scale=args.cfg,
        seed=args.seed,
    )
    precond = Preconditioner(sigma_data=meta["sigma_data"])

    trace_rows = ["step,sigma," + ",".join(f"dim{d}" for d in range(net.input_dim))]

    def trace(step, sigma, denoised):
        mean = denoised.mean(axis=0)
        trace_rows.append(f"{step},{_fmt(sigma)}," + ",".join(_fmt(v) for v in mean))

    draws = sample(config, precond, net, shape=(args.count, net.input_dim),
                   denoised_hook=trace if args.trace else None)
    if args.trace:
        _emit(trace_rows, args.trace)

    lines = [",".join(f"x{d}" for d in range(net.input_dim))]
    lines += [",".join(_fmt(v) for v in row) for row in draws]
    _emit(lines, args.output)
    return 0


def _cmd_demo_ztsnr(args):
    result = mean_bias_experiment(
        args.seed,
        train_steps=args.train_steps,
        sample_count=args.samples,
    )
    lines = [
        "seed,data_mean_x,data_mean_y,ztsnr_mean_x,ztsnr_mean_y,"
        "no_ztsnr_mean_x,no_ztsnr_mean_y,ztsnr_mean_error,no_ztsnr_mean_error",
        ",".join([str(result.seed)]
                 + [_fmt(v) for v in result.data_mean]
                 + [_fmt(v) for v in result.ztsnr_mean]
                 + [_fmt(v) for v in result.plain_mean]
                 + [_fmt(result.ztsnr_error), _fmt(result.plain_error)]),
    ]
    _emit(lines, args.output)
    return 0


# -------------------------------------------------------------------- plot

def _cmd_plot(args):
    try:
        with open(args.input) as fh:
            header = fh.readline().strip().split(",")
        table = np.loadtxt(args.input, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.input}: cannot parse CSV: {exc}") from exc

    kind = args.kind
    if kind is None:
        if header[0] == "index" and "sigma" in header:
            kind = "schedule"
        elif header[:2] == ["step", "loss"]:
            kind = "loss"
        elif len(header) == 2 and header[0].startswith("x"):
            kind = "scatter"
        elif header[:2] == ["width", "height"]:
            kind = "scatter"
        else:
            raise DataError(f"cannot infer plot kind from header {header}; use --kind")

    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "noisedesk"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "schedule":
        sigma_col = header.index("sigma") if "sigma" in header else 1
        ax.plot(table[:, 0], table[:, sigma_col])
        ax.set_yscale("log")
        ax.set_xlabel(header[0])
        ax.set_ylabel("sigma")
    elif kind == "loss":
        ax.plot(table[:, 0], table[:, 1])
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
    else:
        ax.scatter(table[:, 0], table[:, 1], s=4)
        ax.set_xlabel(header[0])
        ax.set_ylabel(header[1])
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(args.output, format="svg", metadata={"Date": None})
    plt.close(fig)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="noisedesk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="emit a sigma table as CSV")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=0.00085)
    p.add_argument("--beta-end", type=float, default=0.012)
    p.add_argument("--ztsnr", action="store_true")
    p.add_argument("--clamp", type=float, default=DEFAULT_TERMINAL_CLAMP)
    p.add_argument("--inference-steps", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_schedule)

    buckets = sub.add_parser("buckets", help="bucket layout, assignment, epoch plans")
    bsub = buckets.add_subparsers(dest="subcommand", required=True)

    p = bsub.add_parser("generate", help="emit the bucket layout as CSV")
    p.add_argument("--max-area", type=int, default=bucketing.DEFAULT_MAX_AREA)
    p.add_argument("--max-dim", type=int, default=bucketing.DEFAULT_MAX_DIM)
    p.add_argument("--step", type=int, default=bucketing.DEFAULT_STEP)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_buckets_generate)

    p = bsub.add_parser("assign", help="annotate a manifest with bucket indices")
    p.add_argument("--manifest", required=True)
    p.add_argument("--prune-threshold", type=float,
                   default=bucketing.DEFAULT_PRUNE_THRESHOLD)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_buckets_assign)

    p = bsub.add_parser("plan", help="emit one epoch of batches as JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--world-size", type=int, default=1)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prune-threshold", type=float,
                   default=bucketing.DEFAULT_PRUNE_THRESHOLD)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_buckets_plan)

    st = sub.add_parser("stats", help="streaming channel statistics")
    ssub = st.add_subparsers(dest="subcommand", required=True)

    p = ssub.add_parser("welford", help="accumulate stats over tensor files")
    p.add_argument("tensors", nargs="+")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_stats_welford)

    p = ssub.add_parser("normalize", help="apply a stats CSV to a tensor file")
    p.add_argument("--stats", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None, help="default: rewrite input in place")
    p.set_defaults(func=_cmd_stats_normalize)

    p = sub.add_parser("train-toy", help="train the toy denoiser from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("sample-toy", help="sample a trained toy model to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int, default=28)
    p.add_argument("--ztsnr", action=argparse.BooleanOptionalAction, default=None,
                   help="default: follow the model's training schedule")
    p.add_argument("--cfg", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--trace", default=None,
                   help="also write per-step mean denoised estimates to this CSV")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_sample_toy)

    p = sub.add_parser("demo-ztsnr", help="run the paired mean-bias experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-steps", type=int, default=5000)
    p.add_argument("--samples", type=int, default=8192)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_demo_ztsnr)

    p = sub.add_parser("plot", help="render an emitted CSV as a standalone SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", choices=("schedule", "loss", "scatter"), default=None)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
