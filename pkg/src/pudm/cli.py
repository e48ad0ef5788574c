"""Command-line entry point: ``pudm <subcommand> [options]``.

Option values resolve in order: explicit flag, ``--config`` file, built-in
default. ``--seed`` additionally falls back to ``PUDM_SEED`` before the default.
Exit status: 0 success, 1 usage or validation error, 2 runtime failure.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import geometry, harness
from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .errors import ValidationError
from .io import atomic_write, cloud_format, read_cloud, write_cloud
from .network import PRESETS, preset
from .sampling import SamplerConfig, upsample
from .schedule import build_schedule, make_stride_plan
from .training import SamplePair, TrainingConfig, train

log = logging.getLogger("pudm")

SEED_ENV = "PUDM_SEED"


def _list_of(conv):
    def parse(value):
        if isinstance(value, (list, tuple)):
            items = list(value)
        else:
            items = [v for v in str(value).split(",") if v.strip()]
        try:
            return [conv(v.strip() if isinstance(v, str) else v) for v in items]
        except (TypeError, ValueError):
            raise ValidationError(f"cannot parse {value!r} as a list of {conv.__name__}") from None

    parse.__name__ = f"list[{conv.__name__}]"
    return parse


def _choice(*allowed):
    def parse(value):
        if value not in allowed:
            raise ValidationError(f"{value!r} is not one of {list(allowed)}")
        return value

    parse.__name__ = "choice"
    return parse


ints, floats, strs = _list_of(int), _list_of(float), _list_of(str)
PRESET = _choice(*PRESETS)

SCHEDULE_OPTS = {
    "timesteps": (int, 1000, "number of diffusion steps T"),
    "beta_min": (float, 1e-4, "first beta"),
    "beta_max": (float, 0.02, "last beta"),
}
DATA_OPTS = {
    "shapes": (strs, ["sphere", "torus", "box"], "comma-separated shape kinds"),
    "pairs": (int, 10, "number of synthetic pairs"),
    "sparse_n": (int, 64, "points per sparse cloud"),
    "rates": (ints, [4], "comma-separated upsampling rates"),
    "data_seed": (int, 1, "seed of the synthetic data"),
}
SAMPLER_OPTS = {
    "interval": (int, 1, "sampling stride"),
    "gamma": (float, 0.5, "reverse-step scale factor"),
    "sigma": (_choice("posterior", "beta"), "posterior", "noise scale of the reverse step"),
    "guidance": (_choice("literal", "denoised"), "literal", "how gamma treats the interpolated cloud"),
    "midpoint_k": (int, 8, "neighbours used by midpoint interpolation"),
}

COMMANDS = {
    "schedule": (
        "print schedule tables as CSV, or a strided step plan with --interval",
        {
            "preset": (PRESET, None, "take T from a preset"),
            **SCHEDULE_OPTS,
            "interval": (int, None, "print the strided plan for this interval"),
            "output": (str, None, "write to this file instead of stdout"),
        },
    ),
    "train": (
        "train a model on synthetic pairs (or --data files) and save a checkpoint",
        {
            "preset": (PRESET, "desk", "network preset"),
            "steps": (int, 2000, "optimizer steps"),
            "batch_size": (int, 8, "pairs per step"),
            "lr": (float, 1e-3, "learning rate"),
            "alpha_weight": (float, 1.0, "weight of the conditional reconstruction loss"),
            **SCHEDULE_OPTS,
            "midpoint_k": (int, 8, "neighbours used by midpoint interpolation"),
            **{**DATA_OPTS, "pairs": (int, 50, "number of synthetic pairs"), "data_seed": (int, 0, "seed of the synthetic data")},
            "data": (strs, None, "comma-separated sparse.xyz:dense.xyz pairs instead of synthetic data"),
            "checkpoint": (str, None, "output checkpoint path (required)"),
            "trace": (str, None, "loss trace CSV path"),
        },
    ),
    "upsample": (
        "upsample one point cloud file",
        {
            "input": (str, None, "sparse cloud (.xyz or .ply, required)"),
            "output": (str, None, "output cloud (.xyz or .ply, required)"),
            "checkpoint": (str, None, "trained checkpoint (required)"),
            "rate": (int, None, "upsampling rate (required)"),
            **SAMPLER_OPTS,
        },
    ),
    "eval": (
        "score a checkpoint on held-out synthetic pairs",
        {
            "checkpoint": (str, None, "trained checkpoint (required)"),
            **DATA_OPTS,
            **SAMPLER_OPTS,
            "output": (str, None, "report CSV path"),
        },
    ),
    "baseline": (
        "score the midpoint-interpolation and white-noise baselines",
        {
            **DATA_OPTS,
            "midpoint_k": (int, 8, "neighbours used by midpoint interpolation"),
            "output_dir": (str, None, "directory for midpoint.csv and noise.csv"),
        },
    ),
    "sweep": (
        "noise-level or rate sweep with CSV reports, a manifest and a plot",
        {
            "checkpoint": (str, None, "trained checkpoint (required)"),
            "kind": (_choice("noise", "rate"), "noise", "what to sweep"),
            "taus": (floats, [0.0, 0.01, 0.02, 0.05, 0.1], "noise levels"),
            "noise": (_choice("gaussian", "uniform"), "gaussian", "perturbation distribution"),
            **{**DATA_OPTS, "rates": (ints, [4], "rates (the rate sweep visits each)")},
            **SAMPLER_OPTS,
            "output_dir": (str, None, "output directory (required)"),
        },
    ),
    "gradcheck": (
        "finite-difference check of every gradient",
        {"preset": (PRESET, "desk", "network preset")},
    ),
}

REQUIRED = {
    "train": ("checkpoint",),
    "upsample": ("input", "output", "checkpoint", "rate"),
    "eval": ("checkpoint",),
    "sweep": ("checkpoint", "output_dir"),
}


class UsageParser(argparse.ArgumentParser):
    """Usage errors go to stderr with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _show(value):
    return ",".join(map(str, value)) if isinstance(value, (list, tuple)) else value


def build_parser():
    parser = UsageParser(prog="pudm", description="Diffusion-based point cloud upsampling.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, help=f"random seed (falls back to ${SEED_ENV}, then 0)")
        p.add_argument("--config", help="YAML or JSON file of option values")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key, (_, default, h) in opts.items():
            flag = "--T" if key == "timesteps" else "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=str, help=h if default is None else f"{h} (default: {_show(default)})")
    return parser


def read_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"config {path} is not valid: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValidationError(f"config {path} must be a mapping of option names to values")
    return doc


def resolve(command, explicit):
    """Merge defaults, config file and explicit flags; validate every key."""
    opts = COMMANDS[command][1]
    config = read_config(explicit.pop("config")) if "config" in explicit else {}
    known = set(opts) | {"seed"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise ValidationError(f"unknown config keys for {command!r}: {unknown}")
    merged = {}
    for key, (conv, default, _) in opts.items():
        if key in explicit or key in config:
            raw = explicit.get(key, config.get(key))
            try:
                merged[key] = None if raw is None else conv(raw)
            except (TypeError, ValueError):
                raise ValidationError(f"--{key.replace('_', '-')}: cannot parse {raw!r} as {conv.__name__}") from None
        else:
            merged[key] = default
    if "seed" in explicit:
        merged["seed"] = explicit["seed"]
    elif "seed" in config:
        merged["seed"] = int(config["seed"])
    elif os.environ.get(SEED_ENV, "").strip():
        try:
            merged["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(f"${SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer") from None
    else:
        merged["seed"] = 0
    missing = [k for k in REQUIRED.get(command, ()) if merged.get(k) is None]
    if missing:
        raise ValidationError(f"{command}: missing required option(s) " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return merged


def _emit(text, output):
    if output is None:
        sys.stdout.write(text)
    else:
        with atomic_write(output) as fh:
            fh.write(text)


def _sampler(o):
    return SamplerConfig(
        gamma=o["gamma"], interval=o["interval"], seed=o["seed"], sigma=o["sigma"], guidance=o["guidance"], midpoint_k=o["midpoint_k"]
    )


def _load(path):
    if not Path(path).is_file():
        raise ValidationError(f"checkpoint {path} does not exist")
    model, _, extra = load_checkpoint(path)
    sched = extra.get("schedule", {})
    schedule = build_schedule(sched.get("timesteps", model.config.timesteps), sched.get("beta_min", 1e-4), sched.get("beta_max", 0.02))
    return model, schedule, extra


def _data(o):
    for kind in o["shapes"]:
        harness.ShapeSpec(kind).resolved()
    return harness.synthetic_pairs(o["shapes"], o["sparse_n"], o["rates"], o["pairs"], seed=o["data_seed"])


def _print_report(title, report):
    print(title)
    print(f"{'sample':>20s} {'CD':>10s} {'HD':>10s} {'P2F':>10s}   (x1e-3)")
    for name, cd, hd, p in report.table():
        print(f"{name:>20s} {cd:10.4f} {hd:10.4f} {p:10.4f}")


def cmd_schedule(o):
    if o["preset"] is not None:
        o["timesteps"] = preset(o["preset"]).timesteps
    sched = build_schedule(o["timesteps"], o["beta_min"], o["beta_max"])
    if o["interval"] is not None:
        plan = make_stride_plan(sched.T, o["interval"])
        lines = [
            f"T {sched.T}",
            f"interval {plan.interval}",
            f"terminal_distance {plan.terminal_distance}",
            f"network_calls {plan.network_calls}",
            "steps " + " ".join(str(t) for t in plan.timesteps),
        ]
        _emit("\n".join(lines) + "\n", o["output"])
        return 0
    rows = ["t,beta,alpha,alpha_bar,posterior_var"]
    rows += [",".join([str(t)] + [repr(float(v)) for v in vals]) for t, *vals in sched.rows()]
    _emit("\n".join(rows) + "\n", o["output"])
    return 0


def _file_pairs(specs):
    pairs = []
    for spec in specs:
        if spec.count(":") != 1:
            raise ValidationError(f"--data entry {spec!r} must look like sparse.xyz:dense.xyz")
        sparse, dense = (read_cloud(p) for p in spec.split(":"))
        if len(dense) % len(sparse):
            raise ValidationError(f"{spec}: dense size {len(dense)} is not a multiple of sparse size {len(sparse)}")
        _, rec = geometry.normalize(sparse)
        pairs.append(SamplePair(rec.apply(sparse), rec.apply(dense), len(dense) // len(sparse), rec.apply(dense), spec))
    return pairs


def cmd_train(o):
    cfg = TrainingConfig(
        alpha_weight=o["alpha_weight"],
        lr=o["lr"],
        batch_size=o["batch_size"],
        steps=o["steps"],
        seed=o["seed"],
        timesteps=o["timesteps"],
        beta_min=o["beta_min"],
        beta_max=o["beta_max"],
        preset=o["preset"],
        midpoint_k=o["midpoint_k"],
    )
    cfg.schedule()
    net = preset(cfg.preset)
    if net.timesteps != cfg.timesteps:
        net = type(net)(**{**net.to_dict(), "timesteps": cfg.timesteps})
    pairs = _file_pairs(o["data"]) if o["data"] else _data(o)
    too_small = [p.name for p in pairs if len(p.c) < net.knn_k or len(p.c) < net.min_points]
    if too_small:
        raise ValidationError(f"sparse clouds too small for preset {cfg.preset!r}: {too_small[:3]}")
    every = max(1, cfg.steps // 20)

    def progress(step, sums):
        if step % every == 0 or step == cfg.steps:
            log.info("step %d total %.5f l_theta %.5f l_psi %.5f", step, *sums)

    result = train(pairs, cfg, callback=progress, network=net)
    extra = {
        "preset": cfg.preset,
        "schedule": {"timesteps": cfg.timesteps, "beta_min": cfg.beta_min, "beta_max": cfg.beta_max},
        "training": asdict(cfg),
        "rates": sorted({p.rate for p in pairs}),
    }
    if o["trace"]:
        with atomic_write(o["trace"]) as fh:
            result.write_trace(fh)
    save_checkpoint(result.model, o["checkpoint"], extra)
    _, total, lt, lp = result.trace[-1]
    print(f"trained {cfg.steps} steps on {len(pairs)} pairs; final total {total:.6f} (l_theta {lt:.6f}, l_psi {lp:.6f})")
    print(f"checkpoint {o['checkpoint']} sha256 {file_sha256(o['checkpoint'])}")
    return 0


def cmd_upsample(o):
    cloud = read_cloud(o["input"])
    cloud_format(o["output"])
    model, schedule, _ = _load(o["checkpoint"])
    info = {}
    out = upsample(cloud, o["rate"], model, schedule, _sampler(o), info=info)
    write_cloud(out, o["output"])
    print(f"wrote {len(out)} points to {o['output']} ({info['network_calls']} network calls)")
    return 0


def cmd_eval(o):
    model, schedule, _ = _load(o["checkpoint"])
    pairs = _data(o)
    report, _ = harness.evaluate_model(model, pairs, schedule, _sampler(o))
    _print_report(f"model {o['checkpoint']}", report)
    if o["output"]:
        with atomic_write(o["output"]) as fh:
            report.write_csv(fh)
    return 0


def cmd_baseline(o):
    pairs = _data(o)
    reports = {
        "midpoint": harness.baseline_midpoint_eval(pairs, k=o["midpoint_k"]),
        "noise": harness.baseline_noise_eval(pairs, seed=o["seed"]),
    }
    for name, rep in reports.items():
        _print_report(f"{name} baseline", rep)
    if o["output_dir"]:
        out = Path(o["output_dir"])
        for name, rep in reports.items():
            with atomic_write(out / f"{name}.csv") as fh:
                rep.write_csv(fh)
    return 0


def cmd_sweep(o):
    model, schedule, extra = _load(o["checkpoint"])
    sampler = _sampler(o)
    out = Path(o["output_dir"])
    if o["kind"] == "noise":
        if any(t < 0 for t in o["taus"]):
            raise ValidationError("noise levels must be >= 0")
        pairs = _data(o)
        reports = harness.noise_sweep(model, pairs, o["taus"], o["noise"], schedule, sampler, seed=o["seed"])
        stem, xlabel = f"noise_{o['noise']}", "tau"
    else:
        by_rate = {r: _data({**o, "rates": [r]}) for r in o["rates"]}
        reports = harness.rate_sweep(model, by_rate, schedule, sampler)
        stem, xlabel = "rate", "rate"
    harness.write_reports(reports, out, stem)
    harness.write_manifest(
        out / "manifest.json",
        preset=extra.get("preset"),
        seed=o["seed"],
        checkpoint_sha256=file_sha256(o["checkpoint"]),
        tau_grid=o["taus"] if o["kind"] == "noise" else None,
        rate=o["rates"],
        kind=o["kind"],
        noise=o["noise"] if o["kind"] == "noise" else None,
        interval=o["interval"],
        data_seed=o["data_seed"],
    )
    harness.plot_curves(reports, out / f"{stem}.png", xlabel)
    for key, rep in reports.items():
        _print_report(f"{xlabel} = {key}", rep)
    return 0


def cmd_gradcheck(o):
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(o["preset"], seed=o["seed"])
    for r in results:
        print(f"{'ok' if r.passed else 'FAIL':4s} {r.rel_error:.3e} {r.name}")
    bad = [r for r in results if not r.passed]
    worst = max(r.rel_error for r in results)
    print(f"{len(results) - len(bad)}/{len(results)} checks below {TOLERANCE:g} (worst {worst:.3e})")
    return 0 if not bad else 2


HANDLERS = {
    "schedule": cmd_schedule,
    "train": cmd_train,
    "upsample": cmd_upsample,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("pudm: error: a subcommand is required\n")
        return 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        opts = resolve(args.command, explicit)
        return HANDLERS[args.command](opts)
    except ValidationError as exc:
        sys.stderr.write(f"pudm {args.command}: error: {exc}\n")
        return 1
    except BrokenPipeError:
        # reader closed stdout early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"pudm {args.command}: failed: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
