"""Command-line driver.

    msol train CONFIG [--out DIR] [--print-config]
    msol transfer CONFIG --prior CKPT [--out DIR]
    msol eval CKPT --task I [--episodes N]
    msol plot LOG... --out FILE.svg
    msol inspect-taxi CKPT --out FILE.svg
    msol run-experiment PROTOCOL [--seeds N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
``MSOL_LOG_LEVEL`` sets the log verbosity (default INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import tomli

from . import config as config_mod
from .errors import ConfigError, NumericError, UsageError

log = logging.getLogger("msol")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load_config(args) -> config_mod.RunConfig:
    base = config_mod.preset(args.preset) if getattr(args, "preset", None) else None
    if args.config:
        cfg = config_mod.load(args.config, base)
    else:
        cfg = base or config_mod.RunConfig()
    for item in getattr(args, "set", None) or []:
        cfg = _override(cfg, item)
    return cfg


def _override(cfg, item: str):
    """Apply one ``section.key=value`` override, value parsed as TOML."""
    key, sep, raw = item.partition("=")
    section, dot, name = key.partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return config_mod.from_dict({section: {name: value}}, cfg)


def _print_config(cfg) -> None:
    sys.stdout.write(config_mod.resolved(cfg))


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _load_config(args)
    if args.print_config:
        _print_config(cfg)
        return EXIT_OK
    out = Path(args.out or cfg.trainer.out_dir or "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, out / "config.toml")
    result = train(cfg, out_dir=out, metrics_path=out / "metrics.jsonl")
    last = result.records[-1] if result.records else {}
    log.info("done: %s (last returns %s)", out / "final.npz", last.get("returns"))
    return EXIT_OK


def cmd_transfer(args) -> int:
    from .policy import load_policy, save_policy
    from .trainer import resolve_tasks
    from .transfer import transfer_train

    cfg = _load_config(args)
    if args.print_config:
        _print_config(cfg)
        return EXIT_OK
    tc = cfg.transfer
    prior = None
    if tc.variant != "flat":
        if not args.prior:
            raise UsageError(f"variant {tc.variant!r} needs --prior")
        prior = load_policy(args.prior)[0]
    tasks = resolve_tasks(cfg.env.family, tc.layout or cfg.env.layout, tc.tasks)
    out = Path(args.out or "runs/transfer")
    out.mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, out / "config.toml")
    result = transfer_train(prior, tasks, tc.variant, cfg, seed=cfg.trainer.seed,
                            metrics_path=out / "metrics.jsonl")
    save_policy(out / "final.npz", result.prior, result.posterior,
                {"tasks": [t.label for t in tasks], "variant": tc.variant,
                 "family": cfg.env.family, "layout": tasks[0].layout,
                 "last_action": tc.variant == "distral+action"})
    summary = {"variant": tc.variant, "auc": result.auc, "curve": result.curve,
               "evaluation": result.evaluation}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    log.info("transfer %s: auc %.3f", tc.variant, result.auc)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .policy import load_policy
    from .trainer import resolve_tasks
    from .transfer import evaluate_policy

    prior, posterior, manifest = load_policy(args.checkpoint)
    if posterior is None:
        raise UsageError(f"{args.checkpoint} holds no posteriors")
    extra = manifest.get("extra", {})
    labels = extra.get("tasks") or []
    if not 0 <= args.task < posterior.n_tasks:
        raise UsageError(f"--task must be in 0..{posterior.n_tasks - 1}")
    family = extra.get("family")
    if family is None:
        raise UsageError(f"{args.checkpoint} does not record its task family")
    label = labels[args.task]
    pool = resolve_tasks(family, extra.get("layout"), [0, 1] if family == "bandits" else None)
    task = next(t for t in pool if t.label == label)
    res = evaluate_policy(posterior, prior, args.task, task, args.episodes, args.seed,
                          greedy=not args.sample, last_action=extra.get("last_action", False))
    print(json.dumps({"task": label, "mean_return": res["mean_return"], "success_rate": res["success_rate"]}))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import collect_series, plot_curves

    labels = args.label or []
    if labels and len(labels) != len(args.logs):
        raise UsageError("give one --label per log or none")
    inputs = [(labels[i] if labels else Path(p).stem, p) for i, p in enumerate(args.logs)]
    out = plot_curves(collect_series(inputs), args.out, args.title)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_inspect_taxi(args) -> int:
    from .envs.layout import load_layout
    from .plotting import render_taxi_options
    from .policy import load_policy

    prior, _, manifest = load_policy(args.checkpoint)
    layout_name = args.layout or manifest.get("extra", {}).get("layout") or "taxi30"
    render_taxi_options(prior, load_layout(layout_name), args.out, floor=args.floor)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    from .transfer import run_experiment

    base = _load_config(args) if (args.config or args.preset or args.set) else None
    variants = tuple(args.variants.split(","))
    results = run_experiment(args.protocol, seeds=range(args.seeds), variants=variants, scale=args.scale,
                             base=base, out_dir=args.out, prior_path=args.prior)
    for variant, entry in results.items():
        print(f"{variant:15s} auc {_median(entry['auc']):8.3f}  final {_median(entry['final']):8.3f}")
    return EXIT_OK


def _median(values) -> float:
    import numpy as np

    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    return float(np.median(values)) if values.size else float("nan")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msol", description="Multitask soft option learning")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p, required=False):
        p.add_argument("config", nargs=None if required else "?", help="TOML run configuration")
        p.add_argument("--preset", choices=config_mod.PRESETS, help="start from a named preset")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("train", help="train a prior and posteriors on the configured tasks")
    config_args(p)
    p.add_argument("--out", help="output directory (checkpoints, metrics.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="learn new tasks with a frozen prior")
    config_args(p)
    p.add_argument("--prior", help="trained checkpoint (final.npz)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="evaluate one task's posterior")
    p.add_argument("checkpoint")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample", action="store_true", help="sample actions instead of acting greedily")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="median/std learning curves as SVG")
    p.add_argument("logs", nargs="+", help="metrics .jsonl files or experiment .json summaries")
    p.add_argument("--label", action="append", help="legend label per log (same label = one series)")
    p.add_argument("--title")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("inspect-taxi", help="draw each option prior on the taxi grid")
    p.add_argument("checkpoint")
    p.add_argument("--layout", help="layout name or file (default: from the checkpoint)")
    p.add_argument("--floor", type=float, default=0.3, help="hide arrows below this probability")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_taxi)

    p = sub.add_parser("run-experiment", help="train priors and compare transfer variants")
    p.add_argument("protocol")
    p.add_argument("config", nargs="?", help="TOML overriding the protocol's preset")
    p.add_argument("--preset", choices=config_mod.PRESETS)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--variants", default="msol,msol-frozen,flat")
    p.add_argument("--prior", help="reuse a trained checkpoint for the msol variants")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run_experiment)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MSOL_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "INFO",
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
