"""Command-line entry point: ``pivotrl {train,eval,sweep,transfer,plot}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments, nets, plotting
from .config import ConfigError, ExperimentConfig, load_config


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.experiment.output_dir)


def _load_policy(path):
    model = nets.load_checkpoint(path)
    if not isinstance(model, nets.GaussianPolicy):
        raise nets.CheckpointError(f"{path}: checkpoint does not hold a policy")
    return model


def cmd_train(args):
    cfg = _config(args)
    if args.iterations is not None:
        cfg = cfg.override("experiment", n_iterations=args.iterations)
    out = _out_dir(args, cfg)
    res = experiments.train(cfg, out)
    print(f"wrote {res.curve_path} and {res.checkpoint_path}")
    print(f"best validation success {res.best_validation:.3f}")


def cmd_eval(args):
    cfg = _config(args)
    policy = _load_policy(args.checkpoint)
    res = experiments.evaluate(policy, cfg, args.trials, args.friction_multiplier,
                               True if args.idealized else None)
    out = _out_dir(args, cfg)
    traces, summary = experiments.write_eval(res, cfg, out, checkpoint=str(args.checkpoint))
    print(f"success rate {res.success_rate:.3f} over {res.n_trials} trials")
    print(f"wrote {traces} and {summary}")


def cmd_sweep(args):
    cfg = _config(args)
    policy = _load_policy(args.checkpoint)
    out = _out_dir(args, cfg)
    table = experiments.friction_sweep(policy, cfg, args.multipliers, args.trials, out)
    for m, r in table:
        print(f"multiplier {m:g}: success {r.success_rate:.3f}")
    print(f"wrote {out / 'sweep.csv'}")


def cmd_transfer(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    res = experiments.transfer_study(cfg, out, n_trials=args.trials)
    for (p, e), r in res.matrix.items():
        print(f"policy {p} on {e}: {r.success_rate:.3f}")
    print(f"wrote {out / 'transfer.csv'}")


def cmd_plot(args):
    for path in plotting.render(args.csv, args.out):
        print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pivotrl", description="Tool-pivoting simulator and TRPO trainer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI experiment config (defaults when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output directory (default: [experiment] output_dir)")

    sp = sub.add_parser("train", help="train a policy with TRPO")
    common(sp)
    sp.add_argument("--iterations", type=int, help="override n_iterations")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint with mean actions")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--friction-multiplier", type=float, default=1.0)
    sp.add_argument("--idealized", action="store_true", help="evaluate with idealized actuation")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="success rate across friction multipliers")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--multipliers", type=float, nargs="+")
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("transfer", help="idealized vs modeled actuation transfer study")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("plot", help="render a CSV from any other command")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out", required=True, help="image (.png/.pdf/.svg) or summary .csv")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, nets.CheckpointError, ValueError, OSError) as exc:
        print(f"pivotrl: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
