"""
Command line: ``python -m ibac <command> [options]``.

    gen      generate a synthetic dataset                (--config, --out, --seed)
    train    train a latent model on a dataset           (--config, --dataset)
    analyze  latent/action alignment of a checkpoint     (--checkpoint, --dataset)
    sweep    beta / offset sweep                         (--config)
    head     fit few-shot action heads                   (--checkpoint, --dataset, --head, --m)
    report   mean/std over seeds of a sweep              (--results)

Exit codes: 0 ok, 2 config/format/usage error, 3 training diverged,
4 some sweep cells failed.
"""
import argparse
import dataclasses
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.table import Table

from ibac.checkpoint import STATUS_OK, load_checkpoint, save_checkpoint
from ibac.config import HEAD_KINDS, RunConfig, SweepConfig, load_run_config, load_sweep_config
from ibac.envs.dataset import generate, load_dataset, save_dataset
from ibac.errors import ConfigError, FormatError, IbacError, SweepFailure
from ibac.experiment import (ALIGNMENT_STEM, HEADS_FILE, Experiment, analyze, fit_heads, prepare_dataset,
                             write_csv)
from ibac.heads import FewShotSplit
from ibac.logs import configure_logging, get_logger
from ibac.metrics.alignment import AlignmentReport, alignment_report
from ibac.models.base import LatentActionModel
from ibac import sweep as sweeps

logger = get_logger(__name__)
stdout = Console()

DATASET_FILE = "dataset.ibds"


def _run_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _out_dir(args, default) -> Path:
    return Path(args.out) if args.out else Path(default)


def _load_model(path):
    ckpt = load_checkpoint(path)
    if not isinstance(ckpt.obj, LatentActionModel):
        raise FormatError(f"{path}: holds a {ckpt.kind} head, not a latent model")
    if ckpt.status != STATUS_OK:
        logger.warning("%s: checkpoint status is %r", path, ckpt.status)
    config = RunConfig.from_dict(ckpt.config) if ckpt.config else RunConfig()
    return ckpt, config


def maxima_table(report: AlignmentReport, title: str) -> Table:
    table = Table(title=title)
    table.add_column("action channel")
    table.add_column("max |r|", justify="right")
    table.add_column("max I/H", justify="right")
    table.add_column("H (nats)", justify="right")
    for j in range(report.d_a):
        ratio = report.max_ratio_per_channel[j]
        table.add_row(f"a{j}", f"{report.max_pearson_per_channel[j]:.4f}",
                      "degenerate" if report.degenerate_channels[j] else f"{ratio:.4f}",
                      f"{report.entropy[j]:.4f}")
    table.add_row("mean", f"{report.mean_max_pearson:.4f}", f"{report.mean_max_ratio:.4f}", "")
    return table


def cmd_gen(args) -> int:
    config = _run_config(args)
    dataset = generate(config.env)
    path = save_dataset(dataset, _out_dir(args, config.run_dir) / DATASET_FILE)
    summary = dataset.summary()
    stdout.print(f"wrote {path}: N={summary['n']} d_obs={summary['d_obs']} d_a={summary['d_a']} "
                 f"k={summary['offset']}")
    return 0


def cmd_train(args) -> int:
    config = _run_config(args)
    experiment = Experiment(config, load_dataset(args.dataset), _out_dir(args, config.run_dir),
                            show_progress=not args.quiet)
    result = experiment.run()
    losses = result.final_losses
    if losses is not None:
        stdout.print(f"final losses: total={losses.total:.6g} rec={losses.rec:.6g} kl={losses.kl:.6g}")
    stdout.print(f"checkpoint: {experiment.checkpoint_path}")
    return 0


def cmd_analyze(args) -> int:
    ckpt, config = _load_model(args.checkpoint)
    dataset = prepare_dataset(load_dataset(args.dataset), config)
    if args.oracle_latents:
        report = alignment_report(dataset.actions, dataset.actions, config.binning)
        title = "alignment (oracle latents = actions)"
    else:
        report = analyze(ckpt.obj, dataset, config.binning)
        title = f"{ckpt.kind} alignment, k={config.offset}, beta={config.train.beta:g}"
    csv_path, json_path = report.save(_out_dir(args, Path(args.checkpoint).parent), ALIGNMENT_STEM)
    stdout.print(maxima_table(report, title))
    stdout.print(f"wrote {csv_path} and {json_path}")
    return 0


def parse_m(text: str, n: int, eval_fraction: float) -> List[int]:
    ms = []
    for part in text.split(","):
        part = part.strip()
        if part == "all":
            ms.append(FewShotSplit.labelable(n, eval_fraction))
            continue
        try:
            ms.append(int(part))
        except ValueError:
            raise ConfigError(f"--m: expected integers or 'all', got {part!r}")
    return ms


def cmd_head(args) -> int:
    ckpt, config = _load_model(args.checkpoint)
    head_config = config.head
    if args.seed is not None:
        head_config = dataclasses.replace(head_config, seed=args.seed).validate()
    dataset = prepare_dataset(load_dataset(args.dataset), config)
    ms = parse_m(args.m, len(dataset), head_config.eval_fraction) if args.m else [head_config.m]
    kinds = args.head or [head_config.kind]
    frame, heads = fit_heads(ckpt.obj, dataset, head_config, kinds, ms)

    out_dir = _out_dir(args, Path(args.checkpoint).parent)
    for (kind, m), head in heads.items():
        save_checkpoint(head, out_dir / f"head_{kind}_m{m}.ibac", config=config.to_dict(),
                        seed=head_config.seed, extra={"m": m, "latent_checkpoint": str(args.checkpoint)})
    path = write_csv(frame, out_dir / HEADS_FILE)

    table = Table(title=f"few-shot heads on {ckpt.kind} latents")
    for col in ("head", "M", "held-out mse", "index acc."):
        table.add_column(col, justify="right")
    for _, row in frame.iterrows():
        acc = "" if row["head"] != "index" else f"{row['index_accuracy']:.4f}"
        table.add_row(row["head"], str(row["m"]), f"{row['mse']:.6g}", acc)
    stdout.print(table)
    stdout.print(f"wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    config = load_sweep_config(args.config) if args.config else SweepConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, base=config.base.with_seed(args.seed)).validate()
    out_dir = _out_dir(args, config.base.run_dir)
    result = sweeps.run_sweep(config, out_dir, show_progress=not args.quiet)
    stdout.print(f"wrote {out_dir / sweeps.RESULTS_FILE} ({len(result.frame)} rows)")
    if result.failures:
        raise SweepFailure(f"{result.failures} of {len(result.frame)} sweep cells failed; see the status column")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out) / sweeps.REPORT_FILE if args.out else None
    frame = sweeps.report(args.results, out)
    stdout.print(f"aggregated {len(frame)} (kind, beta, k) groups from {args.results}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run or sweep config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed(s)")
    common.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    parser = argparse.ArgumentParser(prog="ibac", description="latent action capture experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a latent model")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", parents=[common], help="alignment report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle-latents", action="store_true", help="use the true actions as latents")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", parents=[common], help="run a beta / offset sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("head", parents=[common], help="fit few-shot action heads")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--head", action="append", choices=HEAD_KINDS, help="head kind, repeatable")
    p.add_argument("--m", help="labeled rows, e.g. 10,50,200 or all")
    p.set_defaults(func=cmd_head)

    p = sub.add_parser("report", parents=[common], help="aggregate a sweep CSV over seeds")
    p.add_argument("--results", required=True, help="sweep_results.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(quiet=args.quiet)
    try:
        return args.func(args)
    except IbacError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
