#!/usr/bin/env python3
"""
Command-line entry point for the RedApt pipeline.

Subcommands:
    flops   closed-form FLOPs / memory report (batch 1), optional ratio tables
    bench   throughput and peak-allocation benchmark, optional batch sweep
    search  backward selection of RedApt positions
    ablate  toy-task run per RedApt ablation row
    train   toy-task training with metrics CSV and checkpoint

Usage:
    redapt flops --config w2v2-large --positions 15,18,19 --calibrate
    redapt bench --config desk --positions 2 --batch 4 --raw-len 16000
    redapt search --config desk --start 2,4,6 --evaluator toy --steps 50
    redapt train --config desk --train-config configs/train.yaml --steps 500

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import logging
import sys
from dataclasses import replace

from redapt.bench.harness import batch_sweep, run_bench
from redapt.cost.model import calibrate_fe_share, estimate, flops_ratio_fn, ratio_frame, ratio_table
from redapt.io.config import config_digest, load_augment_policy, load_encoder_config, load_train_config
from redapt.io.reports import results_path, write_csv, write_json, write_jsonl
from redapt.nn.encoder import as_positions
from redapt.nn.redapt_block import param_count
from redapt.presets import (
    CALIBRATION_FLOPS_RATIO,
    CALIBRATION_POSITIONS,
    MEASUREMENT_RAW_SAMPLES,
    SEARCH_START,
    TABLE_COMP_POSITIONS,
    TABLE_POSITION_CONFIGS,
)
from redapt.search.backward_selection import ConstantEvaluator, backward_select, buckets_for, trace_records
from redapt.search.evaluators import ToyTaskEvaluator
from redapt.training.checkpoint import save_checkpoint
from redapt.training.optim import OptimizerConfig
from redapt.training.toy import ToyTaskConfig, train_toy
from redapt.utils.errors import RedAptError
from redapt.utils.logging import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

ABLATION_ROWS = (
    ('full', {}),
    ('no_second_cnn', {'enable_second_cnn': False}),
    ('no_layernorm', {'enable_layernorm': False}),
    ('no_gelu', {'enable_gelu': False}),
)

TABLES = {'comp': [()] + TABLE_COMP_POSITIONS, 'position': TABLE_POSITION_CONFIGS}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; usage problems are exit 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _positions_arg(text):
    try:
        return as_positions(text)
    except (ValueError, RedAptError) as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='desk',
                        help='Preset name (desk, w2v2-large, w2v2-large-adaptor) or YAML/JSON encoder config')
    common.add_argument('--positions', type=_positions_arg, default=None,
                        help="RedApt positions, e.g. '13,15,20' ('' for none); overrides the config")
    common.add_argument('--raw-len', type=int, default=None,
                        help=f'Raw waveform length in samples (default {MEASUREMENT_RAW_SAMPLES})')
    common.add_argument('--seed', type=int, default=0, help='Seed for weights, data and dropout')
    common.add_argument('--out', default='results', help='Results directory')
    common.add_argument('--run-name', default=None, help='Sub-directory under <out>/<command>/')
    common.add_argument('--log-file', default=None, help='Also log to this file')
    common.add_argument('--verbose', action='store_true', help='DEBUG logging')
    common.add_argument('--progress', action='store_true', help='Show progress bars')

    parser = _Parser(prog='redapt', description='RedApt reducer-adaptor pipeline')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('flops', parents=[common], help='Closed-form cost report')
    p.add_argument('--calibrate', action='store_true',
                   help=f'Calibrate the feature-extractor FLOPs share at {list(CALIBRATION_POSITIONS)} '
                        f'-> {CALIBRATION_FLOPS_RATIO}')
    p.add_argument('--fe-share', type=float, default=None, help='Explicit feature-extractor FLOPs scale')
    p.add_argument('--table', choices=sorted(TABLES), default=None, help='Also write a ratio table')

    p = sub.add_parser('bench', parents=[common], help='Throughput / peak allocation benchmark')
    p.add_argument('--batch', type=int, default=1)
    p.add_argument('--batch-sizes', type=_int_list, default=None, help='Sweep, e.g. 1,2,4,8')
    p.add_argument('--warmup', type=int, default=1)
    p.add_argument('--iters', type=int, default=5)
    p.add_argument('--allow-large', action='store_true', help='Bypass the model size cap')

    p = sub.add_parser('search', parents=[common], help='Backward selection of positions')
    p.add_argument('--start', type=_positions_arg, default=None,
                   help=f'Start configuration (default {list(SEARCH_START)} at 24 layers, else the config positions)')
    p.add_argument('--evaluator', choices=['toy', 'constant'], default='toy')
    p.add_argument('--metric', choices=['neg_loss', 'accuracy'], default='neg_loss')
    p.add_argument('--steps', type=int, default=50, help='Toy training steps per evaluation')
    p.add_argument('--max-rounds', type=int, default=10)
    p.add_argument('--workers', type=int, default=1)

    p = sub.add_parser('ablate', parents=[common], help='Toy-task run per ablation row')
    p.add_argument('--steps', type=int, default=100)

    p = sub.add_parser('train', parents=[common], help='Toy-task training')
    p.add_argument('--train-config', default=None, help='YAML with optimizer:/task:/run: sections')
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--augment', default=None, help='YAML with an augment: section')
    p.add_argument('--freeze-head', action='store_true')
    p.add_argument('--checkpoint-dtype', choices=['f64', 'f32'], default='f64')
    return parser


def _out(args, filename):
    command = args.command if args.run_name is None else f"{args.command}/{args.run_name}"
    return results_path(args.out, command, filename)


def _encoder(args):
    return load_encoder_config(args.config, positions=args.positions)


def cmd_flops(args):
    cfg = _encoder(args)
    raw = args.raw_len or MEASUREMENT_RAW_SAMPLES
    fe_share = 1.0
    if args.calibrate:
        fe_share = calibrate_fe_share(cfg, CALIBRATION_POSITIONS, CALIBRATION_FLOPS_RATIO, raw_samples=raw)
    if args.fe_share is not None:
        fe_share = args.fe_share
    report = estimate(cfg, raw_samples=raw, batch=1, fe_share=fe_share)
    write_csv(report.to_frame(), _out(args, 'cost.csv'))
    write_json({**report.to_dict(), 'config_digest': config_digest(cfg)}, _out(args, 'cost.json'))
    logger.info(
        f"positions {cfg.positions}: {report.total_flops / 1e9:.2f} GFLOPs, "
        f"flops ratio {report.flops_ratio:.3f}, memory ratio {report.memory_ratio:.3f}"
    )
    if args.table:
        rows = ratio_table(cfg, TABLES[args.table], raw_samples=raw, batch=1, fe_share=fe_share)
        write_csv(ratio_frame(rows), _out(args, f"ratios_{args.table}.csv"))
    return report


def cmd_bench(args):
    cfg = _encoder(args)
    raw = args.raw_len or MEASUREMENT_RAW_SAMPLES
    if args.batch_sizes:
        frame = batch_sweep(cfg, args.batch_sizes, raw_samples=raw, warmup=args.warmup, iters=args.iters,
                            seed=args.seed, allow_large=args.allow_large, progress=args.progress)
        write_csv(frame, _out(args, 'batch_sweep.csv'))
        return frame
    report = run_bench(cfg, batch=args.batch, raw_samples=raw, warmup=args.warmup, iters=args.iters,
                       seed=args.seed, allow_large=args.allow_large)
    write_json(report.to_dict(), _out(args, 'bench.json'))
    return report


def cmd_search(args):
    cfg = _encoder(args)
    raw = args.raw_len or MEASUREMENT_RAW_SAMPLES
    start = args.start
    if start is None:
        start = as_positions(SEARCH_START) if cfg.layers == 24 else cfg.positions
    start.check_layers(cfg.layers)
    if args.evaluator == 'constant':
        evaluator = ConstantEvaluator()
    else:
        evaluator = ToyTaskEvaluator(cfg, steps=args.steps, seed=args.seed, metric=args.metric)
    best, trace = backward_select(
        tuple(start), evaluator, flops_ratio_fn(cfg, raw_samples=raw), max_rounds=args.max_rounds,
        buckets=buckets_for(cfg.layers), workers=args.workers, progress=args.progress,
    )
    write_jsonl(trace_records(trace), _out(args, 'trace.jsonl'))
    write_json(
        {'start': list(start), 'best': list(best), 'evaluations': len(trace), 'evaluator': args.evaluator},
        _out(args, 'search.json'),
    )
    logger.info(f"search finished at {list(best)} after {len(trace)} evaluations")
    return best, trace


def cmd_ablate(args):
    cfg = _encoder(args)
    base_digest = config_digest(cfg)
    rows = []
    for label, flags in ABLATION_ROWS:
        variant = replace(cfg, redapt=replace(cfg.redapt, **flags))
        history, _ = train_toy(variant, OptimizerConfig(), args.steps, args.seed, progress=args.progress)
        final = history.iloc[-1]
        rows.append({
            'row': label,
            'config_digest': config_digest(variant),
            'redapt_params': param_count(variant.redapt),
            'final_loss': float(final['loss']),
            'final_accuracy': float(final['accuracy']),
        })
        logger.info(f"ablation {label}: loss {final['loss']:.4f}, accuracy {final['accuracy']:.3f}")
    write_csv(rows, _out(args, 'ablation.csv'))
    write_jsonl(rows, _out(args, 'ablation.jsonl'))
    write_json({'base_config_digest': base_digest, 'rows': rows}, _out(args, 'ablation.json'))
    return rows


def cmd_train(args):
    cfg = _encoder(args)
    opt, task, run = OptimizerConfig(), ToyTaskConfig(), {}
    if args.train_config:
        opt, task, run = load_train_config(args.train_config)
    if args.raw_len:
        task = replace(task, duration_s=args.raw_len / task.sample_rate)
    steps = args.steps if args.steps is not None else int(run.get('steps', 500))
    policy = load_augment_policy(args.augment) if args.augment else None
    history, ckpt = train_toy(cfg, opt, steps, args.seed, task=task, freeze_head=args.freeze_head,
                              augment_policy=policy, progress=args.progress)
    write_csv(history, _out(args, 'metrics.csv'))
    write_jsonl(history.to_dict('records'), _out(args, 'metrics.jsonl'))
    save_checkpoint(ckpt, _out(args, 'checkpoint.rapt'), dtype=args.checkpoint_dtype)
    return history, ckpt


COMMANDS = {
    'flops': cmd_flops,
    'bench': cmd_bench,
    'search': cmd_search,
    'ablate': cmd_ablate,
    'train': cmd_train,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    setup_logging(log_file=args.log_file, level=logging.DEBUG if args.verbose else logging.INFO)
    logger.info(f"redapt {args.command} (config={args.config}, seed={args.seed})")
    try:
        COMMANDS[args.command](args)
    except RedAptError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed with an unexpected error: {e}")
        return EXIT_RUNTIME
    logger.info(f"redapt {args.command} done")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
