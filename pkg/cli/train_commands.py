"""train and ablate subcommands"""

import logging
import os
from dataclasses import replace

from cli.settings import add_setting
from errors import ValidationError
from network.checkpoint import load_training_checkpoint
from network.config import VARIANTS
from network.tvsrn import TVSRNv2
from services.metrics import format_reports
from services.pair_manager import PairManager
from services.trainer import build_training_data, run_ablation, train, write_loss_trace
from storage import atomic_write

logger = logging.getLogger(__name__)


def add_model_flags(p):
    add_setting(p, "--variant", "model.variant", "Network variant", choices=VARIANTS)
    add_setting(p, "--embed-dim", "model.embed_dim", "Channels per token", type=int)
    add_setting(p, "--heads", "model.heads", "Attention heads", type=int)
    add_setting(p, "--encoder-depth", "model.encoder_depth", "Encoder STL2 blocks", type=int)
    add_setting(p, "--n-fim", "model.n_fim", "Feature interaction modules", type=int)
    add_setting(p, "--window", "model.window", "Attention window length", type=int)
    add_setting(p, "--upsample", "model.upsample", "Depth upsampling factor r", type=int)


def add_train_flags(p):
    add_setting(p, "--data", "paths.data", "Directory of <stem>.thin/.thick.vsrv pairs, or a pairs.json manifest")
    add_setting(p, "--steps", "train.steps", "Optimization steps", type=int)
    add_setting(p, "--lr", "train.lr", "Adam learning rate", type=float)
    add_setting(p, "--batch-size", "train.batch_size", "Patch pairs per step", type=int)
    add_setting(p, "--seed", "train.seed", "Sampler seed", type=int)
    add_setting(p, "--patch-depth", "train.patch_depth", "Low-resolution patch depth", type=int)
    add_setting(p, "--patch-height", "train.patch_height", "Patch height", type=int)
    add_setting(p, "--patch-width", "train.patch_width", "Patch width", type=int)
    add_setting(p, "--real-only-steps", "train.real_only_steps", "Steps before pseudo pairs join", type=int)
    add_setting(p, "--use-pseudo", "train.use_pseudo", "Mix in pseudo low-resolution pairs", action="store_const", const=True)
    add_setting(p, "--no-flip", "train.flip", "Turn off the random horizontal flip", action="store_const", const=False)
    add_setting(p, "--log-interval", "train.log_interval", "Steps between loss log lines", type=int)


def register(subparsers):
    p = subparsers.add_parser("train", help="Train a model on thick/thin pairs")
    add_model_flags(p)
    add_train_flags(p)
    add_setting(p, "--checkpoint", "paths.checkpoint", "Checkpoint path")
    add_setting(p, "--checkpoint-interval", "train.checkpoint_interval", "Steps between checkpoints (0: final only)", type=int)
    add_setting(p, "--validation-interval", "train.validation_interval", "Steps between validation runs (0: never)", type=int)
    p.add_argument("--resume", default=None, help="Resume from this checkpoint (default: %(default)s)")
    p.add_argument("--trace", default=None, help="Loss trace CSV (default: <checkpoint>.loss.csv)")
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("ablate", help="Train every variant on the same data and compare them")
    add_model_flags(p)
    add_train_flags(p)
    add_setting(p, "-o", "paths.output", "Directory for ablation.jsonl")
    p.set_defaults(handler=cmd_ablate)


def load_pairs(path):
    """Read every registered pair; returns [(thick, thin)]"""
    manager = PairManager.from_path(path)
    return [pair.load() for pair in manager.get_all_pairs()]


def cmd_train(args, config):
    """Train, write the final checkpoint and the loss trace, print a summary"""
    train_config = replace(config.train, variant=config.model.variant)
    resume = None
    if args.resume:
        params, model_config, resume = load_training_checkpoint(args.resume)
        if resume is None:
            raise ValidationError(f"{args.resume} holds no training state to resume from")
        if model_config != config.model:
            logger.warning("Resuming with the model config stored in %s; model flags are ignored", args.resume)
        model = TVSRNv2(model_config, params)
        train_config = replace(train_config, variant=model_config.variant)
    else:
        model = TVSRNv2(config.model, seed=train_config.seed)

    data = build_training_data(load_pairs(config.paths.data), train_config, model.config.upsample)
    result = train(
        model, data, train_config,
        checkpoint_path=config.paths.checkpoint, resume=resume, progress=not args.quiet,
    )
    trace_path = args.trace or f"{config.paths.checkpoint}.loss.csv"
    write_loss_trace(result.loss_trace, trace_path)

    trace = result.loss_trace
    drop = 100.0 * (1.0 - trace[-1] / trace[0]) if trace and trace[0] > 0 else 0.0
    print(f"variant {model.config.variant}: {model.parameter_count():,} parameters")
    print(f"loss {trace[0]:.6f} -> {trace[-1]:.6f} ({drop:.1f}% drop over {len(trace)} steps)")
    print(f"checkpoint {config.paths.checkpoint}")
    print(f"trace {trace_path}")
    return 0


def cmd_ablate(args, config):
    """Train all four variants with one budget and write a four-row report"""
    pairs = load_pairs(config.paths.data)
    data = build_training_data(pairs, config.train, config.model.upsample)
    reports = run_ablation(data, data.real, config.model, config.train, model_seed=config.train.seed, progress=not args.quiet)
    path = os.path.join(config.paths.output, "ablation.jsonl")
    with atomic_write(path, "w") as f:
        f.write(format_reports(reports))
    for report in reports:
        print(report.table_row())
    print(f"report {path}")
    return 0
