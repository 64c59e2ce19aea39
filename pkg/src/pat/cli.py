"""Command-line entry point: ``pat <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or contract error. A plain-text
``key=value`` file passed with ``--config`` may supply any flag; flags given
on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkError, ModelRecipe, render_report, report_csv, run_benchmark
from .checkpoint import (
    checkpoint_from_model,
    classifier_from_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .data import (
    ParseError,
    SplitSpec,
    as_matrix,
    labels_of,
    load_csv,
    save_csv,
    smooth_records,
    standardize_per_minute,
    stratified_subsets,
    synth_generate,
)
from .explain import aggregate_importance, expand_to_minutes, export_heatmap, extract_attention
from .finetune import CheckpointError, FinetuneConfig, attach_head, finetune, predict_batch
from .model import ModelConfig, count_parameters
from .pretrain import MAEConfig, pretrain_loop
from .tensor import ContractError, ShapeError

log = logging.getLogger("pat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _sizes(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        out.append(None if item.upper() == "N" else int(item))
    return out


def _add_model_flags(p):
    p.add_argument("--size", choices=["S", "M", "L"], default="S")
    p.add_argument("--embed", choices=["linear", "conv"], default="linear")
    p.add_argument("--series-len", type=int, default=10080)
    p.add_argument("--patch-size", type=int, default=18)
    p.add_argument("--heads", type=int, default=None,
                   help="attention heads per layer (default: from --size)")
    p.add_argument("--head-dim", type=int, default=None,
                   help="per-head attention width (default: embedding width)")


def _add_train_flags(p, lr):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=lr)


def build_parser():
    parser = _Parser(prog="pat", description="Pretrained Actigraphy Transformer tools")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--effect", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--series-len", type=int, default=10080)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--labels-optional", action="store_true",
                   help="accept rows with an empty label cell")
    _add_model_flags(p)
    p.add_argument("--mask-ratio", type=float, default=0.90)
    p.add_argument("--loss", choices=["all", "masked"], default="all")
    p.add_argument("--smooth", choices=["on", "off"], default="off")
    _add_train_flags(p, 1e-3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune", help="train a binary classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="pretrained checkpoint (omit to train from scratch)")
    _add_model_flags(p)
    p.add_argument("--mode", choices=["FT", "LP"], default="FT")
    p.add_argument("--smooth", choices=["on", "off"], default="off")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--patience", type=int, default=10)
    _add_train_flags(p, 1e-4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="score a dataset with a classifier checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--smooth", choices=["on", "off"], default="off")
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="attention heatmaps for participants")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--participant", action="append",
                   help="participant_id to explain (repeatable; default: all)")
    p.add_argument("--aggregate", choices=["received", "row"], default="received")
    p.add_argument("--smooth", choices=["on", "off"], default="off")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("benchmark", help="size-graded AUC benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="pretrained checkpoint (omit to train from scratch)")
    _add_model_flags(p)
    p.add_argument("--mode", choices=["FT", "LP"], default="FT")
    p.add_argument("--smooth", choices=["on", "off"], default="off")
    p.add_argument("--sizes", type=_sizes, default=[500, 1000, 2500, None])
    p.add_argument("--test-size", type=int, default=2000)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--name", default=None)
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in the CSV")
    p.add_argument("--train-stats", action="store_true",
                   help="standardize val/test with training-set moments instead of their own")
    p.add_argument("--manifests", help="directory for split membership lists")
    _add_train_flags(p, 1e-4)
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("inspect-ckpt", help="print checkpoint config and tensor shapes")
    p.add_argument("ckpt")

    for name, sp in sub.choices.items():
        if name != "inspect-ckpt":
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--config", help="key=value file supplying flag defaults")
    return parser, sub


def read_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _config_path(argv):
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def parse_args(argv):
    parser, sub = build_parser()
    command = next((a for a in argv if not a.startswith("-")), None)
    config = _config_path(argv)
    # config values become subcommand defaults before parsing, so they can
    # satisfy required flags while explicit flags still win
    if config and command in sub.choices and command != "inspect-ckpt":
        sp = sub.choices[command]
        known = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in read_config_file(config).items():
            if key not in known or key in ("help", "config"):
                raise UsageError(f"{config}: unknown option {key!r} for {command}")
            action = known[key]
            if action.nargs == 0:
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                conv = action.type or str
                try:
                    defaults[key] = conv(value)
                except (TypeError, ValueError):
                    raise UsageError(f"{config}: bad value {value!r} for {key}") from None
                if action.choices is not None and defaults[key] not in action.choices:
                    raise UsageError(f"{config}: {key} must be one of {list(action.choices)}")
            action.required = False
        sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "pat: error: a subcommand is required")
    return args


def _model_cfg(args):
    overrides = {}
    if args.heads is not None:
        overrides["num_heads"] = args.heads
    return ModelConfig.from_size(
        args.size,
        embed_mode=args.embed,
        series_len=args.series_len,
        patch_size=args.patch_size,
        head_dim=args.head_dim,
        **overrides,
    )


def _prepare(records, smooth):
    if smooth == "on":
        records = smooth_records(records)
    records, _ = standardize_per_minute(records)
    return records


def cmd_synth(args):
    records = synth_generate(args.n, args.seed, args.effect, args.series_len, args.noise)
    save_csv(records, args.out)
    print(f"wrote {len(records)} participants to {args.out}")


def cmd_pretrain(args):
    cfg = _model_cfg(args)
    records = load_csv(args.data, series_len=cfg.series_len)
    if not args.labels_optional and any(r.label is None for r in records):
        raise ContractError("rows without labels; pass --labels-optional for unlabeled data")
    records = _prepare(records, args.smooth)
    mae_cfg = MAEConfig(
        mask_ratio=args.mask_ratio,
        loss_mode="all" if args.loss == "all" else "masked_only",
        epochs=args.epochs if args.epochs is not None else 100,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        smooth=args.smooth == "on",
    )
    result = pretrain_loop(
        as_matrix(records), mae_cfg, cfg,
        progress=lambda e, loss: log.info("epoch %d loss %.6f", e, loss),
    )
    ckpt = checkpoint_from_model(result.model, {"history": [round(h, 8) for h in result.history]})
    save_checkpoint(ckpt, args.out)
    print(f"pretrained {mae_cfg.epochs} epochs, final loss {result.history[-1]:.6f}; wrote {args.out}")


def cmd_finetune(args):
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        cfg = ckpt.model_config()
    else:
        ckpt, cfg = None, _model_cfg(args)
    records = load_csv(args.data, series_len=cfg.series_len, require_labels=True)
    spec = SplitSpec(test_size=0, subset_sizes=[None], val_fraction=args.val_fraction,
                     seed=args.seed)
    train, val = stratified_subsets(records, spec).subsets["N"]
    train, val = _prepare(train, args.smooth), _prepare(val, args.smooth)
    ft_cfg = FinetuneConfig(
        mode=args.mode,
        epochs=args.epochs if args.epochs is not None else 50,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        early_stop_patience=args.patience,
    )
    if ckpt is not None:
        model = classifier_from_checkpoint(ckpt, cfg, rng=args.seed)
    else:
        model = attach_head(None, cfg, rng=args.seed)
    model, history = finetune(
        model, (as_matrix(train), labels_of(train)), (as_matrix(val), labels_of(val)), ft_cfg,
        progress=lambda h: log.info("epoch %d loss %.5f val_auc %.4f",
                                    h["epoch"], h["train_loss"], h["val_auc"]),
    )
    best = max(h["val_auc"] for h in history)
    save_checkpoint(checkpoint_from_model(model, {"finetune": ft_cfg.to_dict()}), args.out)
    print(f"fine-tuned ({args.mode}) {len(history)} epochs, best val AUC {best:.4f}; wrote {args.out}")


def _classifier(path):
    ckpt = load_checkpoint(path)
    if ckpt.kind != "classifier":
        raise CheckpointError(f"{path} holds a {ckpt.kind} checkpoint; a classifier is required")
    return model_from_checkpoint(ckpt)


def cmd_predict(args):
    model = _classifier(args.ckpt)
    records = load_csv(args.data, series_len=model.cfg.series_len)
    records = _prepare(records, args.smooth)
    probs = predict_batch(model, as_matrix(records))
    lines = ["participant_id,probability"]
    lines += [f"{r.participant_id},{p:.6g}" for r, p in zip(records, probs)]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} predictions to {args.out}")


def cmd_explain(args):
    model = _classifier(args.ckpt)
    raw = load_csv(args.data, series_len=model.cfg.series_len)
    records = _prepare(raw, args.smooth)
    wanted = set(args.participant or [r.participant_id for r in records])
    unknown = wanted - {r.participant_id for r in records}
    if unknown:
        raise ContractError(f"unknown participant ids: {sorted(unknown)[:5]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for rec, orig in zip(records, raw):
        if rec.participant_id not in wanted:
            continue
        bundle = extract_attention(model, rec.series)
        scores = aggregate_importance(bundle, args.aggregate)
        importance = expand_to_minutes(scores, model.cfg.patch_size)
        export_heatmap(orig.series, importance, out / rec.participant_id)
        count += 1
    print(f"wrote heatmaps for {count} participants to {out}")


def cmd_benchmark(args):
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        cfg = ckpt.model_config()
    else:
        ckpt, cfg = None, _model_cfg(args)
    ft_cfg = FinetuneConfig(
        mode=args.mode,
        epochs=args.epochs if args.epochs is not None else 50,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        early_stop_patience=args.patience,
    )
    recipe = ModelRecipe(
        name=args.name or f"PAT-{cfg.size_tag or 'custom'}",
        model_cfg=cfg,
        checkpoint=ckpt,
        finetune=ft_cfg,
        smooth=args.smooth == "on",
        standardize_separately=not args.train_stats,
    )
    spec = SplitSpec(test_size=args.test_size, subset_sizes=args.sizes, seed=args.seed)
    records = load_csv(args.data, series_len=cfg.series_len, require_labels=True)
    if args.manifests:
        from .data import write_split_manifests

        write_split_manifests(stratified_subsets(records, spec), args.manifests)
    report = run_benchmark(
        records, recipe, spec,
        progress=lambda r: log.info("size %s auc %.4f (%.1fs)", r.size, r.auc, r.seconds),
    )
    Path(args.out).write_text(report_csv(report, timing=args.timing), encoding="utf-8")
    print(render_report(report), end="")


def cmd_inspect(args):
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.model_config()
    print(f"format_version: {ckpt.format_version}")
    print(f"kind: {ckpt.kind}")
    for key, value in sorted(cfg.to_dict().items()):
        print(f"model.{key}: {value}")
    print(f"model.num_patches: {cfg.num_patches}")
    for section in ("mae", "finetune"):
        for key, value in sorted(ckpt.config.get(section, {}).items()):
            print(f"{section}.{key}: {value}")
    backbone = 0
    total = 0
    for name, arr in ckpt.tensors.items():
        print(f"  {name} {list(arr.shape)}")
        total += arr.size
        if name.startswith(("embed.", "encoder.")):
            backbone += arr.size
    print(f"embedder+encoder parameters: {backbone}")
    print(f"count_parameters(config): {count_parameters(cfg)}")
    print(f"total parameters: {total}")


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "benchmark": cmd_benchmark,
    "inspect-ckpt": cmd_inspect,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    except OSError as exc:
        print(f"pat: cannot read config: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ParseError, ContractError, ShapeError, CheckpointError, BenchmarkError,
            OSError, ValueError) as exc:
        print(f"pat {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
