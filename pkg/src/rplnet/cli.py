"""Command-line entry points: train, eval, trials, export.

Dataset root layout (``--data-root`` or the RPL_DATA_ROOT env var):

    <root>/mnist/train-images-idx3-ubyte      (+ labels, t10k-*)
    <root>/fashionmnist/...                   (same IDX names)
    <root>/cifar10/data_batch_*.bin, test_batch.bin
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import rpl
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_digest, config_text, load_config
from .data import LabeledImages, OpenSetSplit, known_subset, load_cifar10, load_idx, make_split
from .encoder import EncoderConfig, encoder_init
from .errors import ConfigError, RplError
from .metrics import write_embeddings_csv, write_histogram_csv, write_scores_csv
from .tensor import Tensor
from .train import (
    Model,
    aggregate_reports,
    build_model,
    build_score_table,
    embed_all,
    report_from_table,
    run_seed_for,
    run_trial,
    score_samples,
    train_model,
)

IDX_DATASETS = ("mnist", "fashionmnist", "custom-idx")


def resolve_data_root(arg):
    root = arg or os.environ.get("RPL_DATA_ROOT", "")
    if not root:
        raise ConfigError("no data root given (flag, config, or RPL_DATA_ROOT)")
    return root


def load_dataset(dataset, data_root):
    """Return (train, test, total_classes) for a named dataset."""
    base = os.path.join(data_root, dataset)
    if dataset in IDX_DATASETS:
        train = load_idx(
            os.path.join(base, "train-images-idx3-ubyte"),
            os.path.join(base, "train-labels-idx1-ubyte"),
        )
        test = load_idx(
            os.path.join(base, "t10k-images-idx3-ubyte"),
            os.path.join(base, "t10k-labels-idx1-ubyte"),
        )
    elif dataset in ("cifar10", "custom-cifar"):
        train_paths = sorted(glob.glob(os.path.join(base, "data_batch_*.bin")))
        if not train_paths:
            raise ConfigError(f"no data_batch_*.bin files under {base}")
        train = load_cifar10(train_paths)
        test = load_cifar10([os.path.join(base, "test_batch.bin")])
    else:
        raise ConfigError(f"unknown dataset '{dataset}'")
    total = int(max(train.labels.max(), test.labels.max())) + 1
    return train, test, total


# -- split and checkpoint plumbing ------------------------------------------

def write_split(path, split: OpenSetSplit):
    with open(path, "w") as f:
        json.dump(
            {
                "known_classes": list(split.known_classes),
                "unknown_classes": list(split.unknown_classes),
                "seed": split.seed,
                "trial": split.trial,
            },
            f,
            indent=2,
        )


def read_split(path) -> OpenSetSplit:
    with open(path) as f:
        d = json.load(f)
    return OpenSetSplit(
        known_classes=tuple(d["known_classes"]),
        unknown_classes=tuple(d["unknown_classes"]),
        seed=d["seed"],
        trial=d["trial"],
    )


def save_model(path, model: Model, cfg: RunConfig):
    arrays = {name: t.data for name, t in model.named_params()}
    arrays["meta.config"] = np.frombuffer(config_text(cfg).encode(), dtype=np.uint8).astype(np.int64)
    arrays["meta.in_shape"] = np.asarray(model.encoder.config.in_shape, dtype=np.int64)
    save_checkpoint(path, arrays, config_digest(cfg))


def load_model(path):
    """Rebuild a model (and its config) from a checkpoint."""
    from .config import parse_config

    arrays, digest = load_checkpoint(path)
    cfg = parse_config(bytes(arrays.pop("meta.config").astype(np.uint8)).decode())
    in_shape = tuple(int(v) for v in arrays.pop("meta.in_shape"))
    if "rp.points" in arrays:
        n_known = arrays["rp.points"].shape[0]
    elif "head.weight" in arrays:
        n_known = arrays["head.weight"].shape[1]
    else:
        n_known = arrays["proto.points"].shape[0]
    model = build_model(cfg, in_shape, n_known, run_seed_for(cfg, 0))
    if cfg.mode in ("rpl++", "gcpl-baseline"):
        d = model.encoder.config.resolved_dim()
        model.protos = rpl.PrototypeSet(
            points=Tensor(np.zeros((n_known, cfg.c_protos, d)), requires_grad=True),
            beta=cfg.beta,
        )
    for name, t in model.named_params():
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing array '{name}'")
        if arrays[name].shape != t.data.shape:
            raise ConfigError(
                f"checkpoint array '{name}' has shape {arrays[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data[...] = arrays[name]
    return model, cfg, digest


# -- commands ----------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    cfg.data_root = resolve_data_root(cfg.data_root or args.data_root)
    os.makedirs(cfg.out_dir, exist_ok=True)
    train_data, _, total = load_dataset(cfg.dataset, cfg.data_root)
    split = make_split(total, cfg.n_known, cfg.seed, trial=0)
    log_lines = []
    model = train_model(cfg, train_data, split, run_seed_for(cfg, 0), log_lines=log_lines)
    save_model(os.path.join(cfg.out_dir, "checkpoint.rpl"), model, cfg)
    write_split(os.path.join(cfg.out_dir, "split.json"), split)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w") as f:
        f.write(config_text(cfg))
    with open(os.path.join(cfg.out_dir, "train.log"), "w") as f:
        f.write("".join(line + "\n" for line in log_lines))
    print(f"checkpoint written to {cfg.out_dir}/checkpoint.rpl")
    return 0


def cmd_eval(args):
    model, cfg, digest = load_model(args.checkpoint)
    split = read_split(args.split)
    data_root = resolve_data_root(args.data_root)
    _, test_data, _ = load_dataset(cfg.dataset, data_root)
    known_images, known_labels = known_subset(test_data, split)
    mask = np.isin(test_data.labels, split.unknown_classes)
    table = build_score_table(model, known_images, known_labels, test_data.images[mask])
    report = report_from_table(
        table, split.n_known, len(split.unknown_classes), seed=cfg.seed, digest=digest
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        f.write(report.to_json() + "\n")
    write_scores_csv(os.path.join(args.out, "scores.csv"), table)
    print(report.to_json())
    return 0


def cmd_trials(args):
    cfg = load_config(args.config)
    if args.n is not None:
        cfg.trials = args.n
    if args.out:
        cfg.out_dir = args.out
    cfg.data_root = resolve_data_root(cfg.data_root or args.data_root)
    os.makedirs(cfg.out_dir, exist_ok=True)
    train_data, test_data, total = load_dataset(cfg.dataset, cfg.data_root)
    reports = []
    for trial in range(cfg.trials):
        try:
            model, split, table, report = run_trial(
                cfg, trial, train_data, test_data, total_classes=total
            )
        except RplError as e:
            raise RplError(f"trial {trial} failed: {e}") from e
        trial_dir = os.path.join(cfg.out_dir, f"trial{trial}")
        os.makedirs(trial_dir, exist_ok=True)
        save_model(os.path.join(trial_dir, "checkpoint.rpl"), model, cfg)
        write_split(os.path.join(trial_dir, "split.json"), split)
        write_scores_csv(os.path.join(trial_dir, "scores.csv"), table)
        with open(os.path.join(trial_dir, "metrics.json"), "w") as f:
            f.write(report.to_json() + "\n")
        reports.append(report)
        print(f"trial={trial} auroc={report.auroc} acc={report.closed_accuracy}")
    agg = aggregate_reports(reports)
    with open(os.path.join(cfg.out_dir, "aggregate.json"), "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
    print(json.dumps(agg, indent=2, sort_keys=True))
    return 0


def cmd_export(args):
    model, cfg, _ = load_model(args.checkpoint)
    split = read_split(args.split)
    data_root = resolve_data_root(args.data_root)
    _, test_data, _ = load_dataset(cfg.dataset, data_root)
    known_images, known_labels = known_subset(test_data, split)
    mask = np.isin(test_data.labels, split.unknown_classes)
    unknown_images = test_data.images[mask]
    os.makedirs(args.out, exist_ok=True)
    if args.what == "hist":
        ks, _, _ = score_samples(model, known_images)
        write_histogram_csv(os.path.join(args.out, "hist_known.csv"), ks, args.bins)
        if len(unknown_images):
            us, _, _ = score_samples(model, unknown_images)
            write_histogram_csv(os.path.join(args.out, "hist_unknown.csv"), us, args.bins)
    elif args.what == "emb":
        images = np.concatenate([known_images, unknown_images]) if len(unknown_images) else known_images
        labels = np.concatenate([known_labels, np.full(len(unknown_images), -1)])
        emb = embed_all(model, images)
        write_embeddings_csv(
            os.path.join(args.out, "emb.csv"),
            emb,
            labels,
            rp_points=model.rps.points.data if model.rps is not None else None,
            proto_points=model.protos.points.data if model.protos is not None else None,
        )
    else:
        raise ConfigError(f"unknown export kind '{args.what}'")
    print(f"export written to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rplnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default="")
    t.add_argument("--data-root", default="")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test partitions")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-root", default="")
    e.add_argument("--split", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("trials", help="run the seeded multi-trial protocol")
    r.add_argument("--config", required=True)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--out", default="")
    r.add_argument("--data-root", default="")
    r.set_defaults(fn=cmd_trials)

    x = sub.add_parser("export", help="export score histograms or embeddings")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data-root", default="")
    x.add_argument("--split", required=True)
    x.add_argument("--what", required=True, choices=["hist", "emb"])
    x.add_argument("--bins", type=int, default=30)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except RplError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
