"""Command-line surface: ingest, train, sample, eval.

Exit codes: 0 success, 1 internal error, 2 user/data error.  Every command
is deterministic under --seed.  STROKEFORGE_DATA_DIR, when set, is the
default --data / --out root.
"""

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .data import (
    DataError,
    normalize_offsets,
    parse_ndjson,
    read_jsonl,
    scale_offsets,
    split_dataset,
    write_jsonl,
)

MANIFEST_NAME = "manifest.json"


class UserError(Exception):
    """CLI-level misuse that is not worth a traceback."""


def _data_root(explicit):
    if explicit:
        return Path(explicit)
    env = os.environ.get("STROKEFORGE_DATA_DIR")
    if env:
        return Path(env)
    raise UserError("no directory given and STROKEFORGE_DATA_DIR is not set")


def _load_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise UserError(f"{path} not found; run `strokeforge ingest` first")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_split(data_dir, name):
    path = Path(data_dir) / f"{name}.jsonl"
    if not path.exists():
        raise UserError(f"{path} not found")
    return read_jsonl(path)


def _load_raster_dir(root):
    root = Path(root)
    if not root.is_dir():
        raise UserError(f"raster directory {root} not found")
    files = sorted(root.glob("*.npy"))
    if not files:
        raise UserError(f"no .npy rasters in {root}")
    return np.stack([np.load(f).astype(np.float32) for f in files])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    out_dir = _data_root(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sequences, stats = parse_ndjson(args.ndjson, max_seq_len=args.max_seq_len)
    if not sequences:
        raise DataError(f"{args.ndjson}: no usable sketches "
                        f"(malformed={stats.malformed}, empty={stats.empty}, long={stats.dropped_long})")
    if args.splits:
        try:
            train_n, test_n, val_n = (int(v) for v in args.splits.split(","))
        except ValueError as err:
            raise UserError(f"--splits wants TRAIN,TEST,VAL integers, got {args.splits!r}") from err
    else:
        # default: 80/10/10 with at least one sketch per split
        n = len(sequences)
        test_n = max(n // 10, 1)
        val_n = max(n // 10, 1)
        train_n = n - test_n - val_n
        if train_n < 1:
            raise DataError(f"{args.ndjson}: only {n} sketches, need at least 3 to split")
    split = split_dataset(sequences, train_n, test_n, val_n, seed=args.seed)
    split.train, scale = normalize_offsets(split.train)
    split.test = scale_offsets(split.test, scale)
    split.validation = scale_offsets(split.validation, scale)
    split.offset_scale = scale

    write_jsonl(out_dir / "train.jsonl", split.train)
    write_jsonl(out_dir / "test.jsonl", split.test)
    write_jsonl(out_dir / "validation.jsonl", split.validation)
    manifest = {
        "offset_scale": scale,
        "max_seq_len": args.max_seq_len,
        "splits": {"train": train_n, "test": test_n, "validation": val_n},
        "warnings": stats.as_dict(),
        "seed": args.seed,
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"ingested {stats.parsed} sketches -> {out_dir} "
          f"(train {train_n}, test {test_n}, validation {val_n}, scale {scale:.4f})")
    if stats.malformed or stats.empty or stats.dropped_long:
        print(f"warnings: {stats.malformed} malformed, {stats.empty} empty, "
              f"{stats.dropped_long} over {args.max_seq_len} points")
    return 0


def _run_config(args):
    if args.config:
        return RunConfig.from_file(args.config)
    return RunConfig()


def cmd_train(args):
    from . import discriminator as disc
    from . import refiner as rf
    from . import vae

    cfg = _run_config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    out_dir = _data_root(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.model == "discriminator":
        if not args.corpus:
            raise UserError("train discriminator needs --corpus DIR with class subdirectories")
        images, labels = [], []
        for idx, name in enumerate(disc.CLASS_NAMES):
            rasters = _load_raster_dir(Path(args.corpus) / name)
            images.append(rasters)
            labels.append(np.full(len(rasters), idx))
        images = np.concatenate(images)
        labels = np.concatenate(labels)
        order = np.random.default_rng(seed).permutation(len(images))
        images, labels = images[order], labels[order]
        n_val = max(len(images) // 10, 3)
        dcfg = disc.DiscriminatorConfig() if args.full_scale else disc.DiscriminatorConfig.small()
        ckpt = out_dir / "discriminator.ckpt"
        with open(out_dir / "discriminator_loss.csv", "w", encoding="utf-8") as fh:
            print("step,loss", file=fh)
            _, _, acc = disc.train_discriminator(
                images[n_val:], labels[n_val:], config=dcfg, steps=cfg.train_steps,
                batch_size=cfg.batch_size, lr=cfg.learning_rate, seed=seed,
                val_images=images[:n_val], val_labels=labels[:n_val],
                checkpoint_path=ckpt, log_fh=fh)
        print(f"wrote {ckpt}; validation accuracy: "
              + ", ".join(f"{k} {v:.1%}" for k, v in acc.items()))
        return 0

    data_dir = _data_root(args.data)
    manifest = _load_manifest(data_dir)
    train_seqs = _load_split(data_dir, "train")

    if args.model == "baseline":
        ckpt = out_dir / "baseline.ckpt"
        with open(out_dir / "baseline_loss.csv", "w", encoding="utf-8") as fh:
            vae.train_baseline(
                train_seqs, config=cfg.vae_config(), steps=cfg.train_steps,
                batch_size=cfg.batch_size, lr=cfg.learning_rate, kl_weight=cfg.kl_weight,
                seed=seed, checkpoint_path=ckpt, log_fh=fh,
                meta={"offset_scale": manifest["offset_scale"]})
        print(f"wrote {ckpt} and baseline_loss.csv ({cfg.train_steps} steps, lr {cfg.learning_rate})")
        return 0

    if args.model == "refiner":
        baseline_path = Path(args.baseline) if args.baseline else out_dir / "baseline.ckpt"
        if not baseline_path.exists():
            raise UserError(f"baseline checkpoint {baseline_path} not found; train it first")
        ckpt = out_dir / "refiner.ckpt"
        with open(out_dir / "refiner_loss.csv", "w", encoding="utf-8") as fh:
            rf.train_refiner(
                train_seqs, baseline_path, config=cfg.refiner_config(), steps=cfg.train_steps,
                batch_size=cfg.batch_size, lr=cfg.learning_rate, seed=seed,
                offset_scale=manifest["offset_scale"], checkpoint_path=ckpt, log_fh=fh)
        print(f"wrote {ckpt} and refiner_loss.csv ({cfg.train_steps} steps, lr {cfg.learning_rate})")
        return 0

    raise UserError(f"unknown model {args.model!r}")


def cmd_sample(args):
    from . import refiner as rf
    from . import vae
    from .raster import render
    from .svg import grid_svg, write_sketch_svg

    baseline, meta = vae.load_baseline(args.checkpoint)
    offset_scale = meta.get("offset_scale", 1.0)
    refiner_model = None
    if args.refiner:
        refiner_model, _ = rf.load_refiner(args.refiner)
    elif args.alpha < 1.0:
        raise UserError("alpha < 1 needs --refiner CHECKPOINT")

    svg_dir = Path(args.svg_dir)
    svg_dir.mkdir(parents=True, exist_ok=True)
    raster_dir = None
    if args.raster_dir:
        raster_dir = Path(args.raster_dir)
        raster_dir.mkdir(parents=True, exist_ok=True)

    sketches = []
    for i in range(args.count):
        rng = np.random.default_rng(args.seed + i)  # derived per-sketch seed
        z = rng.standard_normal(baseline.config.latent_dim).astype(np.float32)
        if refiner_model is not None:
            seq = rf.refined_sample(baseline, refiner_model, z, args.temperature,
                                    args.alpha, rng, offset_scale=offset_scale)
        else:
            seq = vae.sample_sketch(baseline, z, args.temperature, rng)
        sketches.append(seq)
        write_sketch_svg(svg_dir / f"sketch_{i:03d}.svg", seq, offset_scale)
        if raster_dir is not None:
            np.save(raster_dir / f"sketch_{i:03d}.npy", render(seq, offset_scale))
    if args.grid:
        with open(svg_dir / "grid.svg", "w", encoding="utf-8") as fh:
            fh.write(grid_svg(sketches, offset_scale))
    mode = f"alpha={args.alpha}" if refiner_model is not None else "baseline"
    print(f"wrote {args.count} sketches ({mode}, temperature {args.temperature}) to {svg_dir}")
    return 0


def cmd_eval(args):
    if args.what == "discriminator":
        return _eval_discriminator(args)
    return _eval_tsne(args)


def _eval_discriminator(args):
    from . import discriminator as disc

    if not Path(args.checkpoint).exists():
        raise UserError(f"checkpoint {args.checkpoint} not found")
    model, _ = disc.load_discriminator(args.checkpoint)
    images, labels = [], []
    for idx, name in enumerate(disc.CLASS_NAMES):
        class_dir = Path(args.corpus) / name
        if not class_dir.is_dir():
            continue
        rasters = _load_raster_dir(class_dir)
        images.append(rasters)
        labels.append(np.full(len(rasters), idx))
    if not images:
        raise UserError(f"{args.corpus}: no class subdirectories "
                        f"({', '.join(disc.CLASS_NAMES)}) with rasters")
    matrix = disc.confusion(model, np.concatenate(images), np.concatenate(labels))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "confusion.csv").write_text(matrix.to_csv(), encoding="utf-8")
    (out_dir / "confusion.txt").write_text(matrix.to_text() + "\n", encoding="utf-8")
    print(matrix.to_text())
    for name in ("sketch-rnn", "refiner"):
        if name not in matrix.missing_rows:
            print(f"mislead rate ({name} -> human): {matrix.mislead_rate(name):.1f}%")
    if matrix.missing_rows:
        print(f"no evaluation examples for: {', '.join(matrix.missing_rows)}")
    return 0


def _eval_tsne(args):
    from .discriminator import load_discriminator
    from .svg import write_scatter_svg
    from .tsne import class_concentration, feature_extract, tsne

    images, labels = [], []
    for spec in args.rasters:
        if "=" not in spec:
            raise UserError(f"--rasters wants LABEL=DIR entries, got {spec!r}")
        label, directory = spec.split("=", 1)
        rasters = _load_raster_dir(directory)
        images.append(rasters)
        labels.extend([label] * len(rasters))
    images = np.concatenate(images)
    discriminator = None
    if args.mode == "discriminator-penultimate":
        if not args.discriminator:
            raise UserError("discriminator-penultimate mode needs --discriminator CHECKPOINT")
        discriminator, _ = load_discriminator(args.discriminator)
    features = feature_extract(images, mode=args.mode, discriminator=discriminator)
    try:
        run = tsne(features, perplexity=args.perplexity, seed=args.seed, iterations=args.iterations)
    except ValueError as err:
        raise UserError(str(err)) from err
    write_scatter_svg(args.svg, run.points, labels)
    stats = class_concentration(run.points, labels)
    payload = {
        "perplexity": run.perplexity,
        "iterations": run.iterations,
        "final_kl": run.kl_trace[-1],
        "mean_intra_class_distance": stats,
    }
    stats_path = Path(args.svg).with_suffix(".stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(f"wrote {args.svg} and {stats_path}")
    for label, value in stats.items():
        print(f"mean intra-class distance [{label}]: {value:.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="strokeforge",
                                     description="stroke-sequence sketch generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse QuickDraw ndjson into normalized splits")
    p.add_argument("ndjson")
    p.add_argument("--out", help="output directory (default: STROKEFORGE_DATA_DIR)")
    p.add_argument("--max-seq-len", type=int, default=250)
    p.add_argument("--splits", help="TRAIN,TEST,VAL sizes (default: 80/10/10)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model, writing a checkpoint and a CSV loss log")
    p.add_argument("model", choices=("baseline", "refiner", "discriminator"))
    p.add_argument("--config", help="flat JSON run configuration")
    p.add_argument("--data", help="ingested data directory (default: STROKEFORGE_DATA_DIR)")
    p.add_argument("--out", help="output directory (default: STROKEFORGE_DATA_DIR)")
    p.add_argument("--baseline", help="baseline checkpoint (refiner training)")
    p.add_argument("--corpus", help="labeled raster corpus (discriminator training)")
    p.add_argument("--full-scale", action="store_true",
                   help="use the full-size discriminator network")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate sketches and export SVG/rasters")
    p.add_argument("--checkpoint", required=True, help="baseline checkpoint")
    p.add_argument("--refiner", help="refiner checkpoint (enables the blended pipeline)")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg-dir", required=True)
    p.add_argument("--raster-dir", help="also save 128x128 .npy rasters here")
    p.add_argument("--grid", action="store_true", help="also write a grid.svg contact sheet")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="confusion matrix or embedding scatter")
    ev = p.add_subparsers(dest="what", required=True)

    pd = ev.add_parser("discriminator", help="confusion matrix over a labeled corpus")
    pd.add_argument("--checkpoint", required=True)
    pd.add_argument("--corpus", required=True, help="directory with class subdirectories of .npy rasters")
    pd.add_argument("--out-dir", help="where to write confusion.csv/.txt (default: cwd)")
    pd.set_defaults(func=cmd_eval)

    pt = ev.add_parser("tsne", help="2-D embedding scatter with concentration stats")
    pt.add_argument("--rasters", nargs="+", required=True, metavar="LABEL=DIR")
    pt.add_argument("--mode", choices=("flat", "discriminator-penultimate"), default="flat")
    pt.add_argument("--discriminator", help="checkpoint for penultimate features")
    pt.add_argument("--perplexity", type=float, default=30.0)
    pt.add_argument("--iterations", type=int, default=500)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--svg", required=True)
    pt.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, DataError, ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception:  # internal bug: full traceback, exit 1
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
