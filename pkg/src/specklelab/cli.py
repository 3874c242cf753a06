"""Command-line interface: simulate, dataset, train, despeckle, evaluate.

Commands are reproducible byte-for-byte given the same inputs and seed.
Progress and diagnostics go to stderr; results go to files and stdout.
Outputs are written to a ``.partial`` file first and renamed on success, so
an interrupted command never leaves a plausible-looking result behind.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .backend import backend_name
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    EmptyCorpusError,
    FormatError,
    NumericError,
    ShapeError,
    SpeckleLabError,
)
from .images import FORMATS, infer_format, read_image, write_image
from .metrics import (
    homogeneous_masks_from_clean,
    m_index,
    psnr,
    report_to_text,
)
from .metrics import ratio_image as make_ratio_image
from .network import (
    TrainConfig,
    build_network,
    despeckle_image,
    make_architecture,
    train_with_state,
)
from .rng import Rng
from .speckle import (
    build_patch_dataset,
    corrupt,
    load_dataset,
    sample_speckle,
    save_dataset,
)

DEFAULTS = {
    "lambda": 1.0,
    "eta": 2e-6,
    "momentum": 0.9,
    "batch_size": 64,
    "looks": 1.0,
    "seed": 0,
    "val_every": 100,
    "patience": None,
    "epochs": None,
    "layers": 10,
    "features": 64,
    "kernel": 3,
}


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _atomic_write(path, writer) -> None:
    """Run writer(partial_path), then rename onto `path`."""
    partial = str(path) + ".partial"
    writer(partial)
    os.replace(partial, path)


def _normalize_unit(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale into [0, 1] if the dynamic range exceeds it; returns (img, scale)."""
    top = float(img.max(initial=0.0))
    if top > 1.0:
        return img / top, top
    return img, 1.0


def parse_config_file(path) -> dict:
    """Flat ``key = value`` file with # comments; values stay as strings."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _resolve_train_settings(args) -> dict:
    """defaults < config file < command-line flags."""
    settings = dict(DEFAULTS)
    if args.config:
        parsed = parse_config_file(args.config)
        for key, val in parsed.items():
            if key not in settings:
                raise ConfigError(f"unknown config key {key!r} in {args.config}")
            settings[key] = val
    overrides = {
        "lambda": args.lam, "eta": args.eta, "momentum": args.momentum,
        "batch_size": args.batch_size, "looks": args.looks, "seed": args.seed,
        "val_every": args.val_every, "patience": args.patience,
        "epochs": args.epochs, "layers": args.layers,
        "features": args.features, "kernel": args.kernel,
    }
    for key, val in overrides.items():
        if val is not None:
            settings[key] = val
    if settings["epochs"] is None:
        raise ConfigError("epochs must be set (config file or --epochs)")
    casts = {
        "lambda": float, "eta": float, "momentum": float, "batch_size": int,
        "looks": float, "seed": int, "val_every": int, "epochs": int,
        "layers": int, "features": int, "kernel": int,
    }
    for key, cast in casts.items():
        try:
            settings[key] = cast(settings[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config value {key} = {settings[key]!r}: {exc}") from exc
    if settings["patience"] is not None:
        try:
            settings["patience"] = int(settings["patience"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config value patience = {settings['patience']!r}: {exc}") from exc
    return settings


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    clean = read_image(args.input)
    clean, scale = _normalize_unit(clean)
    if scale != 1.0:
        _log(f"input scaled by 1/{scale:g} into [0, 1]")
    rng = Rng(args.seed)
    field = sample_speckle(clean.shape[0], clean.shape[1], args.looks, rng)
    noisy = corrupt(clean, field)
    fmt_noisy = args.format or infer_format(args.output_noisy)
    fmt_speckle = args.format or infer_format(args.output_speckle)
    _atomic_write(args.output_noisy, lambda p: write_image(p, noisy, fmt_noisy))
    _atomic_write(args.output_speckle, lambda p: write_image(p, field, fmt_speckle))
    print("speckle_mean = %.12g" % field.mean())
    print("speckle_variance = %.12g" % field.var())
    return 0


def _load_corpus(corpus_dir) -> list[np.ndarray]:
    images = []
    names = sorted(os.listdir(corpus_dir))
    for name in names:
        path = os.path.join(corpus_dir, name)
        if not os.path.isfile(path):
            continue
        try:
            img = read_image(path)
        except (FormatError, OSError):
            _log(f"skipping unreadable corpus file {name}")
            continue
        img, scale = _normalize_unit(img)
        if scale != 1.0:
            _log(f"{name}: scaled by 1/{scale:g} into [0, 1]")
        images.append(img)
    if not images:
        raise EmptyCorpusError(f"no readable grayscale images in {corpus_dir}")
    return images


def cmd_dataset(args) -> int:
    images = _load_corpus(args.corpus_dir)
    _log(f"corpus: {len(images)} images")
    rng = Rng(args.seed)
    dataset = build_patch_dataset(images, args.count, args.patch_size, args.looks, rng)
    _atomic_write(args.output, lambda p: save_dataset(dataset, p))
    print(f"patches = {len(dataset)}")
    if dataset.source_indices is not None and len(dataset):
        hist = np.bincount(dataset.source_indices, minlength=len(images))
        for i, n in enumerate(hist):
            print(f"source_{i} = {n}")
    return 0


def cmd_train(args) -> int:
    settings = _resolve_train_settings(args)
    dataset = load_dataset(args.dataset)
    val = load_dataset(args.val)
    _log(f"train: {len(dataset)} patches, val: {len(val)} patches, "
         f"backend: {backend_name()}")
    cfg = TrainConfig(
        epochs=settings["epochs"],
        lam=settings["lambda"],
        eta=settings["eta"],
        momentum=settings["momentum"],
        batch_size=settings["batch_size"],
        looks=settings["looks"],
        seed=settings["seed"],
        val_every=settings["val_every"],
        early_stop_patience=settings["patience"],
    )
    if args.resume:
        params, opt = load_checkpoint(args.resume)
        if opt is None:
            _log("resume checkpoint has no optimizer block; momentum restarts at zero")
    else:
        arch = make_architecture(settings["layers"], settings["features"], settings["kernel"])
        params = build_network(arch, Rng(settings["seed"]))
        opt = None
    try:
        trained, history, opt = train_with_state(params, dataset, val, cfg, opt)
    except NumericError as err:
        partial = getattr(err, "params", None)
        if partial is not None:
            save_checkpoint(partial, None, str(args.checkpoint_out) + ".aborted")
            _log(f"saved aborted state to {args.checkpoint_out}.aborted")
        raise
    _atomic_write(args.checkpoint_out, lambda p: save_checkpoint(trained, opt, p))
    _atomic_write(
        args.log_out,
        lambda p: open(p, "w", encoding="utf-8").write("\n".join(history.lines()) + "\n"),
    )
    if history.records:
        first, last = history.records[0], history.records[-1]
        print("val_total_first = %.12g" % first[4])
        print("val_total_last = %.12g" % last[4])
    return 0


def cmd_despeckle(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    image = read_image(args.input)
    image, scale = _normalize_unit(image)
    if scale != 1.0:
        _log(f"input scaled by 1/{scale:g} into [0, 1]")
    filtered = despeckle_image(params, image, tile=args.tile, overlap=args.overlap)
    fmt = args.format or infer_format(args.output)
    _atomic_write(args.output, lambda p: write_image(p, filtered, fmt))
    if args.ratio_output:
        ratio = make_ratio_image(image, filtered)
        rfmt = args.format or infer_format(args.ratio_output)
        _atomic_write(args.ratio_output, lambda p: write_image(p, ratio, rfmt))
        print("ratio_mean = %.12g" % ratio.mean())
    return 0


def _masks_from_label_image(path, shape) -> list[np.ndarray]:
    labels = np.rint(read_image(path)).astype(np.int64)
    if labels.shape != shape:
        raise ShapeError(f"mask image {labels.shape} does not match images {shape}")
    masks = []
    for lab in np.unique(labels):
        if lab == 0:
            continue
        masks.append(labels == lab)
    return masks


def cmd_evaluate(args) -> int:
    noisy = read_image(args.noisy)
    filtered = read_image(args.filtered)
    if noisy.shape != filtered.shape:
        raise ShapeError(f"noisy {noisy.shape} and filtered {filtered.shape} differ")
    clean = read_image(args.clean) if args.clean else None
    if args.masks:
        masks = _masks_from_label_image(args.masks, noisy.shape)
    elif clean is not None:
        masks = homogeneous_masks_from_clean(clean)
    else:
        raise ConfigError(
            "no homogeneous regions available: pass --masks, or --clean to derive them"
        )
    if not masks:
        raise ConfigError(
            "no usable homogeneous region found; supply --masks covering >= 100 pixels"
        )
    report = m_index(noisy, filtered, args.looks, masks, Rng(args.seed))
    payload = report.to_dict()
    if clean is not None:
        payload["psnr"] = psnr(filtered, clean, peak=1.0)
    text = report_to_text(payload)
    _atomic_write(args.report_out, lambda p: open(p, "w", encoding="utf-8").write(text))
    print("m_index = %.12g" % report.m_index)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="specklelab",
        description="SAR despeckling laboratory: simulate speckle, build patch "
                    "datasets, train the despeckling network, filter images and "
                    "score filters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "simulate",
        help="corrupt a clean image with multiplicative speckle",
        description="Read a clean image, draw an L-look speckle field and write "
                    "the noisy product and the field itself. Prints the field's "
                    "empirical mean and variance.",
    )
    p.add_argument("input", help="clean input image (PGM/PPM or DSPKIMG1)")
    p.add_argument("--looks", type=int, default=1, help="number of looks, integer L >= 1 (default 1)")
    p.add_argument("--seed", type=int, default=0, help="stream seed (default 0)")
    p.add_argument("--output-noisy", required=True, help="noisy image output path")
    p.add_argument("--output-speckle", required=True, help="speckle field output path")
    p.add_argument("--format", choices=FORMATS, default=None,
                   help="output format (default: by extension; .pgm -> pgm16, else f32raw)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "dataset",
        help="build a training/validation patch dataset from a corpus directory",
        description="Crop random patches from every readable grayscale image in "
                    "the corpus directory, pair each with a fresh speckle field "
                    "and write a DSPKDAT1 dataset. Prints the patch count and a "
                    "per-source-image histogram.",
    )
    p.add_argument("corpus_dir", help="directory of source images")
    p.add_argument("--count", type=int, required=True, help="number of patches")
    p.add_argument("--patch-size", type=int, default=65, help="patch side length (default 65)")
    p.add_argument("--looks", type=int, default=1, help="number of looks, integer L >= 1 (default 1)")
    p.add_argument("--seed", type=int, default=0, help="stream seed (default 0)")
    p.add_argument("--output", required=True, help="dataset output path")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser(
        "train",
        help="train the despeckling network on a patch dataset",
        description="Defaults: eta 2e-6, lambda 1.0, momentum 0.9, batch 64, "
                    "val-every 100, 10 layers of 64 maps with 3x3 kernels. A "
                    "config file (key = value, # comments) overrides defaults; "
                    "command-line flags override the file. epochs is required. "
                    "Writes the final checkpoint and a history log (one line per "
                    "record: step, train total/c1/c2, val total/c1/c2).",
    )
    p.add_argument("--dataset", required=True, help="training dataset (DSPKDAT1)")
    p.add_argument("--val", required=True, help="validation dataset (DSPKDAT1)")
    p.add_argument("--config", default=None, help="config file path")
    p.add_argument("--checkpoint-out", required=True, help="checkpoint output path")
    p.add_argument("--log-out", required=True, help="history log output path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (required here or in config)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="cost weight lambda (default 1.0)")
    p.add_argument("--eta", type=float, default=None, help="learning rate (default 2e-6)")
    p.add_argument("--momentum", type=float, default=None, help="SGD momentum (default 0.9)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 64)")
    p.add_argument("--looks", type=int, default=None, help="dataset looks annotation, integer (default 1)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default 0)")
    p.add_argument("--val-every", type=int, default=None, help="validation interval in steps (default 100)")
    p.add_argument("--patience", type=int, default=None,
                   help="early-stop patience in validation rounds (default: off)")
    p.add_argument("--layers", type=int, default=None, help="network depth (default 10)")
    p.add_argument("--features", type=int, default=None, help="feature maps per layer (default 64)")
    p.add_argument("--kernel", type=int, default=None, help="kernel size, odd (default 3)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "despeckle",
        help="filter an image with a trained checkpoint",
        description="Tile the input (tile 256, overlap 16 by default), run the "
                    "network in inference mode and write the filtered image; "
                    "optionally also the noisy/filtered ratio image.",
    )
    p.add_argument("--checkpoint", required=True, help="trained DSPKNET1 checkpoint")
    p.add_argument("--input", required=True, help="noisy input image")
    p.add_argument("--output", required=True, help="filtered image output path")
    p.add_argument("--ratio-output", default=None, help="optional ratio image output path")
    p.add_argument("--tile", type=int, default=256, help="tile size (default 256)")
    p.add_argument("--overlap", type=int, default=16, help="tile overlap (default 16)")
    p.add_argument("--format", choices=FORMATS, default=None,
                   help="output format (default: by extension)")
    p.set_defaults(func=cmd_despeckle)

    p = sub.add_parser(
        "evaluate",
        help="score a filtered image (ENL, homogeneity, M-hat, optional PSNR)",
        description="Writes a key = value metric report. Homogeneous regions "
                    "come from --masks (a label image: each distinct nonzero "
                    "integer is one region) or are derived from --clean; with "
                    "--clean the report also includes PSNR at peak 1.0.",
    )
    p.add_argument("--noisy", required=True, help="noisy image")
    p.add_argument("--filtered", required=True, help="filtered image")
    p.add_argument("--clean", default=None, help="clean reference (simulated data)")
    p.add_argument("--looks", type=int, default=1, help="number of looks, integer L >= 1 (default 1)")
    p.add_argument("--masks", default=None, help="label image of homogeneous regions")
    p.add_argument("--seed", type=int, default=0, help="seed for the reference speckle field")
    p.add_argument("--report-out", required=True, help="report output path")
    p.set_defaults(func=cmd_evaluate)

    return parser


def _apply_thread_env() -> None:
    n = os.environ.get("SPECKLELAB_THREADS")
    if n and backend_name() == "numba":
        import numba
        numba.set_num_threads(max(1, int(n)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_env()
        return args.func(args)
    except (ConfigError, EmptyCorpusError, ShapeError) as err:
        _log(f"error: {err}")
        return 1
    except (FormatError, OSError) as err:
        _log(f"error: {err}")
        return 2
    except NumericError as err:
        _log(f"numeric failure: {err}")
        return 3
    except SpeckleLabError as err:
        _log(f"error: {err}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
