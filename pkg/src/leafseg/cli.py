"""Command-line entry point: ``leafseg <subcommand> [options]``.

Every subcommand prints ``seed=<n>`` and a short summary on stdout; errors are
reported as one line on stderr with a non-zero exit status.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .features import FeatureVariant, extract_features
from .filtering import CHANNEL_MODES, NoiseSpec, apply_linear_filter, inject_salt_pepper
from .fixture import make_leaf_fixture
from .image_core import RasterImage, denormalize, read_image, to_grayscale, write_image
from .metrics import SEGMENTATION_MARGIN, percent_hits, score_hits
from .mlp import TrainConfig, init_network, load_network, predict_image, save_network, train
from .segmentation import (DesirableSpec, apply_threshold_select, build_desirable, histogram,
                           otsu_thresholds, pick_keep_class)

DEFAULT_SEED = 2014


def _positive_odd(text: str) -> int:
    value = int(text)
    if value < 1 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"expected a positive odd integer, got {text}")
    return value


def _float_list(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _add_seed(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"RNG seed (default {DEFAULT_SEED})")


def _add_desirable_opts(p):
    p.add_argument("--classes", type=int, choices=(2, 3), default=3, help="Otsu classes (default 3)")
    p.add_argument("--keep", type=int, default=None,
                   help="class to keep (default: class whose mean gray is closest to --target-gray)")
    p.add_argument("--target-gray", type=int, default=255, help="reference tone for --keep (default 255)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leafseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("fixture", help="write the synthetic 320x240 leaf image")
    p.add_argument("--out", required=True, help="output .ppm")
    p.add_argument("--seed", type=int, default=7, help="jitter seed (default 7)")

    p = sub.add_parser("otsu", help="Otsu thresholds of an image and the selected-class mask")
    p.add_argument("--in", dest="input", required=True, help="input .ppm/.pgm")
    p.add_argument("--out", help="write the selected class as a 0/255 .pgm mask")
    _add_desirable_opts(p)

    p = sub.add_parser("filter", help="apply the linear filter of a combination name")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--combo", required=True, help="combination name, e.g. MW3N8E5")

    p = sub.add_parser("noise", help="inject salt-and-pepper noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--density", type=float, required=True, help="fraction of pixels in [0, 1]")
    p.add_argument("--mode", choices=CHANNEL_MODES, default="ALL", help="channel(s) to corrupt")
    _add_seed(p)

    p = sub.add_parser("desirable", help="build a Seed/NSeed target image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("Seed", "NSeed"), default="Seed")
    p.add_argument("--erosion", type=_positive_odd, default=3, help="Seed erosion order (default 3)")
    p.add_argument("--neighbor", choices=("WN", "V4", "V8"), default="WN")
    p.add_argument("--combo", help="combination name; overrides --kind/--erosion/--neighbor and "
                                   "smooths the source first")
    _add_desirable_opts(p)

    p = sub.add_parser("train", help="train a network and save its parameters")
    p.add_argument("--in", dest="input", required=True, help="input image")
    p.add_argument("--target", help="target image (.pgm for segmentation, .ppm for filtering); "
                                    "default: Seed target built from --in")
    p.add_argument("--net", required=True, help="output parameter file")
    p.add_argument("--variant", default="RGB3", choices=[v.tag for v in FeatureVariant])
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--rl", type=float, default=0.01, help="learning rate")
    p.add_argument("--cm", type=float, default=0.9, help="momentum constant")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--fraction", type=float, default=ex.DEFAULT_FRACTION,
                   help="share of pixels used for training")
    p.add_argument("--curve", help="write the per-epoch training MSE as CSV")
    _add_seed(p)

    p = sub.add_parser("segment", help="run a saved network over an image")
    p.add_argument("--net", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="RGB3", choices=[v.tag for v in FeatureVariant])
    p.add_argument("--target", help="optional target image; prints the hit percentage")

    for stage, text in (("stage1", "learning rate / momentum / hidden size sweep"),
                        ("stage2", "144 target-preparation combinations"),
                        ("stage3", "input-variant sweep"),
                        ("stage4", "noise robustness: mean filters vs. AFS vs. AWFS")):
        p = sub.add_parser(stage, help=text)
        p.add_argument("--in", dest="input", required=True, help="source RGB image")
        p.add_argument("--out", required=True, help="CSV report")
        p.add_argument("--config", help="key=value experiment config file")
        p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--rl", type=_float_list, default=None, help="comma-separated learning rates")
        p.add_argument("--cm", type=_float_list, default=None, help="comma-separated momenta")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default 1)")
        p.add_argument("--timings", action="store_true", help="add a wall-clock runtime column")
        if stage == "stage1":
            p.add_argument("--replicate-epochs", type=lambda s: tuple(int(t) for t in s.split(",")),
                           default=None, help="extra epoch budgets for the best runs, e.g. 500,5000")
        if stage == "stage4":
            p.add_argument("--tasks", help="comma list of FilterThenSeg,AFS,AWFS")
            p.add_argument("--records", help="also write per-image records to this CSV")
    return parser


def _write(img: RasterImage, path: str) -> None:
    write_image(img, path)
    print(f"wrote {path} ({img.width}x{img.height}x{img.channels})")


def _cmd_fixture(args):
    _write(make_leaf_fixture(seed=args.seed), args.out)
    print(f"seed={args.seed}")


def _cmd_otsu(args):
    gray = to_grayscale(read_image(args.input))
    thresholds = otsu_thresholds(histogram(gray), args.classes)
    keep = args.keep if args.keep is not None else pick_keep_class(gray, thresholds, args.target_gray)
    print("thresholds=" + ",".join(map(str, thresholds)))
    print(f"keep_class={keep}")
    if args.out:
        mask = apply_threshold_select(gray, thresholds, keep)
        _write(RasterImage(np.where(mask, 255, 0).astype(np.uint8)), args.out)


def _cmd_filter(args):
    combo = ex.parse_combo_name(args.combo)
    _write(apply_linear_filter(read_image(args.input), combo.mask()), args.out)


def _cmd_noise(args):
    img = read_image(args.input)
    _write(inject_salt_pepper(img, NoiseSpec(args.density, args.mode, args.seed)), args.out)
    print(f"seed={args.seed}")


def _cmd_desirable(args):
    img = read_image(args.input)
    preprocess = None
    if args.combo:
        combo = ex.parse_combo_name(args.combo)
        erosion, neighbor, preprocess = combo.erosion_order, combo.neighbor_mode, combo.mask()
    else:
        erosion = args.erosion if args.kind == "Seed" else 0
        neighbor = args.neighbor
    spec = DesirableSpec(args.classes, args.keep, erosion, neighbor, args.target_gray)
    target = build_desirable(img, spec, preprocess)
    _write(target, args.out)
    print(f"kind={spec.kind} region_pixels={int(np.count_nonzero(target.plane()))}")


def _cmd_train(args):
    img = read_image(args.input)
    if args.target:
        target = read_image(args.target)
    else:
        target = build_desirable(img, DesirableSpec(erosion_order=3))
    if (target.width, target.height) != (img.width, img.height):
        raise ValueError(f"target {args.target} size differs from input {args.input}")
    variant = FeatureVariant.from_tag(args.variant)
    feats = extract_features(img, variant)
    sample = ex.sample_training_set(img.width, img.height, args.fraction, ex.derive_seed(args.seed, 1))
    targets = target.data.reshape(-1, target.channels)[sample.training] / 255.0
    net = init_network((variant.arity, args.hidden, target.channels), args.seed)
    cfg = TrainConfig(args.rl, args.cm, args.epochs, args.seed)
    net, curve = train(net, feats.vectors[sample.training], targets, cfg)
    save_network(net, args.net)
    if args.curve:
        Path(args.curve).write_text("epoch,mse\n" + "".join(
            f"{i},{v:.6f}\n" for i, v in enumerate(curve, 1)))
    print(f"seed={args.seed}")
    print(f"wrote {args.net} layers={'-'.join(map(str, net.layer_sizes))} final_mse={curve[-1]:.5f}")


def _cmd_segment(args):
    net = load_network(args.net)
    img = read_image(args.input)
    variant = FeatureVariant.from_tag(args.variant)
    if variant.arity != net.n_inputs:
        raise ValueError(f"network takes {net.n_inputs} inputs but variant {variant.tag} has {variant.arity}")
    out = denormalize(predict_image(net, extract_features(img, variant)))
    _write(out, args.out)
    if args.target:
        phe = percent_hits(score_hits(out, read_image(args.target), SEGMENTATION_MARGIN))
        print(f"phe={phe:.2f}")


def _stage_config(args) -> ex.ExperimentConfig:
    overrides = {"seed": args.seed, "epochs": args.epochs, "rl_grid": args.rl,
                 "cm_grid": args.cm, "jobs": args.jobs,
                 "replicate_epochs": getattr(args, "replicate_epochs", None),
                 "stage4_tasks": getattr(args, "tasks", None)}
    if args.config:
        return ex.ExperimentConfig.from_file(args.config, **overrides)
    return ex.ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _cmd_stage(args):
    cfg = _stage_config(args)
    img = read_image(args.input)
    run = {"stage1": ex.run_stage1, "stage2": ex.run_stage2,
           "stage3": ex.run_stage3, "stage4": ex.run_stage4}[args.command]
    meta_name = args.input
    report = run(img, cfg, source_name=meta_name)
    if args.config:
        report.meta["config"] = args.config
    size = ex.write_report(report, args.out, include_runtime=args.timings)
    if args.command == "stage4" and args.records:
        ex.write_records(report, args.records, include_runtime=args.timings)
    print(f"seed={cfg.seed}")
    print(f"wrote {args.out} ({len(report.records)} simulations, {size} bytes)")


_COMMANDS = {"fixture": _cmd_fixture, "otsu": _cmd_otsu, "filter": _cmd_filter, "noise": _cmd_noise,
             "desirable": _cmd_desirable, "train": _cmd_train, "segment": _cmd_segment,
             "stage1": _cmd_stage, "stage2": _cmd_stage, "stage3": _cmd_stage, "stage4": _cmd_stage}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"leafseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
