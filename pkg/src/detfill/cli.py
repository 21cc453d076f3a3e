"""Command-line front end.

Subcommands: genmasks, train, infer, evaluate, visualize. A YAML config
file (keys mirroring TrainConfig, nested loss section) drives training;
individual keys can be overridden with repeated --set key=value flags.
Every command validates its flags before touching the filesystem and
returns exit code 0 only when its contract held.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import CheckpointError
from .imaging import (
    composite_output,
    export_colormap,
    load_image,
    load_mask,
    save_image,
    save_mask,
)
from .maskgen import BUCKETS, generate_mask_in_bucket, mask_ratio
from .metrics import PixelProjectionExtractor, evaluate_dataset, inception_extractor
from .training import config_from_dict, load_train_state, train_loop

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def _fail(message):
    print(f"error: {message}", file=sys.stderr)
    return 1


def _list_images(directory):
    files = sorted(
        p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise ValueError(f"no images found in {directory}")
    return files


def _load_masks(directory, size):
    """Collect masks from bucket_* subdirectories (or a flat directory)."""
    root = Path(directory)
    bucket_dirs = sorted(d for d in root.iterdir() if d.is_dir() and d.name.startswith("bucket_"))
    if bucket_dirs:
        files = [p for d in bucket_dirs for p in sorted(d.glob("*.png"))]
    else:
        files = sorted(root.glob("*.png"))
    if not files:
        raise ValueError(f"no mask PNGs found in {directory}")
    return [load_mask(p, size) for p in files]


def _load_masks_bucketed(directory, size):
    root = Path(directory)
    buckets = {}
    for d in sorted(root.iterdir()):
        if not (d.is_dir() and d.name.startswith("bucket_")):
            continue
        index = int(d.name.split("_", 1)[1])
        masks = [load_mask(p, size) for p in sorted(d.glob("*.png"))]
        if masks:
            buckets[index] = masks
    if not buckets:
        raise ValueError(f"no bucket_* mask directories found in {directory}")
    return buckets


# ---------------------------------------------------------------------------
# genmasks

def cmd_genmasks(args):
    out = Path(args.out)
    summary = {}
    generated = []
    for bucket in BUCKETS:
        ratios = []
        for index in range(args.count):
            try:
                mask = generate_mask_in_bucket(
                    bucket,
                    args.size,
                    args.seed,
                    index,
                    border_constrained=args.border,
                    max_attempts=args.max_attempts,
                )
            except RuntimeError as exc:
                return _fail(
                    f"bucket {bucket.index} quota unmet at mask {index}: {exc}"
                )
            generated.append((bucket.index, index, mask))
            ratios.append(mask_ratio(mask))
        summary[f"bucket_{bucket.index}"] = {
            "bounds": [bucket.lower, bucket.upper],
            "count": len(ratios),
            "ratios": ratios,
        }
    for bucket_index, index, mask in generated:
        bucket_dir = out / f"bucket_{bucket_index}"
        bucket_dir.mkdir(parents=True, exist_ok=True)
        save_mask(mask, bucket_dir / f"{index:04d}.png")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(generated)} masks under {out}")
    return 0


# ---------------------------------------------------------------------------
# train

def _parse_set_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        value = yaml.safe_load(raw)
        node = overrides
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return overrides


def _merge(base, extra):
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_train_config(config_path=None, set_overrides=None, seed=None):
    raw = {}
    if config_path is not None:
        loaded = yaml.safe_load(Path(config_path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config root must be a mapping, got {type(loaded).__name__}")
        raw = loaded
    _merge(raw, _parse_set_overrides(set_overrides))
    if seed is not None:
        raw["seed"] = seed
    return config_from_dict(raw)


def cmd_train(args):
    try:
        cfg = load_train_config(args.config, args.set, args.seed)
    except (ValueError, TypeError, yaml.YAMLError, OSError) as exc:
        return _fail(exc)
    try:
        image_files = _list_images(args.images)
        images = [load_image(p, cfg.image_size) for p in image_files]
        masks = _load_masks(args.masks, cfg.image_size)
        state = train_loop(cfg, images, masks, args.out, resume=args.resume)
    except (ValueError, CheckpointError, OSError, RuntimeError) as exc:
        return _fail(exc)
    print(f"finished at step {state.step}; artifacts under {args.out}")
    return 0


# ---------------------------------------------------------------------------
# inference helpers shared by infer/evaluate/visualize

def _generator_fn(state):
    import torch

    gen = state.generator
    gen.eval()
    size = state.config.image_size

    def infer(gt, mask):
        img = torch.from_numpy(
            np.ascontiguousarray(np.asarray(gt, dtype=np.float32).transpose(2, 0, 1))
        )[None]
        m = torch.from_numpy(np.asarray(mask, dtype=np.float32))[None, None]
        i_in = img * (1.0 - m) + m
        with torch.no_grad():
            out = gen(i_in, m)
        return out[0].numpy().transpose(1, 2, 0).astype(np.float64)

    return infer, size


def cmd_infer(args):
    try:
        state = load_train_state(args.checkpoint)
        infer, size = _generator_fn(state)
        gt = load_image(args.image, size)
        mask = load_mask(args.mask, size)
        out = infer(gt, mask)
        if args.composite:
            out = composite_output(out, gt, mask)
        save_image(out, args.out)
    except (ValueError, CheckpointError, OSError) as exc:
        return _fail(exc)
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args):
    if args.fid and args.extractor is None:
        return _fail("--fid needs --extractor (bundled or inception)")
    extractor = None
    if args.fid:
        if args.extractor == "bundled":
            extractor = PixelProjectionExtractor()
        else:
            try:
                extractor = inception_extractor()
            except Exception as exc:  # torchvision/weights genuinely optional
                return _fail(f"inception extractor unavailable: {exc}")
    try:
        state = load_train_state(args.checkpoint)
        infer, size = _generator_fn(state)
        image_files = _list_images(args.images)
        images = [load_image(p, size) for p in image_files]
        masks_by_bucket = _load_masks_bucketed(args.masks, size)
        report = evaluate_dataset(
            infer, images, masks_by_bucket, composite=args.composite, extractor=extractor
        )
    except (ValueError, CheckpointError, OSError, ArithmeticError) as exc:
        return _fail(exc)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_visualize(args):
    import torch

    try:
        state = load_train_state(args.checkpoint)
    except (ValueError, CheckpointError, OSError) as exc:
        return _fail(exc)
    if state.config.mode != "det":
        return _fail(
            f"checkpoint was trained in {state.config.mode!r} mode and has no "
            "artifact detector; visualization needs a det-mode checkpoint"
        )
    try:
        infer, size = _generator_fn(state)
        gt = load_image(args.image, size)
        mask = load_mask(args.mask, size)
        out = infer(gt, mask)

        det = state.auxiliary
        det.eval()

        def valuation(img):
            t = torch.from_numpy(
                np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1))
            )[None]
            with torch.no_grad():
                return det(t)[0].numpy().astype(np.float64)

        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        v_out = valuation(out)
        v_gt = valuation(gt)
        export_colormap(v_out, out_dir / "valuation_out.png")
        export_colormap(v_gt, out_dir / "valuation_gt.png")
        from .imaging import valuation_to_rgb

        panel = np.concatenate([valuation_to_rgb(v_out), valuation_to_rgb(v_gt)], axis=1)
        from PIL import Image

        Image.fromarray(panel, mode="RGB").save(out_dir / "panel.png")
        save_image(out, out_dir / "prediction.png")
    except (ValueError, CheckpointError, OSError) as exc:
        return _fail(exc)
    print(f"wrote valuation maps under {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="detfill",
        description="Detection-guided inpainting: masks, training, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmasks", help="generate bucketed stroke masks")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=10, help="masks per bucket")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--border", action="store_true", help="keep holes away from the border")
    p.add_argument("--max-attempts", type=int, default=200)
    p.set_defaults(func=cmd_genmasks)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted paths)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--images", required=True, help="training image directory")
    p.add_argument("--masks", required=True, help="training mask directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="inpaint one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--composite", action="store_true", help="paste prediction into valid regions of the input")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score a checkpoint over bucketed masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="test image directory")
    p.add_argument("--masks", required=True, help="bucketed mask directory (bucket_*/)")
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--composite", action="store_true")
    p.add_argument("--fid", action="store_true", help="also compute the Fréchet feature distance")
    p.add_argument("--extractor", choices=("bundled", "inception"), help="feature extractor for --fid")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="export detector valuation colormaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
