"""Command-line entry points: data generation, training, reconstruction and style editing.

Every command prints a JSON summary on stdout and exits 0; failures print a
single ``error: <kind>: <message>`` line on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError
from .imageio import ImageFormatError, read_pgm, read_ppm, write_pgm, write_ppm
from .losses import RandomConvExtractor
from .metrics import feature_statistics, frechet_distance, psnr, rmse, segmentation_scores, ssim, to_unit_range
from .networks import crossover_forward
from .regions import StyleMatrix, assemble_styles, blend_styles
from .tensor import ShapeError, Tensor
from .training import TrainConfig, desk_model_config, gen_synthetic_dataset, load_state, train

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CommandError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CommandError(f"usage: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _load_model(path):
    state = load_state(path)
    model = state.model.eval()
    return model, state.config


def _require_unified(model) -> None:
    if model.cfg.encoder_variant != "unified":
        raise CommandError(f"style editing needs the unified encoder, checkpoint uses {model.cfg.encoder_variant!r}")


def _pair_arg(text: str) -> tuple[Path, Path]:
    image, sep, mask = text.partition(",")
    if not sep or not image or not mask:
        raise CommandError(f"expected IMAGE,MASK but got {text!r}")
    return Path(image), Path(mask)


def _encode(model, image_path, mask_path) -> tuple[StyleMatrix, np.ndarray]:
    image, labels = read_ppm(image_path), read_pgm(mask_path)
    with T.no_grad():
        st = model.encode(Tensor(image[None]), labels[None])
    return st, labels


def _generate(model, st, labels) -> np.ndarray:
    with T.no_grad():
        return model.generator(st, labels[None]).data[0]


def _image_metrics(out: np.ndarray, ref: np.ndarray) -> dict:
    a, b = to_unit_range(out), to_unit_range(ref)
    return {"psnr": psnr(a, b), "ssim": ssim(a, b), "rmse": rmse(a, b)}


def _write_output(path, image) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return str(write_ppm(path, image))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = gen_synthetic_dataset(args.n, args.labels, args.size, args.seed)
    entries = []
    for i, sample in enumerate(samples):
        image, mask = f"sample_{i:05d}.ppm", f"sample_{i:05d}_mask.pgm"
        write_ppm(out / image, sample.image)
        write_pgm(out / mask, sample.mask)
        entries.append({"image": image, "mask": mask, "style_seeds": sample.style_seeds})
    manifest = {"n": args.n, "num_labels": args.labels, "size": args.size, "seed": args.seed, "samples": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return {"out": str(out), "samples": len(entries)}


def load_dataset(directory) -> tuple[np.ndarray, np.ndarray, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    images = np.stack([read_ppm(directory / e["image"]) for e in manifest["samples"]])
    masks = np.stack([read_pgm(directory / e["mask"]) for e in manifest["samples"]])
    return images, masks, manifest


# keys accepted in a ``key = value`` config file besides TrainConfig fields
_EXTRA_KEYS = {"data": str, "num_samples": int, "gen_input": str, "encoder_variant": str}


def _field_types() -> dict:
    types = {}
    for f in fields(TrainConfig):
        if f.name == "model":
            continue
        default = f.default
        types[f.name] = type(default)
    types.update(_EXTRA_KEYS)
    return types


def _parse_value(kind, text: str):
    if kind is bool:
        lowered = text.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise CommandError(f"not a boolean: {text!r}")
        return lowered in ("true", "1", "yes")
    return kind(text)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    types = _field_types()
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep:
            raise CommandError(f"{path}:{lineno}: expected key = value")
        if key not in types:
            raise CommandError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(types[key], value)
        except ValueError as err:
            raise CommandError(f"{path}:{lineno}: bad value for {key}: {err}") from err
    return values


def build_train_config(args) -> tuple[TrainConfig, dict]:
    values = read_config_file(args.config) if args.config else {}
    for key in _field_types():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    extras = {k: values.pop(k) for k in list(values) if k in _EXTRA_KEYS}
    model = desk_model_config(
        values.get("image_size", 32), values.get("num_labels", 3), values.get("style_dim", 32)
    )
    if "gen_input" in extras:
        model.generator.gen_input = extras["gen_input"]
        model.generator.validate()
    if "encoder_variant" in extras:
        model = type(model)(model.generator, model.encoder, model.discriminator, extras["encoder_variant"])
    return TrainConfig(model=model, **values), extras


def cmd_train(args) -> dict:
    cfg, extras = build_train_config(args)
    if extras.get("data"):
        images, masks, manifest = load_dataset(extras["data"])
        if manifest["num_labels"] != cfg.num_labels:
            raise CommandError(f"dataset has {manifest['num_labels']} labels, config expects {cfg.num_labels}")
    else:
        samples = gen_synthetic_dataset(extras.get("num_samples", 16), cfg.num_labels, cfg.image_size, cfg.seed)
        images, masks = np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])
    result = train(cfg, (images, masks), out_dir=args.out)
    return {
        "checkpoint": str(result.checkpoint_path),
        "log": str(Path(args.out) / "log.csv"),
        "steps": cfg.steps,
        "psnr_initial": result.psnr_initial,
        "psnr_final": result.psnr_final,
    }


def cmd_reconstruct(args) -> dict:
    model, _ = _load_model(args.checkpoint)
    image, labels = read_ppm(args.image), read_pgm(args.mask)
    if image.shape[1:] != labels.shape:
        raise CommandError(f"image {image.shape[1:]} and mask {labels.shape} sizes differ")
    with T.no_grad():
        out = model(Tensor(image[None]), labels[None]).data[0]
    path = _write_output(args.out, out)
    metrics = _image_metrics(read_ppm(path) if args.quantized_metrics else out, image)
    return {"output": path, **metrics}


def cmd_edit(args) -> dict:
    model, cfg = _load_model(args.checkpoint)
    _require_unified(model)
    labels = read_pgm(args.mask)
    s, d = cfg.num_labels, cfg.style_dim
    sources: dict[int, StyleMatrix] = {}
    cache: dict[tuple[Path, Path], StyleMatrix] = {}
    for item in args.assign or []:
        region_text, sep, pair = item.partition("=")
        if not sep:
            raise CommandError(f"expected REGION=IMAGE,MASK but got {item!r}")
        region = int(region_text)
        if not 0 <= region < s:
            raise CommandError(f"region {region} outside 0..{s - 1}")
        key = _pair_arg(pair)
        if key not in cache:
            cache[key] = _encode(model, *key)[0]
        sources[region] = cache[key]
        if not cache[key].present[0, region]:
            _warn(f"region {region} does not occur in {key[1]}; using the fallback style")
    st = assemble_styles(sources, s, d)
    path = _write_output(args.out, _generate(model, st, labels))
    return {"output": path, "assigned": sorted(sources)}


def cmd_interpolate(args) -> dict:
    if not 0.0 <= args.t <= 1.0:
        raise CommandError(f"t must lie in [0, 1], got {args.t}")
    model, _ = _load_model(args.checkpoint)
    _require_unified(model)
    labels = read_pgm(args.mask)
    st_a, _ = _encode(model, *_pair_arg(args.style_a))
    st_b, _ = _encode(model, *_pair_arg(args.style_b))
    regions = [int(r) for r in args.regions.split(",")] if args.regions else None
    st = blend_styles(st_a, st_b, args.t, regions)
    path = _write_output(args.out, _generate(model, st, labels))
    return {"output": path, "t": args.t, "regions": regions}


def cmd_crossover(args) -> dict:
    model, _ = _load_model(args.checkpoint)
    _require_unified(model)
    labels = read_pgm(args.mask)
    st_a, _ = _encode(model, *_pair_arg(args.style_a))
    st_b, _ = _encode(model, *_pair_arg(args.style_b))
    with T.no_grad():
        out = crossover_forward(model.generator, st_a, st_b, list(args.selection), labels[None]).data[0]
    return {"output": _write_output(args.out, out), "selection": args.selection}


def _fid_features(directory, extractor) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.ppm"))
    if len(paths) < 2:
        raise CommandError(f"{directory}: need at least two .ppm images for feature statistics")
    feats = []
    for p in paths:
        last = extractor(Tensor(read_ppm(p)[None]))[-1].data
        feats.append(last.mean(axis=(2, 3))[0])
    return np.stack(feats)


def cmd_metrics(args) -> dict:
    out = {}
    if args.a or args.b:
        if not (args.a and args.b):
            raise CommandError("--a and --b must be given together")
        a, b = read_ppm(args.a), read_ppm(args.b)
        out.update(_image_metrics(a, b))
    if args.mask_pred or args.mask_gt:
        if not (args.mask_pred and args.mask_gt):
            raise CommandError("--mask-pred and --mask-gt must be given together")
        pred, gt = read_pgm(args.mask_pred), read_pgm(args.mask_gt)
        s = args.labels if args.labels else int(max(pred.max(), gt.max())) + 1
        out["miou"], out["accu"] = segmentation_scores(pred, gt, s)
    if args.fid:
        # random-feature distance: comparable only between runs using the same extractor seed
        extractor = RandomConvExtractor(seed=args.fid_seed)
        stats = [feature_statistics(_fid_features(d, extractor)) for d in args.fid]
        out["frechet_distance"] = frechet_distance(*stats[0], *stats[1])
    if not out:
        raise CommandError("nothing to measure: give --a/--b, --mask-pred/--mask-gt or --fid")
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sean", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset of PPM images and PGM masks")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--labels", type=int, default=3)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="reconstruction training; writes checkpoint.ckpt and log.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="file of key = value lines; flags override it")
    p.add_argument("--data", help="directory written by gen-data (default: synthesize in memory)")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--image-size", type=int)
    p.add_argument("--num-labels", type=int)
    p.add_argument("--style-dim", type=int)
    p.add_argument("--lambda-fm", type=float)
    p.add_argument("--lambda-percept", type=float)
    p.add_argument("--log-interval", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--noise", dest="noise_enabled", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--gen-input", choices=("const", "mask"))
    p.add_argument("--encoder-variant", choices=("unified", "resblk", "sean"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="encode an image and regenerate it from its own styles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quantized-metrics", action="store_true", help="measure the 8-bit file instead")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("edit", help="assemble per-region styles from several images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--assign", action="append", metavar="REGION=IMAGE,MASK")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("interpolate", help="blend two style matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--style-a", required=True, metavar="IMAGE,MASK")
    p.add_argument("--style-b", required=True, metavar="IMAGE,MASK")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--regions", help="comma-separated region ids (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("crossover", help="choose style A or B per residual block")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--style-a", required=True, metavar="IMAGE,MASK")
    p.add_argument("--style-b", required=True, metavar="IMAGE,MASK")
    p.add_argument("--selection", required=True, help="one A/B letter per style-injected block, e.g. AABB")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("metrics", help="image, segmentation and feature-distance measures")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--mask-pred")
    p.add_argument("--mask-gt")
    p.add_argument("--labels", type=int)
    p.add_argument("--fid", nargs=2, metavar="DIR")
    p.add_argument("--fid-seed", type=int, default=1234)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _emit(args.func(args))
        return 0
    except CommandError as err:
        kind, code = ("usage", EXIT_USAGE) if str(err).startswith("usage: ") else ("command", EXIT_FAILURE)
        message = str(err).removeprefix("usage: ")
    except FileNotFoundError as err:
        kind, code, message = "file", EXIT_FAILURE, f"{err.strerror}: {err.filename}"
    except (OSError, ValueError, KeyError, CheckpointError, ImageFormatError, ShapeError) as err:
        kind, code, message = type(err).__name__, EXIT_FAILURE, str(err)
    print(f"error: {kind}: {' '.join(message.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
