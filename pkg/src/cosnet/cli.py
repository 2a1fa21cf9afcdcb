"""Command-line entry point: ``cosnet <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import CosnetError, GeometryError
from .metrics import ConfusionMatrix, accumulate, format_report
from .model import ModelConfig, build_model, check_params, forward, parameter_count
from .sharpen import ImageBuffer, sharpen_image
from .tensor import no_grad

log = logging.getLogger("cosnet")


def _model_from_args(args) -> tuple[ModelConfig, int]:
    if args.config:
        return io.load_config(args.config)
    return ModelConfig(), 0


def cmd_sharpen(args) -> int:
    buf = io.load_image(args.input)
    out, report = sharpen_image(buf, args.radius, args.k)
    io.save_image(out, args.output)
    if args.report:
        print(report)
    return 0


def _image_tensor(buf: ImageBuffer, cfg: ModelConfig) -> np.ndarray:
    real = buf.to_real()
    if real.shape[2] != cfg.input_channels:
        if real.shape[2] == 1:
            real = np.repeat(real, cfg.input_channels, axis=2)
        else:
            raise GeometryError(f"image has {real.shape[2]} channels, model expects {cfg.input_channels}")
    return real.transpose(2, 0, 1)[None]


def cmd_forward(args) -> int:
    cfg, seed = _model_from_args(args)
    if args.ckpt:
        params, _ = io.load_checkpoint(args.ckpt, expected=cfg)
    else:
        params = build_model(cfg, seed)
    check_params(params, cfg)
    image = _image_tensor(io.load_image(args.input), cfg)
    with no_grad():
        logits, pyr = forward(image, params, cfg, return_pyramid=True)
    mask = np.argmax(logits.data, axis=1)[0]
    io.save_mask(mask, args.out)
    if args.dump_features:
        io.dump_features(args.dump_features, pyr.levels())
    print(f"wrote {args.out} ({mask.shape[1]}x{mask.shape[0]}, classes present: {sorted(set(mask.ravel().tolist()))})")
    return 0


def cmd_gradcheck(args) -> int:
    from .suite import format_results, run_gradient_suite

    results = run_gradient_suite(seed=args.seed)
    print(format_results(results, args.threshold))
    worst = max(r.max_rel_error for r in results)
    print(f"worst: {worst:.3e} (threshold {args.threshold:g})")
    return 0 if worst < args.threshold else 1


def cmd_train_toy(args) -> int:
    from .train import ToySpec, generate_toy_dataset, train_toy

    cfg, cfg_seed = _model_from_args(args)
    seed = cfg_seed if args.seed is None else args.seed
    data = generate_toy_dataset(ToySpec(seed=seed, num_images=args.images, size=args.size, num_classes=cfg.num_classes))
    rows = []

    def on_step(it, loss, lr):
        rows.append((it, loss, lr))
        if it % args.print_every == 0 or it == args.iters - 1:
            print(f"{it:6d}  {loss:12.6f}  {lr:10.3e}")

    print(f"{'iter':>6}  {'loss':>12}  {'lr':>10}")
    result = train_toy(cfg, data, args.iters, seed, lr=args.lr, weight_decay=args.weight_decay, on_step=on_step)
    io.save_checkpoint(args.out, result.params, cfg)
    curve = Path(args.curve) if args.curve else Path(args.out).with_suffix(".csv")
    with open(curve, "w") as fh:
        fh.write("iter,loss,lr\n")
        for it, loss, lr in rows:
            fh.write(f"{it},{loss!r},{lr!r}\n")
    initial = rows[0][1] if rows else result.final_loss
    print(f"final loss {result.final_loss:.6f} ({result.final_loss / initial:.2%} of initial)")
    print(f"train mIoU {result.train_miou:.4f}")
    print(f"checkpoint: {args.out}  loss curve: {curve}")
    return 0


def _read_labels(path: Path) -> np.ndarray:
    """PGM masks hold label values directly; PPM masks use the default palette."""
    if path.suffix.lower() == ".pgm":
        buf = io.load_image(path)
        return buf.pixels[:, :, 0].astype(np.int64)
    return io.load_mask(path)


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    gts = sorted(p for p in gt_dir.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    if not gts:
        raise CosnetError(f"no .ppm/.pgm masks in {gt_dir}")
    conf = ConfusionMatrix(args.classes)
    for gt_path in gts:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise CosnetError(f"missing prediction for {gt_path.name}")
        conf = accumulate(conf, _read_labels(pred_path), _read_labels(gt_path), args.ignore)
    print(f"evaluated {len(gts)} masks")
    print(format_report(conf))
    return 0


def cmd_ablate(args) -> int:
    cfg, seed = _model_from_args(args)
    counts = []
    print(f"{'row':>3}  {'MCFS':>4}  {'SM':>3}  {'BEM':>3}  {'params':>10}")
    for row in (1, 2, 3, 4):
        variant = cfg.ablation(row)
        n = parameter_count(variant)
        counts.append(n)
        flags = ["x" if f else "-" for f in (variant.use_mcfs, variant.use_sm, variant.use_bem)]
        print(f"{row:>3}  {flags[0]:>4}  {flags[1]:>3}  {flags[2]:>3}  {n:>10d}")
    increasing = all(a < b for a, b in zip(counts, counts[1:]))
    print("parameter counts strictly increasing" if increasing else "parameter counts NOT strictly increasing")
    return 0 if increasing else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sharpen", help="unsharp mask / high-boost filter a PPM or PGM image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--report", action="store_true", help="print edge strength before and after")
    p.set_defaults(func=cmd_sharpen)

    p = sub.add_parser("forward", help="segment one image")
    p.add_argument("--config")
    p.add_argument("--ckpt", help="checkpoint; omitted means seeded random init")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output colour mask (PPM)")
    p.add_argument("--dump-features", help="write F1..F5 feature maps to this file")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="overfit the synthetic toy dataset")
    p.add_argument("--config")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="CSV loss curve path (default: next to checkpoint)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--print-every", type=int, default=25)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--ignore", type=int, default=255)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="build the four enhancement-module variants and count parameters")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CosnetError, OSError, ValueError) as exc:
        print(f"cosnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
