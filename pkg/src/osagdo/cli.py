"""Batch command line: fixture, densify, train, eval, predict, ablate.

Exit codes: 0 success, 2 usage or validation error, 1 internal error.
"""
from __future__ import annotations

import argparse
import importlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import cv2
import numpy as np

from . import data, trainer
from .checkpoint import Checkpoint, CheckpointError
from .core import Image, resample
from .encoders import EncoderSpec
from .model import TrainConfig, predict
from .oekfm import dump_region, weight_map

log = logging.getLogger("osagdo")

OVERLAY_ALPHA = 0.5


class UsageError(Exception):
    """Bad arguments or inputs; reported with exit code 2."""


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    doc = json.loads(p.read_text())
    unknown = set(doc) - {"train", "encoder", "adapter_modules"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _build_configs(args) -> tuple[TrainConfig, EncoderSpec]:
    doc = _load_config(getattr(args, "config", None))
    for mod in doc.get("adapter_modules", []):
        importlib.import_module(mod)
    train_kw = dict(doc.get("train", {}))
    valid = {f.name for f in fields(TrainConfig)}
    bad = set(train_kw) - valid
    if bad:
        raise UsageError(f"unknown train config keys: {sorted(bad)}")
    overrides = {
        "seed": args.seed, "iterations": getattr(args, "iters", None), "lr": getattr(args, "lr", None),
        "n_features": getattr(args, "n_features", None), "loss": getattr(args, "loss", None),
    }
    train_kw.update({k: v for k, v in overrides.items() if v is not None})
    for flag, key in (("no_defosem", "defosem_on"), ("no_cocoop", "cocoop_on"),
                      ("no_oekfm", "oekfm_on"), ("no_channel_gate", "channel_gate_on"),
                      ("no_spatial_gate", "spatial_gate_on")):
        if getattr(args, flag, False):
            train_kw[key] = False
    enc_kw = dict(doc.get("encoder", {}))
    if getattr(args, "encoder", None):
        enc_kw["kind"] = args.encoder
    try:
        return TrainConfig(**train_kw), EncoderSpec(**enc_kw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def _manifest(path) -> data.Manifest:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    return data.load_manifest(p)


def _checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except FileNotFoundError as e:
        raise UsageError(f"checkpoint not found: {path}") from e
    except CheckpointError as e:
        raise UsageError(str(e)) from e


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fixture(args) -> int:
    path = data.make_fixture(args.seed if args.seed is not None else 7, _out(args))
    print(path)
    return 0


def cmd_densify(args) -> int:
    m = _manifest(args.manifest)
    written = []
    for r in m.records:
        written += data.write_dense_cache(r, args.sigma)
    print(f"wrote {len(written)} heatmaps (sigma={args.sigma:g})")
    return 0


def cmd_train(args) -> int:
    cfg, enc = _build_configs(args)
    m = _manifest(args.manifest)
    split = data.one_shot_split(m.records)
    out = _out(args)
    every = max(1, cfg.iterations // 20)

    def progress(t, loss):
        if t % every == 0 or t == cfg.iterations - 1:
            log.info("iter %d loss %.5f", t, loss)

    res = trainer.train(cfg, split, enc, m.affordances, m.flip_pairs, progress=progress)
    res.checkpoint.save(out / "checkpoint.bin")
    res.write_loss_csv(out / "loss.csv")
    print(out / "checkpoint.bin")
    return 0


def _select(m: data.Manifest, which: str):
    split = data.one_shot_split(m.records)
    return {"train": split.train, "test": split.test, "all": m.records}[which]


def cmd_eval(args) -> int:
    ckpt = _checkpoint(args.ckpt)
    m = _manifest(args.manifest)
    cfg = ckpt.config
    use_oekfm = False if args.no_oekfm else cfg.oekfm_on
    oekfm_cfg = cfg.oekfm if args.n_features is None else \
        TrainConfig(**{**asdict(cfg), "n_features": args.n_features}).oekfm
    report = trainer.evaluate(ckpt, _select(m, args.split), use_oekfm=use_oekfm, oekfm_cfg=oekfm_cfg)
    out = _out(args)
    report.to_json(out / "report.json")
    report.to_tsv(out / "report.tsv")
    print(f"KLD {report.kld:.4f}  SIM {report.sim:.4f}  NSS {report.nss:.4f}  "
          f"({len(report.rows)} maps, {report.skipped} skipped)")
    return 0


def overlay(pixels: np.ndarray, heat: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Jet-coloured heatmap alpha-blended over an RGB image (RGB out)."""
    h8 = np.round(np.clip(heat, 0, 1) * 255).astype(np.uint8)
    colour = cv2.cvtColor(cv2.applyColorMap(h8, cv2.COLORMAP_JET), cv2.COLOR_BGR2RGB)
    blend = (1 - alpha) * pixels.astype(np.float64) + alpha * colour.astype(np.float64)
    return np.clip(np.round(blend), 0, 255).astype(np.uint8)


def cmd_predict(args) -> int:
    ckpt = _checkpoint(args.ckpt)
    model = ckpt.model
    names = args.affordance or model.affordances
    unknown = [a for a in names if a not in model.affordances]
    if unknown:
        raise UsageError(f"unknown affordance(s) {unknown}; vocabulary: {', '.join(model.affordances)}")
    src_path = Path(args.image)
    if not src_path.is_file():
        raise UsageError(f"image not found: {src_path}")
    src = data.read_image(src_path)
    size = model.enc.input_size
    px = resample(src.pixels.astype(np.float64), size, size)
    img = Image(np.clip(np.round(px), 0, 255).astype(np.uint8))
    oekfm_cfg = model.cfg.oekfm if args.n_features is None else \
        TrainConfig(**{**asdict(model.cfg), "n_features": args.n_features}).oekfm
    use_oekfm = model.cfg.oekfm_on and not args.no_oekfm
    pred = predict(model, img, use_oekfm=use_oekfm, source=src, oekfm_cfg=oekfm_cfg)
    out = _out(args)
    stem = src_path.stem
    for a in names:
        heat = resample(pred.P_final[model.affordances.index(a)], src.height, src.width)
        data.write_heatmap16(out / f"{stem}_{a}.png", heat)
        data.write_image(out / f"{stem}_{a}_overlay.png", Image(overlay(src.pixels, heat)))
    if args.dump_oekfm:
        M, M_prime = (pred.M, pred.M_prime) if pred.M is not None else \
            weight_map(src, pred.F_pred.shape[1:], oekfm_cfg)
        dump_region(M, resample(M_prime, src.height, src.width), out, stem)
    print(f"wrote {len(names)} heatmaps to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg, enc = _build_configs(args)
    m = _manifest(args.manifest)
    split = data.one_shot_split(m.records)
    rows = trainer.ablation_sweep(cfg, args.axis, split, enc, m.affordances, m.flip_pairs)
    out = _out(args)
    table = trainer.format_table(rows)
    (out / f"ablation_{args.axis}.tsv").write_text(table)
    (out / f"ablation_{args.axis}.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(table, end="")
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--iters", type=int, help="training iterations (default 10000)")
    p.add_argument("--lr", type=float, help="SGD learning rate (default 0.01)")
    p.add_argument("--n-features", type=int, help="max ORB keypoints (default 400)")
    p.add_argument("--no-defosem", action="store_true", help="disable feature enhancement")
    p.add_argument("--no-cocoop", action="store_true", help="static prompts (no Meta-Net shift)")
    p.add_argument("--no-oekfm", action="store_true", help="disable keypoint fusion at evaluation")
    p.add_argument("--no-channel-gate", action="store_true", help="disable the channel gate")
    p.add_argument("--no-spatial-gate", action="store_true", help="disable the spatial gate")
    p.add_argument("--loss", choices=("bce", "kld"), help="grounding loss (default bce)")
    p.add_argument("--encoder", help="toy or adapter:<name>")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osagdo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate the synthetic fixture dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("densify", help="write dense 16-bit heatmaps next to each image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sigma", type=float, default=data.DEFAULT_SIGMA, help="Gaussian sigma in px")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("train", help="one-shot training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--no-oekfm", action="store_true")
    p.add_argument("--n-features", type=int)
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="heatmaps and overlays for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--affordance", action="append", help="repeatable; default all")
    p.add_argument("--no-oekfm", action="store_true")
    p.add_argument("--n-features", type=int)
    p.add_argument("--dump-oekfm", action="store_true", help="also write M and M' rasters")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="ablation sweep along one axis")
    p.add_argument("--axis", choices=trainer.AXES, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except data.ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
