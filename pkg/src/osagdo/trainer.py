"""One-shot training, evaluation and ablation sweeps."""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .data import (CROP, DatasetRecord, SplitSpec, apply_augmentation, dense_heatmaps,
                   draw_augmentation, preprocess_eval, read_image, resize_for, resize_pair)
from .decoder import LOSSES
from .encoders import EncoderSpec, encode_image
from .metrics import MetricReport, score, uniform_baseline
from .model import GroundingModel, TrainConfig, predict
from .oekfm import OEKFMConfig

log = logging.getLogger(__name__)

# fields that only affect evaluation; runs differing only here share a trained model
EVAL_ONLY_FIELDS = ("oekfm_on", "n_features", "oekfm_sigma")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]

    def write_loss_csv(self, path) -> None:
        lines = ["iteration,loss"] + [f"{i},{v!r}" for i, v in enumerate(self.losses)]
        Path(path).write_text("\n".join(lines) + "\n")


@contextmanager
def single_threaded():
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


def _training_samples(records: list[DatasetRecord], sigma: float, size: int):
    samples = []
    for r in records:
        img = read_image(r.image_path)
        maps = dense_heatmaps(r, img.height, img.width, sigma)
        if maps:
            samples.append(resize_pair(img, maps, size))
        else:
            log.warning("training record %s has no annotations; skipped", r.id)
    return samples


def train(cfg: TrainConfig, split: SplitSpec, enc: EncoderSpec, affordances,
          flip_pairs=(), progress=None) -> TrainResult:
    """Round-robin one-shot training with plain SGD.

    Iteration ``t`` uses training image ``t mod n``; the supervised action
    cycles through that image's annotated affordances. The result depends
    only on (cfg, split, enc).
    """
    crop = enc.input_size
    size = resize_for(crop)
    samples = _training_samples(split.train, cfg.annotation_sigma, size)
    if not samples:
        raise ValueError("training split is empty")
    affordances = list(affordances)
    index = {a: i for i, a in enumerate(affordances)}
    rng = np.random.default_rng(cfg.seed)
    model = GroundingModel(cfg, enc, affordances)
    model.reset_parameters(cfg.seed)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    loss_fn = LOSSES[cfg.loss]
    losses = []
    n = len(samples)
    with single_threaded():
        for t in range(cfg.iterations):
            base_img, base_maps = samples[t % n]
            img, maps = apply_augmentation(base_img, base_maps, draw_augmentation(rng, size - crop),
                                           flip_pairs, crop)
            use_label = rng.random() >= cfg.label_dropout
            names = [a for a in affordances if a in maps]
            action = names[(t // n) % len(names)]
            k = index[action]
            gt = torch.from_numpy(maps[action])
            encoded = encode_image(img, enc)
            label = gt if (cfg.defosem_on and use_label) else None
            out = model(torch.from_numpy(encoded.patches.values), torch.from_numpy(encoded.cls),
                        label=label, which=[k])
            loss = loss_fn(out["maps"][0], gt)
            if cfg.aux_class_loss_weight:
                loss = loss - cfg.aux_class_loss_weight * torch.log(out["probs"][k])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            if progress is not None:
                progress(t, losses[-1])
    ckpt = Checkpoint(model, [tuple(p) for p in flip_pairs], cfg.iterations,
                      rng.bit_generator.state)
    return TrainResult(ckpt, losses)


def _eval_inputs(record: DatasetRecord, sigma: float, crop: int = CROP):
    img = read_image(record.image_path)
    gts = dense_heatmaps(record, img.height, img.width, sigma)
    return preprocess_eval(img, gts, crop)


def evaluate(ckpt: Checkpoint, records: list[DatasetRecord], use_oekfm: bool | None = None,
             oekfm_cfg: OEKFMConfig | None = None, threshold: float = 0.5) -> MetricReport:
    model = ckpt.model
    report = MetricReport()
    for r in records:
        img, gts = _eval_inputs(r, model.cfg.annotation_sigma, model.enc.input_size)
        gts = {a: g for a, g in gts.items() if a in model.affordances and g.max() > 0}
        if not gts:
            report.skipped += 1
            continue
        pred = predict(model, img, use_oekfm=use_oekfm, oekfm_cfg=oekfm_cfg)
        for a in model.affordances:
            if a in gts:
                report.add(r.id, a, score(pred.P_final[model.affordances.index(a)], gts[a], threshold))
    if report.skipped:
        log.warning("%d record(s) without ground truth skipped", report.skipped)
    return report


def uniform_report(records: list[DatasetRecord], affordances, sigma: float = 10.0,
                   threshold: float = 0.5) -> MetricReport:
    """Metrics of a constant prediction; the chance-level baseline."""
    report = MetricReport()
    for r in records:
        _, gts = _eval_inputs(r, sigma)
        for a in affordances:
            if a in gts and gts[a].max() > 0:
                report.add(r.id, a, uniform_baseline(gts[a], threshold))
    return report


AXES = ("modules", "n", "gates")
N_VALUES = (1000, 800, 600, 400, 200)


def ablation_settings(base: TrainConfig, axis: str) -> list[tuple[str, TrainConfig]]:
    if axis == "modules":
        off = replace(base, defosem_on=False, cocoop_on=False, oekfm_on=False)
        return [
            ("Baseline", off),
            ("+DefoSEM", replace(off, defosem_on=True)),
            ("+CoCoOp", replace(off, defosem_on=True, cocoop_on=True)),
            ("+OEKFM", replace(off, defosem_on=True, cocoop_on=True, oekfm_on=True)),
        ]
    if axis == "n":
        return [(str(n), replace(base, n_features=n, oekfm_on=True)) for n in N_VALUES]
    if axis == "gates":
        return [
            ("Channel", replace(base, channel_gate_on=True, spatial_gate_on=False)),
            ("Spatial", replace(base, channel_gate_on=False, spatial_gate_on=True)),
            ("Channel+Spatial", replace(base, channel_gate_on=True, spatial_gate_on=True)),
        ]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {AXES}")


def _train_key(cfg: TrainConfig) -> tuple:
    d = asdict(cfg)
    for k in EVAL_ONLY_FIELDS:
        d.pop(k)
    return tuple(sorted(d.items()))


def ablation_sweep(base: TrainConfig, axis: str, split: SplitSpec, enc: EncoderSpec,
                   affordances, flip_pairs=(), eval_records=None, cache: dict | None = None):
    """Train + evaluate every setting on ``axis``; returns table rows.

    Settings that differ only in evaluation-time fields reuse one trained
    model, which is equivalent to retraining because training is
    deterministic.
    """
    cache = {} if cache is None else cache
    eval_records = split.test if eval_records is None else eval_records
    rows = []
    for name, cfg in ablation_settings(base, axis):
        key = _train_key(cfg)
        if key not in cache:
            log.info("training %s setting %s", axis, name)
            cache[key] = train(cfg, split, enc, affordances, flip_pairs).checkpoint
        ckpt = cache[key]
        report = evaluate(ckpt, eval_records, use_oekfm=cfg.oekfm_on, oekfm_cfg=cfg.oekfm)
        rows.append({"setting": name, "kld": report.kld, "sim": report.sim, "nss": report.nss})
    return rows


def format_table(rows: list[dict]) -> str:
    lines = ["setting\tKLD\tSIM\tNSS"]
    lines += [f"{r['setting']}\t{r['kld']:.3f}\t{r['sim']:.3f}\t{r['nss']:.3f}" for r in rows]
    return "\n".join(lines) + "\n"
