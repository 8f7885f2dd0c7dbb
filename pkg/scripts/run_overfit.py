"""One-shot overfit run on the synthetic fixture.

Trains the default configuration, writes the loss curve and checkpoint, and
prints per-image metrics on the training images next to the uniform baseline.

    python scripts/run_overfit.py --out runs/overfit --iters 500
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from osagdo import data, trainer
from osagdo.encoders import EncoderSpec
from osagdo.model import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fixture-seed", type=int, default=7)
    args = ap.parse_args()

    out = Path(args.out)
    manifest = data.make_fixture(args.fixture_seed, out / "fixture")
    m = data.load_manifest(manifest)
    split = data.one_shot_split(m.records)

    t0 = time.perf_counter()
    res = trainer.train(TrainConfig(iterations=args.iters, seed=args.seed), split, EncoderSpec(),
                        m.affordances, m.flip_pairs)
    elapsed = time.perf_counter() - t0
    res.checkpoint.save(out / "checkpoint.bin")
    res.write_loss_csv(out / "loss.csv")

    first, last = np.mean(res.losses[:10]), np.mean(res.losses[-100:])
    per = trainer.evaluate(res.checkpoint, split.train).per_record()
    chance = trainer.uniform_report(split.train, m.affordances).per_record()
    summary = {"iterations": args.iters, "seconds": elapsed, "loss_first10": first,
               "loss_last100": last, "ratio": last / first,
               "train_images": {rid: {**v, "uniform_sim": chance[rid]["sim"]} for rid, v in per.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    print(f"{args.iters} iterations in {elapsed:.0f}s; loss {first:.3f} -> {last:.3f} "
          f"(ratio {last / first:.3f})")
    for rid, v in per.items():
        print(f"{rid:24s} KLD {v['kld']:.3f}  SIM {v['sim']:.3f} (uniform {chance[rid]['sim']:.3f})"
              f"  NSS {v['nss']:.3f}")


if __name__ == "__main__":
    main()
