"""All three ablation axes on the synthetic fixture, sharing trained models.

Writes one TSV and one JSON table per axis (modules, n, gates).

    python scripts/run_ablations.py --out runs/ablations --iters 200
"""
import argparse
import json
import logging
from pathlib import Path

from osagdo import data, trainer
from osagdo.encoders import EncoderSpec
from osagdo.model import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fixture-seed", type=int, default=7)
    ap.add_argument("--manifest", help="use an existing manifest instead of the fixture")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = args.manifest or data.make_fixture(args.fixture_seed, out / "fixture")
    m = data.load_manifest(manifest)
    split = data.one_shot_split(m.records)
    base = TrainConfig(iterations=args.iters, seed=args.seed)
    cache = {}
    for axis in trainer.AXES:
        rows = trainer.ablation_sweep(base, axis, split, EncoderSpec(), m.affordances,
                                      m.flip_pairs, cache=cache)
        table = trainer.format_table(rows)
        (out / f"ablation_{axis}.tsv").write_text(table)
        (out / f"ablation_{axis}.json").write_text(json.dumps(rows, indent=2) + "\n")
        print(f"[{axis}]\n{table}")


if __name__ == "__main__":
    main()
