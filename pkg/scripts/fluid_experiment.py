"""Run a FLUID experiment config and print the per-combination error table.

    python scripts/fluid_experiment.py configs/fluid_combi.cfg
    python scripts/fluid_experiment.py configs/fluid_isol.cfg --system nmf

The table lists, for each test combination, the proportions of exact
frames and of frames with added or omitted notes.
"""
import argparse
import json
import logging
from pathlib import Path

from dtb.config import parse_config
from dtb.evaluation import stats_from_csv
from dtb.pipeline import run_experiment
from dtb.synth import Mode


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--system", choices=("net", "nmf"), default="net")
    ap.add_argument("--split", default="test")
    ap.add_argument("--rows", type=int, default=30, help="table rows to print (0 = all)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(args.config)
    stages = ["synth", "features", "train", "transcribe", "analyze"]
    if args.system == "nmf" or Mode(cfg.mode) is Mode.ISOL:
        stages.insert(4, "nmf")
    run_experiment(cfg, stages)

    rdir = Path(cfg.out_dir) / "reports" / args.system
    summary = json.loads((rdir / f"summary_{args.split}.json").read_text())
    rows = stats_from_csv((rdir / f"combination_stats_{args.split}.csv").read_text())
    print(f"\n{args.system} on {args.split}: P {summary['precision']:.3f}  R {summary['recall']:.3f}  "
          f"F {summary['f_measure']:.3f}")
    print(f"frames: exact {summary['exact_frames']}, with additions {summary['addition_frames']}, "
          f"with omissions {summary['omission_frames']} (of {summary['frames']})")
    print(f"\n{'pitches':<10} {'frames':>6} {'exact':>7} {'added':>7} {'omitted':>7}")
    for r in rows[:args.rows or None]:
        print(f"{r.combination.label():<10} {r.n_frames:>6} {r.p_exact:>7.3f} {r.p_additions:>7.3f} "
              f"{r.p_omissions:>7.3f}")


if __name__ == "__main__":
    main()
