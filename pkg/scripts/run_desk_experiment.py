"""Desk-scale experiment: synthesize, train, evaluate, degrade, baseline.

    python scripts/run_desk_experiment.py --out runs/desk

Prints the held-out report, the zero-guesser report and the resolution sweep,
and leaves every artifact (dataset, checkpoints, reports) under ``--out``.
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from handpressure.baseline import PlaneModel, contact_from_mesh, random_pose_sequence, scale_sweep
from handpressure.data import DegradeSpec, load_frameset, split_by_participant, synthesize_dataset
from handpressure.train import TrainConfig, evaluate_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--scenes", type=int, default=2000)
    ap.add_argument("--personas", type=int, default=12)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--iters", type=int, nargs=2, default=(3000, 1000), metavar=("PHASE1", "PHASE2"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    start = time.time()

    if not (out / "data" / "index.tsv").exists():
        synthesize_dataset(out / "data", args.scenes, seed=args.seed, n_personas=args.personas,
                           size=(args.size, args.size))
    frames = load_frameset(out / "data")
    held_out = frames.participants()[-2:]
    tr, va, te = split_by_participant(frames.participants(), test=held_out, seed=args.seed)
    cfg = TrainConfig.desk(iters_phase1=args.iters[0], iters_phase2=args.iters[1], input_w=args.size,
                           input_h=args.size, seed=args.seed)
    (out / "train.cfg").write_text(cfg.to_text())
    result = train(cfg, frames.select_participants(tr), frames.select_participants(va), out / "ckpt")
    test = frames.select_participants(te)

    report = evaluate_checkpoint(result.checkpoint, test)
    zero = evaluate_checkpoint("zero", test)
    (out / "report.tsv").write_text(report.to_tsv())
    (out / "report_zero.tsv").write_text(zero.to_tsv())
    print(f"held-out personas {te}: {len(test)} frames")
    for name in ("temporal_accuracy", "contact_iou", "volumetric_iou", "mae"):
        print(f"{name:18s} model {getattr(report, name)!s:22s} zero {getattr(zero, name)}")

    sweep = {}
    for f in (1, 2, 4, 16, 32):
        spec = None if f == 1 else DegradeSpec("resolution", (args.size // f, args.size // f))
        rep = evaluate_checkpoint(result.checkpoint, test, degrade_spec=spec)
        sweep[f"1/{f}"] = {"contact_iou": rep.contact_iou, "volumetric_iou": rep.volumetric_iou}
        print(f"resolution 1/{f:<3d} contact IoU {rep.contact_iou:.3f} vol IoU {rep.volumetric_iou:.3f}")
    (out / "degrade.json").write_text(json.dumps(sweep, indent=2) + "\n")

    plane = PlaneModel.horizontal(1e-3, 256, 256, origin=(-0.128, -0.128))
    scales = []
    for seed in range(5):
        seq = random_pose_sequence(np.random.default_rng(seed), 6)
        gt = [contact_from_mesh(m, plane) for m in seq]
        scales.append(scale_sweep(seq, gt, plane)[0])
    print(f"baseline scale recovery on 5 sequences: {scales}")
    print(f"total {time.time() - start:.0f}s (training {result.seconds:.0f}s)")


if __name__ == "__main__":
    main()
