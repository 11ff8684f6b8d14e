#!/usr/bin/env python3
"""End-to-end smoke run of the full pipeline on a small synthetic world.

Chains the CLI stages (synth -> discretize -> accumulate -> train both
models -> evaluate both -> report) into one directory tree. Finishes in a
couple of minutes on a laptop.
"""
import argparse
import sys
import time
from pathlib import Path

from cellseq.cli import main as cli


def run(args) -> int:
    root = Path(args.out)
    t0 = time.time()

    def stage(argv):
        print(f"$ cellseq {' '.join(argv)}")
        rc = cli(argv)
        if rc != 0:
            print(f"stage failed with exit code {rc}", file=sys.stderr)
            raise SystemExit(rc)

    stage(["synth", "--out", str(root / "synth"), "--rows", "4", "--cols", "8",
           "--trips", str(args.trips), "--horizon-min", "720", "--block-min", "60",
           "--epsilon", "0.1", "--congested-speed", "3.0", "--seed", str(args.seed)])
    stage(["discretize", "--in", str(root / "synth" / "trips.tsv"), "--out", str(root / "disc"),
           "--radius", "135", "--split", "0.8,0.1,0.1", "--seed", str(args.seed)])
    stage(["accumulate", "--trips", str(root / "synth" / "trips.tsv"),
           "--cellmap", str(root / "disc" / "cellmap.tsv"),
           "--sequences", str(root / "disc" / "sequences.tsv"), "--out", str(root / "acc")])
    for kind in ("rnn", "arnn"):
        argv = ["train", "--sequences", str(root / "disc" / "sequences.tsv"),
                "--model", kind, "--d-e", "16", "--d-h", "16",
                "--lr", "3e-3", "--epochs", str(args.epochs), "--seed", str(args.seed),
                "--out", str(root / kind)]
        if kind == "arnn":
            argv += ["--accumulation", str(root / "acc" / "accumulation.tsv")]
        stage(argv)
        ev = ["evaluate", "--ckpt", str(root / kind / "model.ckpt"),
              "--sequences", str(root / "disc" / "sequences.tsv"), "--split", "test",
              "--k", str(args.k), "--limit", str(args.eval_limit),
              "--seed", str(args.seed), "--out", str(root / f"eval_{kind}")]
        if kind == "arnn":
            ev += ["--accumulation", str(root / "acc" / "accumulation.tsv")]
        stage(ev)
    stage(["report", "--arnn", str(root / "eval_arnn" / "scores.tsv"),
           "--rnn", str(root / "eval_rnn" / "scores.tsv"), "--out", str(root / "report")])

    print(f"\ndone in {time.time() - t0:.0f}s; see {root / 'report'} for the score tables")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--trips", type=int, default=1500)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--eval-limit", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    raise SystemExit(run(parser.parse_args()))
