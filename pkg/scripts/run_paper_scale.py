#!/usr/bin/env python3
"""Full-dataset pipeline driver (optional, long-running).

Drives pretrain -> train-student -> eval on a real multimodal KG laid out as:

    <data-dir>/train.tsv  valid.tsv  test.tsv   (head<TAB>relation<TAB>tail)
    <data-dir>/visual.feat  textual.feat        (binary feature files; build
                                                 them with the extractor package
                                                 from entity images/descriptions)

This is NOT part of the gated test suite: at DB15K scale (12,842 entities,
79k train triples) a full run takes hours on one core with this numpy engine,
dominated by the full-softmax scoring of teachers and student.  Defaults below
mirror the published configuration (gamma 2.0, tau 4.0, alpha/beta 1.0,
policy hidden 1024); embedding dimension and schedule are set smaller so an
overnight CPU run is plausible, and can be raised via flags.
"""
from __future__ import annotations

import argparse
import sys

from kgdistill.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data-dir", required=True)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--student-epochs", type=int, default=30)
    parser.add_argument("--batch-size", type=int, default=512)
    parser.add_argument("--learning-rate", type=float, default=1e-3)
    parser.add_argument("--eval-every", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--strategy", default="reinforced")
    parser.add_argument("--kd-variant", default="ndkd")
    args = parser.parse_args()

    common = [
        "--data-dir", args.data_dir,
        "--dim", str(args.dim),
        "--batch-size", str(args.batch_size),
        "--learning-rate", str(args.learning_rate),
        "--seed", str(args.seed),
        "--eval-every", str(args.eval_every),
    ]
    print("phase 1/3: teacher pre-training", file=sys.stderr)
    cli_main(["pretrain", *common, "--epochs", str(args.epochs),
              "--out-dir", f"{args.out_dir}/teachers"])
    teacher_dir = _only_subdir(f"{args.out_dir}/teachers")

    print("phase 2/3: student training", file=sys.stderr)
    cli_main(["train-student", *common, "--epochs", str(args.student_epochs),
              "--teachers", f"{teacher_dir}/teachers.ckpt",
              "--strategy", args.strategy, "--kd-variant", args.kd_variant,
              "--out-dir", f"{args.out_dir}/student"])
    student_dir = _only_subdir(f"{args.out_dir}/student")

    print("phase 3/3: evaluation", file=sys.stderr)
    cli_main(["eval", "--data-dir", args.data_dir,
              "--student", f"{student_dir}/student.ckpt",
              "--split", "test", "--out-dir", f"{args.out_dir}/eval"])
    return 0


def _only_subdir(root: str) -> str:
    from pathlib import Path

    dirs = [p for p in Path(root).iterdir() if p.is_dir()]
    if len(dirs) != 1:
        raise SystemExit(f"expected exactly one run directory under {root}, found {len(dirs)}")
    return str(dirs[0])


if __name__ == "__main__":
    sys.exit(main())
