"""Train a slim student with and without teacher guidance on synthetic digits.

Steps:

1. render 10k training and 2k test digits into IDX files,
2. train the small-cnn teacher on all 10k,
3. run the route race plus two-stage training of a "26--" student on a
   class-balanced 1000-sample subset,
4. train the same student with plain SGD on the same samples and compare.

With the defaults this takes about six minutes on one CPU core.  Pass
``--quick`` for a one-minute smoke run with much smaller budgets (the
accuracies are then not meaningful).

    python demos/03_teacher_guided_digits.py [--workdir DIR] [--seed N] [--quick]
"""
import argparse
import tempfile
import time
from pathlib import Path

from kpnet.data import SubsetSpec, class_balanced_subset, load_split, train_val_split
from kpnet.graph import preset, small_cnn
from kpnet.synthetic import write_digit_idx
from kpnet.trainer import TrainConfig, train_kpn, train_plain, train_teacher


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="kpnet-demo-"))

    n_train, n_test = (2000, 500) if args.quick else (10_000, 2_000)
    t = time.perf_counter()
    data = write_digit_idx(workdir / "digits", n_train, n_test, seed=0)
    train_full, test = load_split(data, "train"), load_split(data, "test")
    print(f"rendered {len(train_full)} training and {len(test)} test digits into {data} "
          f"({time.perf_counter() - t:.0f}s)")

    teacher_cfg = TrainConfig(total_iterations=200 if args.quick else 1500, batch_size=32,
                              lr_schedule=[[0, 0.05], [0.6, 0.005], [0.85, 0.0005]])
    t = time.perf_counter()
    teacher = train_teacher(small_cnn(), train_full, teacher_cfg)
    print(f"teacher small-cnn: test accuracy {teacher.accuracy(test.images, test.labels):.4f} "
          f"({time.perf_counter() - t:.0f}s)")

    cfg = TrainConfig(total_iterations=60 if args.quick else 300, batch_size=32,
                      prune_period=10 if args.quick else 30, revoke_duration=30, seed=args.seed,
                      lr_schedule=[[0, 0.05], [0.75, 0.005], [0.9, 0.0005]])
    subset = class_balanced_subset(train_full, SubsetSpec(1000 if not args.quick else 500, args.seed))
    train, val = train_val_split(subset, cfg.val_fraction, args.seed)
    student = preset("26--")

    t = time.perf_counter()
    result = train_kpn(teacher, student, train, val, cfg)
    kpn_acc = result.survivor.student.accuracy(test.images, test.labels)
    print(f"\nroute race over {', '.join(r.label for r in result.routes)}:")
    for e in result.events:
        losses = ", ".join(f"{k} {v:.3f}" for k, v in e.losses.items())
        print(f"  after iteration {e.iteration}: dropped {e.pruned}  ({losses})")
    print(f"guided 26-- student (route {result.survivor.route.label}): test accuracy {kpn_acc:.4f} "
          f"({time.perf_counter() - t:.0f}s)")

    t = time.perf_counter()
    plain = train_plain(student, train, cfg)
    plain_acc = plain.accuracy(test.images, test.labels)
    print(f"plain 26-- student:                    test accuracy {plain_acc:.4f} ({time.perf_counter() - t:.0f}s)")
    print(f"\ndifference {100 * (kpn_acc - plain_acc):+.2f} points on one seed; the acceptance suite "
          "compares medians over five.")


if __name__ == "__main__":
    main()
