#!/usr/bin/env python3
"""Plot cumulative accuracy and router weights from a `dualpool sim run` directory.

usage: plot_run.py OUT_DIR [--save figure.png]
Needs matplotlib.
"""
import argparse
import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--save", type=Path)
    args = ap.parse_args()

    summary = json.loads((args.out_dir / "summary.json").read_text())
    fig, (acc, wts) = plt.subplots(1, 2, figsize=(11, 4))
    for m in summary["modes"]:
        xs, ys = zip(*m["cumulative_accuracy"])
        acc.plot(xs, ys, label=m["mode"])
    acc.set_xlabel("tasks seen")
    acc.set_ylabel("cumulative accuracy")
    acc.legend()

    # Mean exploit weight over agents and seeds after each task.
    sums = defaultdict(lambda: defaultdict(list))
    with open(args.out_dir / "weights.csv", newline="") as f:
        for row in csv.DictReader(f):
            sums[row["mode"]][int(row["task_index"])].append(float(row["w_e"]))
    for mode, by_task in sums.items():
        ts = sorted(by_task)
        wts.plot(ts, [sum(by_task[t]) / len(by_task[t]) for t in ts], label=mode)
    wts.set_xlabel("task")
    wts.set_ylabel("mean w_E")
    wts.legend()

    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
