#!/usr/bin/env python3
"""Reproduce the three desk-scale ablation trends on the two-moons benchmark.

  components : supervised+image baseline vs uniform noise vs density-descending
  kinds      : the four perturbation kinds at matched step size
  eps        : step-size sweep in units of the feature std

Each cell trains 5 seeds; results print as a small table and go to CSV.
Expect roughly 2-6 minutes per experiment on a laptop CPU.
"""

import argparse
import csv
from dataclasses import replace

import numpy as np

from densitydescent.semisup import SweepSpec, ablate, run_seeds, two_moons_benchmark

SEEDS = [0, 1, 2, 3, 4]


def components(cfg, spec, out):
    rows = []
    for name, c in [
        ("baseline", replace(cfg, lambda_ft=0.0)),
        ("uniform-noise", replace(cfg, perturb=replace(cfg.perturb, kind="uniform-noise"))),
        ("density-descending", cfg),
    ]:
        accs = [r.final_test_acc for r in run_seeds(c, spec, SEEDS)]
        for s, a in zip(SEEDS, accs):
            rows.append({"setting": name, "seed": s, "test_acc": a})
        print(f"{name:20s} mean={np.mean(accs):.4f}  {[round(a, 3) for a in accs]}")
    _write(out, rows)


def kinds(cfg, spec, out):
    sweep = SweepSpec(kinds=["uniform-noise", "channel-dropout", "vat-lite",
                             "density-descending"], seeds=SEEDS)
    rows = ablate(cfg, spec, sweep)
    for kind in sweep.kinds:
        accs = [r["test_acc"] for r in rows if r["kind"] == kind]
        print(f"{kind:20s} mean={np.mean(accs):.4f}  {[round(a, 3) for a in accs]}")
    _write(out, rows)


def eps(cfg, spec, out):
    sweep = SweepSpec(eps=[0.1, 0.25, 0.5, 1.0, 2.0], seeds=SEEDS)
    rows = ablate(cfg, spec, sweep)
    for e in sweep.eps:
        accs = [r["test_acc"] for r in rows if r["eps"] == e]
        print(f"eps={e:<5} mean={np.mean(accs):.4f}  {[round(a, 3) for a in accs]}")
    _write(out, rows)


def _write(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("experiment", choices=["components", "kinds", "eps", "all"])
    ap.add_argument("--out-prefix", default="trend")
    args = ap.parse_args()
    cfg, spec = two_moons_benchmark()
    todo = ["components", "kinds", "eps"] if args.experiment == "all" else [args.experiment]
    for name in todo:
        print(f"--- {name}")
        globals()[name](cfg, spec, f"{args.out_prefix}_{name}.csv")


if __name__ == "__main__":
    main()
