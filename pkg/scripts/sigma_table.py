#!/usr/bin/env python3
"""Tabulate critical initialization variances over a (activation, s, d) grid.

Writes one CSV row per combination with the exact kernel value, the critical
variance, and the large-width approximation where one exists.
"""

import argparse
import csv
import math
import sys

import fracinit as fi
from fracinit.kernels import Unsupported


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", type=lambda t: [int(v) for v in t.split(",")],
                    default=[16, 64, 256, 1024])
    ap.add_argument("--orders", type=lambda t: [float(v) for v in t.split(",")],
                    default=[0.5, 0.8, 1.0, 1.5, 2.0])
    ap.add_argument("--q", type=float, default=1.0)
    ap.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")
    args = ap.parse_args()

    budget = fi.EvalBudget(rel_tol=1e-10, max_terms=2_000_000)
    activations = [("relu", fi.RELU), ("leaky", fi.LEAKY), ("linear", fi.LINEAR),
                   ("rleaky", fi.RandomizedLeaky())]
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["activation", "s", "d", "q", "log_I", "sigma", "sigma_sq", "sigma_sq_asymptotic"])
    for name, act in activations:
        for s in args.orders:
            for d in args.widths:
                if isinstance(act, fi.RandomizedLeaky) and args.q != 1.0:
                    continue
                query = fi.MomentQuery(d=d, s=s, activation=act, q=args.q, budget=budget)
                kv = fi.kernel(query)
                sigma, sigma_sq = fi.critical_sigma(query)
                try:
                    approx = fi.asymptotic_sigma_sq(s, d, act.a, args.q) \
                        if isinstance(act, fi.ParamReLU) else math.nan
                except Unsupported:
                    approx = math.nan
                w.writerow([name, s, d, args.q, "%.17g" % kv.log_I, "%.17g" % sigma,
                            "%.17g" % sigma_sq, "%.17g" % approx])
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
