"""How far sequential composition drifts from the merged-QR reduction.

Sweeps the angle between two lines in R^d and prints the relative Frobenius
gap, then reports the gap per subspace family on random full-rank weights.
"""
import argparse

import numpy as np

from para.combine import projectors_commute, sequential_defect
from para.synth import COMMUTING_FAMILIES, PAIR_FAMILIES, pair_instance


def angle_sweep(d=6, k=8, seed=0):
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((d, k))
    e1 = np.eye(d)[:, :1]
    e2 = np.eye(d)[:, 1:2]
    print(f"{'angle':>6} {'commute':>8} {'rel_gap':>10}")
    for deg in (0, 15, 30, 45, 60, 75, 90):
        t = np.deg2rad(deg)
        q2 = np.cos(t) * e1 + np.sin(t) * e2
        print(f"{deg:>6} {str(projectors_commute(e1, q2)):>8} {sequential_defect(w0, e1, q2):>10.2e}")


def by_family(trials, seed):
    rng = np.random.default_rng(seed)
    print(f"\n{'family':<18} {'median':>10} {'max':>10}")
    for family in dict.fromkeys(PAIR_FAMILIES + COMMUTING_FAMILIES):
        gaps = [sequential_defect(*pair_instance(rng, family)) for _ in range(trials)]
        print(f"{family:<18} {np.median(gaps):>10.2e} {np.max(gaps):>10.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    angle_sweep(seed=args.seed)
    by_family(args.trials, args.seed)


if __name__ == "__main__":
    main()
