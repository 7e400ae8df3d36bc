"""Run every randomized identity suite and print a per-suite table."""
import argparse

from para.verify import run_all


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    summary = run_all(args.trials, args.seed, timings=True)
    print(f"{'suite':<22} {'passed':>9} {'max_error':>10} {'seconds':>8}")
    for name, res in summary["suites"].items():
        err = res.get("max_error")
        err = f"{err:.2e}" if err is not None else "-"
        print(f"{name:<22} {res['passed']:>4}/{res['trials']:<4} {err:>10} {res['seconds']:>8.3f}")
        for fam, counts in res.get("by_family", {}).items():
            print(f"  {fam:<20} {counts['passed']:>4}/{counts['trials']}")
    print("all passed" if summary["all_passed"] else "some suites failed")


if __name__ == "__main__":
    main()
