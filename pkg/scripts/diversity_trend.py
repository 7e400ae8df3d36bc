"""Mean pairwise SSIM of perturbed outputs as the removed rank grows."""
import argparse

from para.bundle import AdapterBundle
from para.metrics import concept_preserving_ladder, stability_probe
from para.synth import diversity_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--samples", type=int, default=16)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--ranks", default="0,2,4,8")
    args = ap.parse_args()
    ranks = [int(r) for r in args.ranks.split(",")]

    print("seed " + " ".join(f"r={r:<5}" for r in ranks) + " monotone")
    n_mono = 0
    for seed in range(args.seeds):
        model, x = diversity_model(seed, args.dim)
        ladder = concept_preserving_ladder(model.layer("layer0").w0, x, ranks)
        means = [
            stability_probe(model, AdapterBundle("para", (ladder[r],)), x, args.samples, args.noise, seed).mean_pairwise_ssim
            for r in ranks
        ]
        mono = all(a <= b for a, b in zip(means, means[1:]))
        n_mono += mono
        print(f"{seed:<4} " + " ".join(f"{m:<7.3f}" for m in means) + f" {mono}")
    print(f"monotone on {n_mono}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
