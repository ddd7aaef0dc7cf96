"""Train a patch on the shipped ten-image set and save it as PPM."""
import argparse
from pathlib import Path

from drivesafe.attacks.patch import save_patch, train_patch
from drivesafe.experiment import patch_dataset, patch_training_config
from drivesafe.perception.surrogate import DetectorSurrogate, load_default


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--radius", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--theta", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("patch.ppm"))
    args = ap.parse_args()

    d = DetectorSurrogate.load(args.theta) if args.theta else load_default()
    res = train_patch(d, patch_dataset(args.seed), patch_training_config(args.seed, args.radius, args.epochs))
    for epoch in sorted({0, len(res.curve) // 4, len(res.curve) // 2, len(res.curve) - 1}):
        print(f"epoch {epoch:4d}  objective {res.curve[epoch]:.5f}")
    save_patch(args.out, res.patch, {"seed": args.seed, "radius": args.radius, "epochs": args.epochs})
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
