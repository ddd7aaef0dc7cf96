"""Fit the surrogate detector on rendered synthetic scenes and write theta."""
import argparse
import time
from pathlib import Path

import numpy as np

from drivesafe.perception.surrogate import DEFAULT_THETA, detect, fit_surrogate, random_layout, render


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scenes", type=int, default=600)
    ap.add_argument("--out", type=Path, default=DEFAULT_THETA)
    ap.add_argument("--check", type=int, default=100, help="held-out scenes to score")
    args = ap.parse_args()

    t0 = time.perf_counter()
    d = fit_surrogate(args.seed, args.scenes)
    print(f"fit {args.scenes} scenes in {time.perf_counter() - t0:.1f}s")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    d.save(args.out)
    print(f"wrote {args.out}")

    rng = np.random.default_rng(args.seed + 1)
    miss = extra = 0
    errs = []
    for _ in range(args.check):
        labels = random_layout(rng, int(rng.integers(0, 6)))
        dets = detect(d, render(labels))
        for b in labels:
            dist = [np.hypot(b.center[0] - e.center[0], b.center[1] - e.center[1]) for e in dets]
            if not dist or min(dist) > 0.5:
                miss += 1
            else:
                errs.append(min(dist))
        extra += max(0, len(dets) - len(labels))
    print(f"held-out: misses={miss} extra={extra} max_err={max(errs, default=0):.4f} m")


if __name__ == "__main__":
    main()
