"""Single-start vs multi-start ICP as the true yaw grows.

For each yaw in the sweep, random unit-box clouds are rotated, scaled and
shifted, then registered three ways: one start at the identity, one start
with centroids and diagonals aligned but zero yaw, and the full multi-start
search. Prints one row per yaw with the number of trials that recover the
yaw, and how many single starts ended in a collapsed scale.

    python3 scripts/multistart_sweep.py --trials 5
"""

import argparse
import math

from arplace.geometry import make_rng
from arplace.registration import (
    DegenerateScaleError,
    IcpParams,
    SimilarityTransformY,
    icp,
    initial_transforms,
    multi_start_icp,
    wrap_angle,
)


def run_single(src, dst, init):
    """Return (recovered theta or None, collapsed flag)."""
    try:
        r = icp(src, dst, init)
    except DegenerateScaleError:
        return None, True
    return r.transform.theta, r.scale_clamped


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--starts", type=int, default=8)
    args = ap.parse_args()

    n = args.trials
    print(f"{'yaw':>5} | {'identity':>8} {'collapsed':>9} | {'aligned':>7} {'collapsed':>9} | {'multi':>5} {'worst err':>10}")
    for deg in range(0, 181, 15):
        counts = [0, 0, 0, 0, 0]
        worst = 0.0
        for k in range(n):
            rng = make_rng(100 * deg + k)
            src = rng.random((args.n, 3))
            truth = SimilarityTransformY(math.radians(deg), rng.uniform(0.5, 2), tuple(rng.normal(size=3)))
            dst = truth.apply(src)

            def hit(theta):
                return theta is not None and abs(wrap_angle(theta - truth.theta)) < 1e-6

            aligned = initial_transforms(src, dst, IcpParams(starts=1))[0]
            for col, init in ((0, SimilarityTransformY()), (2, aligned)):
                theta, collapsed = run_single(src, dst, init)
                counts[col] += hit(theta)
                counts[col + 1] += collapsed
            m = multi_start_icp(src, dst, IcpParams(starts=args.starts))
            counts[4] += hit(m.transform.theta)
            worst = max(worst, m.error)
        a, b, c, d, e = counts
        print(f"{deg:5d} | {a:>4d}/{n:<3d} {b:>9d} | {c:>3d}/{n:<3d} {d:>9d} | {e:>2d}/{n:<2d} {worst:10.2e}")


if __name__ == "__main__":
    main()
