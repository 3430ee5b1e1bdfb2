"""Error probability against total budget at p = 2^14, k = 46, rho = 0.05.

Prints one JSON line per budget multiple of thm1_tests.
"""

import argparse
import json

from noisygt.sim import InstanceSpec, monte_carlo
from noisygt.stages import StageConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, default=2**14)
    ap.add_argument("--k", type=int, default=46)
    ap.add_argument("--rho", type=float, default=0.05)
    ap.add_argument("--mults", type=float, nargs="+", default=[2.0, 3.0, 4.0, 6.0])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = StageConfig()
    for m in args.mults:
        spec = InstanceSpec(p=args.p, rho=args.rho, k=args.k, budget_mult=m)
        stats = monte_carlo(spec, cfg, args.trials, args.seed, args.workers)
        lo, hi = stats.ci
        print(json.dumps({"budget_mult": m, "budget": spec.budget(), "pe_hat": stats.pe_hat,
                          "ci": [lo, hi], "mean_n_per_stage": stats.mean_tests(),
                          "mean_fp": stats.mean_fp, "mean_fn": stats.mean_fn}), flush=True)


if __name__ == "__main__":
    main()
