"""Break down Stage-1 mistakes (collisions, missed bins, decode errors) per trial."""

import argparse
import json

import numpy as np

from noisygt.core import ProblemInstance, Streams, TestLedger
from noisygt.stages import StageConfig, inner_adaptive, plan_stages


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, default=2**16)
    ap.add_argument("--k", type=int, default=50)
    ap.add_argument("--rho", type=float, default=0.11)
    ap.add_argument("--budget", type=int)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = StageConfig()
    plan = plan_stages(args.p, args.k, args.rho, cfg, args.budget)
    rows = []
    for t in range(args.trials):
        streams = Streams(args.seed, t)
        inst = ProblemInstance.generate(args.p, args.rho, streams("defective-set"), k=args.k)
        res = inner_adaptive(inst, cfg, plan, TestLedger(), streams)
        bd = res.breakdown
        rows.append([bd.n_col, bd.missed_bins, bd.false_bins, bd.decode_errors, bd.fp, bd.fn])
    mean = np.mean(rows, axis=0)
    names = ["n_col", "missed_bins", "false_bins", "decode_errors", "stage1_fp", "stage1_fn"]
    print(json.dumps({"plan": plan.to_dict(), "means": dict(zip(names, mean.round(3).tolist()))},
                     indent=2))


if __name__ == "__main__":
    main()
