"""Monte Carlo harness, parameter sweeps and a brute-force MAP oracle."""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy.stats import binomtest

from .core import InvalidParameterError, ProblemInstance, Stage, Streams, k_from_theta
from .stages import RunReport, StageConfig, StageFailure, full_algorithm
from .theory import thm1_tests

MAP_ORACLE_LIMIT = 10**6
STAGE_LABELS = [s.label for s in Stage]


@dataclass(frozen=True)
class InstanceSpec:
    """What a trial runs on. Give ``k`` or ``theta``; budget is optional.

    ``fixed_defectives`` reuses one defective set for every trial (variance
    reduction); by default each trial draws its own, as in the averaged
    error probability.
    """

    p: int
    rho: float
    k: Optional[int] = None
    theta: Optional[float] = None
    budget_mult: Optional[float] = None
    budget_n: Optional[int] = None
    fixed_defectives: bool = False

    def resolved_k(self) -> int:
        if self.k is not None:
            return int(self.k)
        if self.theta is None:
            raise InvalidParameterError("give k or theta")
        return k_from_theta(self.p, self.theta)

    def budget(self) -> Optional[int]:
        if self.budget_n is not None:
            return int(self.budget_n)
        if self.budget_mult is not None:
            return int(math.floor(self.budget_mult * thm1_tests(self.p, self.resolved_k(), self.rho)))
        return None

    def instance(self, seed: int, trial: int) -> ProblemInstance:
        t = 0 if self.fixed_defectives else trial
        rng = Streams(seed, t)("defective-set")
        return ProblemInstance.generate(self.p, self.rho, rng, k=self.resolved_k(), theta=self.theta)


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ErrorStats:
    """Commutative aggregate of trial outcomes."""

    trials: int = 0
    successes: int = 0
    failures: Counter = field(default_factory=Counter)  # aborted trials by stage label
    fp_hist: Counter = field(default_factory=Counter)
    fn_hist: Counter = field(default_factory=Counter)
    stage1_fp_hist: Counter = field(default_factory=Counter)
    stage1_fn_hist: Counter = field(default_factory=Counter)
    tests_sum: Counter = field(default_factory=Counter)  # stage label -> total tests

    def add(self, report: RunReport) -> None:
        self.trials += 1
        self.successes += report.success
        self.fp_hist[report.fp] += 1
        self.fn_hist[report.fn] += 1
        self.stage1_fp_hist[report.stage1_fp] += 1
        self.stage1_fn_hist[report.stage1_fn] += 1
        self.tests_sum.update(report.n_per_stage)

    def add_failure(self, failure: StageFailure) -> None:
        self.trials += 1
        self.failures[failure.stage.label] += 1

    def merge(self, other: "ErrorStats") -> "ErrorStats":
        out = ErrorStats(self.trials + other.trials, self.successes + other.successes)
        for f in ("failures", "fp_hist", "fn_hist", "stage1_fp_hist", "stage1_fn_hist", "tests_sum"):
            getattr(out, f).update(getattr(self, f))
            getattr(out, f).update(getattr(other, f))
        return out

    @property
    def completed(self) -> int:
        return self.trials - sum(self.failures.values())

    @property
    def pe_hat(self) -> float:
        return 1.0 - self.successes / self.trials

    @property
    def ci(self) -> tuple[float, float]:
        lo, hi = wilson_interval(self.trials - self.successes, self.trials)
        return min(lo, self.pe_hat), max(hi, self.pe_hat)

    def _mean(self, hist: Counter) -> float:
        n = sum(hist.values())
        return sum(v * c for v, c in hist.items()) / n if n else float("nan")

    @property
    def mean_fp(self) -> float:
        return self._mean(self.fp_hist)

    @property
    def mean_fn(self) -> float:
        return self._mean(self.fn_hist)

    def mean_tests(self) -> dict[str, float]:
        n = max(self.completed, 1)
        return {s: self.tests_sum.get(s, 0) / n for s in STAGE_LABELS}

    @property
    def mean_n_total(self) -> float:
        return sum(self.mean_tests().values())

    def to_json(self) -> dict:
        lo, hi = self.ci
        return {
            "trials": self.trials,
            "successes": self.successes,
            "pe_hat": self.pe_hat,
            "ci_lo": lo,
            "ci_hi": hi,
            "failures": dict(self.failures),
            "mean_n_total": self.mean_n_total,
            "mean_n_per_stage": self.mean_tests(),
            "mean_fp": self.mean_fp,
            "mean_fn": self.mean_fn,
            "fp_hist": {str(k): v for k, v in sorted(self.fp_hist.items())},
            "fn_hist": {str(k): v for k, v in sorted(self.fn_hist.items())},
            "stage1_fp_hist": {str(k): v for k, v in sorted(self.stage1_fp_hist.items())},
            "stage1_fn_hist": {str(k): v for k, v in sorted(self.stage1_fn_hist.items())},
        }


def run_trial(spec: InstanceSpec, config: StageConfig, seed: int, trial: int) -> RunReport:
    return full_algorithm(spec.instance(seed, trial), config, seed, trial, budget=spec.budget())


def _run_chunk(args) -> ErrorStats:
    spec, config, seed, trial_ids = args
    stats = ErrorStats()
    for t in trial_ids:
        try:
            stats.add(run_trial(spec, config, seed, t))
        except StageFailure as exc:
            stats.add_failure(exc)
    return stats


def monte_carlo(spec: InstanceSpec, config: StageConfig, trials: int, seed: int,
                workers: int = 1) -> ErrorStats:
    """Independent trials; the result does not depend on ``workers``."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    config.validate()
    ids = list(range(trials))
    if workers <= 1:
        return _run_chunk((spec, config, seed, ids))
    chunks = [ids[i::workers] for i in range(workers)]
    out = ErrorStats()
    with ProcessPoolExecutor(workers) as pool:
        for part in pool.map(_run_chunk, [(spec, config, seed, c) for c in chunks]):
            out = out.merge(part)
    return out


INSTANCE_AXES = ("p", "k", "theta", "rho", "budget_mult", "budget_n")


@dataclass(frozen=True)
class SweepSpec:
    base: InstanceSpec
    axes: dict  # axis name -> list of values, in column order
    trials: int
    seed: int
    cap: int = 10**4

    def points(self) -> list[dict]:
        names = list(self.axes)
        config_names = {f.name for f in fields(StageConfig)}
        for name in names:
            if name not in INSTANCE_AXES and name not in config_names:
                raise InvalidParameterError(f"unknown sweep axis {name!r}")
        size = math.prod(len(v) for v in self.axes.values())
        if size > self.cap:
            raise InvalidParameterError(
                f"sweep has {size} points, above the cap of {self.cap}; raise the cap or shrink axes")
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]


def sweep(spec: SweepSpec, config: StageConfig, workers: int = 1) -> list[dict]:
    """One row of aggregated statistics per grid point."""
    config_names = {f.name for f in fields(StageConfig)}
    rows = []
    for pid, point in enumerate(spec.points()):
        inst_kw = {k: v for k, v in point.items() if k in INSTANCE_AXES}
        if "theta" in inst_kw:
            inst_kw.setdefault("k", None)
        if "budget_n" in inst_kw:
            inst_kw.setdefault("budget_mult", None)
        cfg_kw = {k: v for k, v in point.items() if k in config_names}
        stats = monte_carlo(replace(spec.base, **inst_kw), replace(config, **cfg_kw),
                            spec.trials, spec.seed, workers)
        lo, hi = stats.ci
        row = {"point_id": pid, **point, "trials": stats.trials, "successes": stats.successes,
               "pe_hat": stats.pe_hat, "ci_lo": lo, "ci_hi": hi,
               "mean_n_total": stats.mean_n_total}
        row.update({f"mean_n_{s}": v for s, v in stats.mean_tests().items()})
        row.update({"mean_fp": stats.mean_fp, "mean_fn": stats.mean_fn})
        rows.append(row)
    return rows


def write_rows_csv(rows: Sequence[dict], out: TextIO) -> None:
    if not rows:
        return
    w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def map_oracle(p: int, k: int, rho: float, pools: Sequence, outcomes: Sequence[int],
               chunk: int = 20000) -> frozenset[int]:
    """Exhaustive ML estimate of the defective k-set from a fixed transcript.

    For rho < 1/2 the BSC likelihood is decreasing in the number of outcomes
    that disagree with the noiseless OR, so the minimiser of disagreements is
    returned; ties go to the lexicographically first subset.
    """
    if math.comb(p, k) > MAP_ORACLE_LIMIT:
        raise InvalidParameterError(f"C({p}, {k}) exceeds {MAP_ORACLE_LIMIT} hypotheses")
    y = np.asarray(outcomes, dtype=bool)
    A = np.zeros((len(pools), p), dtype=bool)
    for i, pool in enumerate(pools):
        A[i, np.asarray(pool, dtype=np.int64) - 1] = True
    combos = itertools.combinations(range(p), k)
    best, best_cost = None, math.inf
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        u = A[:, block].any(axis=2)
        cost = (u != y[:, None]).sum(axis=0)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best, best_cost = block[i], cost[i]
    return frozenset(int(j) + 1 for j in best)
