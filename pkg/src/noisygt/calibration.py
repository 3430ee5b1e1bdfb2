"""Empirical calibration of the constants the asymptotic analysis leaves open."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .core import ProblemInstance, Streams, TestLedger, mistakes
from .ncomp import Mode
from .sim import InstanceSpec, monte_carlo
from .stages import (
    StageConfig,
    identify_defective_bins,
    partition_bins,
    plan_stages,
    step_2a,
)


def bin_guarantee_rate(config: StageConfig, p: int, k: int, rho: float, trials: int,
                       seed: int) -> float:
    """Fraction of trials with bin-level max{FP, FN} <= (alpha1 / 3) k."""
    plan = plan_stages(p, k, rho, config)
    ok = 0
    for t in range(trials):
        streams = Streams(seed, t)
        inst = ProblemInstance.generate(p, rho, streams("defective-set"), k=k)
        assignment = partition_bins(p, plan.B, streams("binning"))
        res = identify_defective_bins(assignment, inst, config, plan, TestLedger(), streams)
        true_bins = set(np.flatnonzero(assignment.defective_counts(inst)).tolist())
        fp, fn = mistakes(res.flagged, true_bins)
        ok += max(fp, fn) <= config.alpha1 * k / 3
    return ok / trials


def calibrate_c_ncomp(config: StageConfig, grid: Sequence[float], p: int = 2**16, k: int = 50,
                      rho: float = 0.11, trials: int = 200, target: float = 0.9,
                      seed: int = 0) -> tuple[Optional[float], list]:
    """Smallest bin-identification constant meeting the bin guarantee in ``target`` of trials."""
    history = []
    for c in sorted(grid):
        cfg = replace(config, c_ncomp=c, binid_mode=Mode.APPROXIMATE.value)
        rate = bin_guarantee_rate(cfg, p, k, rho, trials, seed)
        history.append((c, rate))
        if rate >= target:
            return c, history
    return None, history


def planted_recovery_rate(config: StageConfig, population: int, planted: int, k: int,
                          rho: float, trials: int, seed: int) -> float:
    """Fraction of trials in which step 2a returns exactly the planted defectives."""
    plan = plan_stages(population + k, k, rho, config)
    plan = replace(plan, n_2a=math.ceil(config.c_ncomp_exact * plan.kmax_2a * math.log(population)))
    ground = np.arange(1, population + 1)
    ok = 0
    for t in range(trials):
        streams = Streams(seed, t)
        rng = streams("defective-set")
        hidden = rng.choice(population, size=planted, replace=False) + 1
        # the remaining k - planted defectives sit outside the ground set
        others = np.arange(population + 1, population + 1 + k - planted)
        inst = ProblemInstance(population + k, k, frozenset(hidden.tolist() + others.tolist()), rho)
        found = step_2a(ground, inst, config, plan, TestLedger(), streams)
        ok += found == frozenset(hidden.tolist())
    return ok / trials


def calibrate_c_ncomp_exact(config: StageConfig, grid: Sequence[float], population: int = 10**4,
                            planted: int = 5, k: int = 50, rho: float = 0.11,
                            trials: int = 200, target: float = 0.9,
                            seed: int = 0) -> tuple[Optional[float], list]:
    history = []
    for c in sorted(grid):
        cfg = replace(config, c_ncomp_exact=c)
        rate = planted_recovery_rate(cfg, population, planted, k, rho, trials, seed)
        history.append((c, rate))
        if rate >= target:
            return c, history
    return None, history


def calibrate_budget_split(config: StageConfig, spec: InstanceSpec,
                           f_code_grid: Sequence[float], f_binid_grid: Sequence[float],
                           trials: int = 100, seed: int = 0) -> tuple[dict, list]:
    """Grid search over the budget fractions; returns the lowest-error pair."""
    history = []
    for fc in f_code_grid:
        for fb in f_binid_grid:
            if fc + fb >= 1:
                continue
            stats = monte_carlo(spec, replace(config, f_code=fc, f_binid=fb), trials, seed)
            history.append(((fc, fb), stats.pe_hat))
    (fc, fb), _ = min(history, key=lambda h: (h[1], h[0]))
    return {"f_code": fc, "f_binid": fb}, history
