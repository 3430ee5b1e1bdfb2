"""The four-round noisy adaptive algorithm.

Round 1 identifies bins holding defectives (NCOMP on super-items), round 2
runs a channel code inside every flagged bin, round 3 runs the exact NCOMP
search over the remaining items together with repeated individual checks of
the first estimate, and round 4 settles the leftover items by majority vote.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .codes import Codebook, bin_pools, build_codebook, ml_decode, required_code_length
from .core import (
    InvalidParameterError,
    ProblemInstance,
    Stage,
    Streams,
    TestLedger,
    mistakes,
    run_tests,
)
from .ncomp import (
    Mode,
    NcompParams,
    NcompTelemetry,
    approx_tests_needed,
    check_separation,
    default_delta,
    exact_tests_needed,
    ncomp_decode,
    ncomp_design,
    ncomp_telemetry,
)
from .theory import kl_flip_nats


class StageFailure(RuntimeError):
    """A sub-stage could not run (e.g. impossible codebook); aborts the trial."""

    def __init__(self, stage: Stage, cause: Exception):
        super().__init__(f"{stage.label}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StageConfig:
    """Every constant the algorithm leaves free.

    ``None`` for a delta means "derive from rho". ``bins`` overrides the
    ``round(k ** (1 + epsilon))`` rule. The ``f_*`` fractions only matter when a
    total test budget is imposed.
    """

    epsilon: float = 0.8
    alpha1: float = 0.15
    alpha2: float = 0.3
    eta: float = 0.5
    nprime_mult: float = 1.6
    c_ncomp: float = 25.0
    c_ncomp_exact: float = 6.0
    c_check: float = 3.0
    c_tilde: float = 3.0
    binid_nu: float = 0.6
    binid_delta: Optional[float] = 0.13
    binid_mode: str = Mode.APPROXIMATE.value
    exact_nu: float = 0.6
    exact_delta: Optional[float] = None
    bins: Optional[int] = None
    f_code: float = 0.35
    f_binid: float = 0.43

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise InvalidParameterError("epsilon must be positive")
        for name in ("alpha1", "alpha2"):
            if not (0.0 < getattr(self, name) < 1.0):
                raise InvalidParameterError(f"{name} must lie in (0, 1)")
        for name in ("nprime_mult", "c_ncomp", "c_ncomp_exact", "c_check", "c_tilde"):
            if getattr(self, name) < 1.0:
                raise InvalidParameterError(f"{name} must be >= 1")
        if self.eta < 0:
            raise InvalidParameterError("eta must be nonnegative")
        if not (0 < self.f_code and 0 < self.f_binid and self.f_code + self.f_binid < 1):
            raise InvalidParameterError("budget fractions must be positive and sum below 1")
        Mode(self.binid_mode)

    def binid_params(self, rho: float, k: int) -> NcompParams:
        delta = default_delta(rho) if self.binid_delta is None else self.binid_delta
        return NcompParams(delta, self.binid_nu, k, Mode(self.binid_mode))

    def exact_params(self, rho: float, kmax: int) -> NcompParams:
        delta = default_delta(rho) if self.exact_delta is None else self.exact_delta
        return NcompParams(delta, self.exact_nu, kmax, Mode.EXACT)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def n_bins(p: int, k: int, config: StageConfig) -> int:
    B = config.bins if config.bins is not None else int(round(k ** (1.0 + config.epsilon)))
    B = min(B, p)
    if B < k:
        raise InvalidParameterError(f"need at least k={k} bins, got B={B}")
    return B


@dataclass(frozen=True)
class StagePlan:
    """Test counts for every stage of one trial.

    With a total ``budget`` the later counts are provisional: each round
    re-divides what is left over the sets actually produced by the previous
    rounds (see ``allocate_*``).
    """

    B: int
    n_binid: int
    n_prime: int
    kmax_2a: int
    n_2a: int
    ncheck: int
    ntilde: int
    keep: int  # items retained by step 2b
    budget: Optional[int] = None
    code_pool: int = 0
    weights: tuple = (0.0, 0.0, 0.0)  # relative cost of steps 2a, 2b, 3

    def to_dict(self) -> dict:
        return asdict(self)


def _odd_ceil(x: float) -> int:
    n = max(1, math.ceil(x - 1e-9))
    return n if n % 2 else n + 1


def _odd_floor(x: float) -> int:
    n = max(1, int(math.floor(x + 1e-9)))
    return n if n % 2 else max(1, n - 1)


def plan_stages(p: int, k: int, rho: float, config: StageConfig,
                budget: Optional[int] = None) -> StagePlan:
    """Derive per-stage test counts from the constants, or split a total budget.

    With a budget, ``f_binid`` of it goes to bin identification, ``f_code`` to
    the per-bin codes, and the rest to steps 2a, 2b and 3 in proportion to
    their constant-mode costs.
    """
    config.validate()
    B = n_bins(p, k, config)
    kmax_2a = max(1, math.ceil(config.alpha1 * k - 1e-9))
    keep = k - math.ceil(config.alpha2 * k - 1e-9)
    p_prime = math.ceil(p / B)
    d = kl_flip_nats(rho)
    logk_over_d = math.log(k) / d if k > 1 else 0.0

    if budget is None:
        if B == k:
            n_binid = 0
        elif Mode(config.binid_mode) is Mode.EXACT:
            n_binid = exact_tests_needed(k, B, config.c_ncomp)
        else:
            n_binid = approx_tests_needed(k, B, config.alpha1 / 3, config.c_ncomp)
        if p_prime > 1:
            n_prime = math.ceil(config.nprime_mult * required_code_length(p, B, rho, config.eta) - 1e-9)
            n_prime = max(n_prime, math.ceil(math.log2(p_prime)))
        else:
            n_prime = 0
        n_2a = exact_tests_needed(kmax_2a, p, config.c_ncomp_exact)
        ncheck = max(1, math.ceil(config.c_check * logk_over_d - 1e-9))
        ntilde = _odd_ceil(config.c_tilde * logk_over_d)
        return StagePlan(B, n_binid, n_prime, kmax_2a, n_2a, ncheck, ntilde, keep)

    if budget < 1:
        raise InvalidParameterError("budget must be positive")
    n_binid = int(round(config.f_binid * budget)) if B > k else 0
    code_pool = int(round(config.f_code * budget)) if p_prime > 1 else 0
    weights = (config.c_ncomp_exact * kmax_2a * math.log(p),
               config.c_check * logk_over_d,  # per item of s1
               config.c_tilde * logk_over_d)  # per residual item
    plan = StagePlan(B, n_binid, 0, kmax_2a, 0, 0, 0, keep, budget, code_pool, weights)
    # provisional values assuming exactly k bins are flagged
    plan = allocate_code(plan, k, p_prime)
    used = n_binid + k * plan.n_prime
    plan = allocate_round3(plan, used, k)
    used += plan.n_2a + k * plan.ncheck
    return allocate_round4(plan, used, k - keep)


def allocate_code(plan: StagePlan, n_flagged: int, p_prime: int) -> StagePlan:
    """Budget mode: share the code tests among the bins actually flagged."""
    if plan.budget is None or p_prime <= 1 or n_flagged == 0:
        return plan
    n_prime = max(plan.code_pool // n_flagged, math.ceil(math.log2(p_prime)), 1)
    return replace(plan, n_prime=n_prime)


def allocate_round3(plan: StagePlan, used: int, s1_size: int) -> StagePlan:
    """Budget mode: split what is left between steps 2a, 2b and a reserve for step 3."""
    if plan.budget is None:
        return plan
    rest = max(plan.budget - used, 0)
    w2a, w2b, w3 = plan.weights
    total = w2a + w2b * s1_size + w3 * max(s1_size - plan.keep, 0)
    if total <= 0:
        return replace(plan, n_2a=max(1, rest), ncheck=1)
    n_2a = max(1, int(rest * w2a / total))
    ncheck = max(1, int(rest * w2b / total))
    return replace(plan, n_2a=n_2a, ncheck=ncheck)


def allocate_round4(plan: StagePlan, used: int, resid_size: int) -> StagePlan:
    """Budget mode: spend the remainder on the residual items (odd repeat count)."""
    if plan.budget is None:
        return plan
    if resid_size <= 0:
        return replace(plan, ntilde=1)
    return replace(plan, ntilde=_odd_floor(max(plan.budget - used, 0) / resid_size))


@dataclass
class BinAssignment:
    bins: list  # list of int arrays of item indices
    item_to_bin: np.ndarray  # index 1..p -> bin id (0-based); slot 0 unused

    @property
    def B(self) -> int:
        return len(self.bins)

    def defective_counts(self, instance: ProblemInstance) -> np.ndarray:
        return np.bincount(self.item_to_bin[instance.defective_array], minlength=self.B)

    def collisions(self, instance: ProblemInstance) -> int:
        """N_col: defectives sharing their bin with another defective."""
        c = self.defective_counts(instance)
        return int(c[c >= 2].sum())


def partition_bins(p: int, B: int, rng: np.random.Generator) -> BinAssignment:
    """Uniformly random balanced partition of {1..p} into B bins."""
    if not (1 <= B <= p):
        raise InvalidParameterError(f"need 1 <= B <= p, got p={p}, B={B}")
    perm = rng.permutation(p) + 1
    bins = np.array_split(perm, B)
    item_to_bin = np.empty(p + 1, dtype=np.int64)
    item_to_bin[0] = -1
    for b, items in enumerate(bins):
        item_to_bin[items] = b
    return BinAssignment(bins, item_to_bin)


@dataclass
class BinIdResult:
    flagged: frozenset
    n_tests: int
    telemetry: Optional[NcompTelemetry] = None


def identify_defective_bins(assignment: BinAssignment, instance: ProblemInstance,
                            config: StageConfig, plan: StagePlan, ledger: TestLedger,
                            streams: Streams) -> BinIdResult:
    """NCOMP over bins as super-items; a test on a super-item includes the whole bin."""
    B = assignment.B
    if plan.n_binid == 0:
        # every bin flagged: nothing to learn from tests
        return BinIdResult(frozenset(range(B)), 0)
    params = config.binid_params(instance.rho, instance.k)
    design = ncomp_design(B, plan.n_binid, params, streams("design/binid"))
    pools = [np.concatenate([assignment.bins[b] for b in np.flatnonzero(row)])
             if row.any() else np.empty(0, dtype=np.int64) for row in design.matrix]
    y = run_tests(pools, instance, ledger, Stage.INNER_BINID, streams("noise/binid"))
    flagged = frozenset(j - 1 for j in ncomp_decode(design, y, params, instance.rho))
    true_bins = np.flatnonzero(assignment.defective_counts(instance)) + 1
    tele = ncomp_telemetry(design, y, params, instance.rho, true_bins)
    return BinIdResult(flagged, plan.n_binid, tele)


@dataclass
class Stage1Breakdown:
    """Sources of Stage-1 mistakes, classified bin by bin.

    ``fp``/``fn`` rebuild the mistake counts from bin-level events only, so
    comparing them with a direct set difference is an independent check.
    """

    n_col: int = 0
    missed_bins: int = 0
    missed_bin_defectives: int = 0
    false_bins: int = 0
    collision_bins_flagged: int = 0
    collision_fn: int = 0
    collision_fp: int = 0
    decode_errors: int = 0

    @property
    def fn(self) -> int:
        return self.missed_bin_defectives + self.collision_fn + self.decode_errors

    @property
    def fp(self) -> int:
        return self.false_bins + self.collision_fp + self.decode_errors


@dataclass
class InnerResult:
    s1: frozenset
    assignment: BinAssignment
    flagged: frozenset
    decoded: dict  # bin id -> decoded item
    breakdown: Stage1Breakdown
    telemetry: Optional[NcompTelemetry]
    plan: StagePlan


def _breakdown(assignment: BinAssignment, flagged: frozenset, decoded: dict,
               instance: ProblemInstance) -> Stage1Breakdown:
    counts = assignment.defective_counts(instance)
    mask = instance.mask
    bd = Stage1Breakdown(n_col=int(counts[counts >= 2].sum()))
    for b in np.flatnonzero(counts):
        c = int(counts[b])
        if b not in flagged:
            bd.missed_bins += 1
            bd.missed_bin_defectives += c
            continue
        hit = bool(mask[decoded[b]])
        if c == 1:
            bd.decode_errors += not hit
        else:
            bd.collision_bins_flagged += 1
            bd.collision_fn += c - hit
            bd.collision_fp += not hit
    bd.false_bins = sum(1 for b in flagged if counts[b] == 0)
    return bd


def inner_adaptive(instance: ProblemInstance, config: StageConfig, plan: StagePlan,
                   ledger: TestLedger, streams: Streams) -> InnerResult:
    """Binning, bin identification, then one decoded item per flagged bin."""
    assignment = partition_bins(instance.p, plan.B, streams("binning"))
    try:
        binid = identify_defective_bins(assignment, instance, config, plan, ledger, streams)
    except InvalidParameterError as exc:
        raise StageFailure(Stage.INNER_BINID, exc) from exc

    flagged = sorted(binid.flagged)
    p_prime = max(len(b) for b in assignment.bins)
    plan = allocate_code(plan, len(flagged), p_prime)
    decoded: dict = {}
    if p_prime == 1 or plan.n_prime == 0:
        for b in flagged:
            decoded[b] = int(assignment.bins[b][0])
    elif flagged:
        try:
            codebook = build_codebook(p_prime, plan.n_prime, streams("codebook"))
        except InvalidParameterError as exc:
            raise StageFailure(Stage.INNER_CODE, exc) from exc
        pools = []
        for b in flagged:
            pools.extend(bin_pools(assignment.bins[b], codebook))
        y = run_tests(pools, instance, ledger, Stage.INNER_CODE, streams("noise/code"))
        y = y.reshape(len(flagged), plan.n_prime)
        for b, received in zip(flagged, y):
            items = assignment.bins[b]
            j = ml_decode(received, codebook.prefix(len(items)))
            decoded[b] = int(items[j])
    s1 = frozenset(decoded.values())
    bd = _breakdown(assignment, binid.flagged, decoded, instance)
    return InnerResult(s1, assignment, binid.flagged, decoded, bd, binid.telemetry, plan)


def step_2a(ground_reduced: np.ndarray, instance: ProblemInstance, config: StageConfig,
            plan: StagePlan, ledger: TestLedger, streams: Streams) -> frozenset:
    """Exact NCOMP over the items left out of the first estimate."""
    ground = np.asarray(ground_reduced, dtype=np.int64)
    if plan.n_2a == 0 or ground.size == 0:
        return frozenset()
    params = config.exact_params(instance.rho, plan.kmax_2a)
    try:
        check_separation(params, instance.rho)
        design = ncomp_design(ground.size, plan.n_2a, params, streams("design/2a"))
    except InvalidParameterError as exc:
        raise StageFailure(Stage.STEP2A, exc) from exc
    y = run_tests(design.pools(ground), instance, ledger, Stage.STEP2A, streams("noise/2a"))
    return frozenset(int(ground[j - 1]) for j in ncomp_decode(design, y, params, instance.rho))


def individual_counts(items: list, reps: int, instance: ProblemInstance, ledger: TestLedger,
                      stage: Stage, rng: np.random.Generator) -> dict:
    """Test each item alone ``reps`` times; return its number of positives."""
    if not items or reps == 0:
        return {j: 0 for j in items}
    pools = [np.array([j]) for j in items for _ in range(reps)]
    y = run_tests(pools, instance, ledger, stage, rng).reshape(len(items), reps)
    return {j: int(row.sum()) for j, row in zip(items, y)}


def step_2b(s1, k: int, instance: ProblemInstance, plan: StagePlan, ledger: TestLedger,
            streams: Streams) -> tuple[frozenset, dict]:
    """Keep the ``plan.keep`` items of s1 with the most positives (ties: smaller index)."""
    items = sorted(s1)
    counts = individual_counts(items, plan.ncheck, instance, ledger, Stage.STEP2B,
                               streams("noise/2b"))
    m = min(len(items), plan.keep)
    ranked = sorted(items, key=lambda j: (-counts[j], j))
    return frozenset(ranked[:m]), counts


def step_3(residual, instance: ProblemInstance, plan: StagePlan, ledger: TestLedger,
           streams: Streams) -> frozenset:
    """Strict-majority vote over ``plan.ntilde`` individual tests per item."""
    items = sorted(residual)
    counts = individual_counts(items, plan.ntilde, instance, ledger, Stage.STEP3,
                               streams("noise/3"))
    return frozenset(j for j in items if 2 * counts[j] > plan.ntilde)


@dataclass
class RunReport:
    p: int
    k: int
    rho: float
    seed: int
    trial: int
    plan: StagePlan
    estimate: frozenset
    s1: frozenset
    s2a: frozenset
    s2b: frozenset
    s3: frozenset
    n_per_stage: dict
    stage1_fp: int
    stage1_fn: int
    fp: int
    fn: int
    breakdown: Stage1Breakdown
    bins_flagged: int
    bin_fp: int
    bin_fn: int
    rounds: int
    telemetry: Optional[NcompTelemetry] = None
    ledger: Optional[TestLedger] = field(default=None, repr=False)

    @property
    def n_total(self) -> int:
        return sum(self.n_per_stage.values())

    @property
    def success(self) -> bool:
        return self.fp == 0 and self.fn == 0

    @property
    def collisions(self) -> int:
        return self.breakdown.n_col

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "k": self.k,
            "rho": self.rho,
            "seed": self.seed,
            "trial": self.trial,
            "n_total": self.n_total,
            "n_per_stage": dict(self.n_per_stage),
            "fp": self.fp,
            "fn": self.fn,
            "success": self.success,
            "stage1_fp": self.stage1_fp,
            "stage1_fn": self.stage1_fn,
            "collisions": self.collisions,
            "bins_flagged": self.bins_flagged,
            "bin_fp": self.bin_fp,
            "bin_fn": self.bin_fn,
            "rounds": self.rounds,
            "plan": self.plan.to_dict(),
            "estimate": sorted(self.estimate),
        }


def full_algorithm(instance: ProblemInstance, config: StageConfig, seed: int, trial: int = 0,
                   budget: Optional[int] = None, keep_ledger: bool = False) -> RunReport:
    """Run all four adaptive rounds and return the accounting for the trial."""
    streams = Streams(seed, trial)
    plan = plan_stages(instance.p, instance.k, instance.rho, config, budget)
    ledger = TestLedger()

    inner = inner_adaptive(instance, config, plan, ledger, streams)
    s1 = inner.s1
    plan = allocate_round3(inner.plan, ledger.n_total, len(s1))
    # round 3: steps 2a and 2b only depend on s1
    everything = np.arange(1, instance.p + 1)
    ground = everything[~np.isin(everything, np.fromiter(s1, dtype=np.int64, count=len(s1)))]
    s2a = step_2a(ground, instance, config, plan, ledger, streams)
    s2b, _ = step_2b(s1, instance.k, instance, plan, ledger, streams)
    # round 4
    plan = allocate_round4(plan, ledger.n_total, len(s1) - len(s2b))
    s3 = step_3(s1 - s2b, instance, plan, ledger, streams)
    estimate = s2a | s2b | s3

    fp1, fn1 = mistakes(s1, instance.defectives)
    fp, fn = mistakes(estimate, instance.defectives)
    true_bins = set(np.flatnonzero(inner.assignment.defective_counts(instance)).tolist())
    bin_fp = len(inner.flagged - true_bins)
    bin_fn = len(true_bins - inner.flagged)
    return RunReport(
        p=instance.p, k=instance.k, rho=instance.rho, seed=seed, trial=trial, plan=plan,
        estimate=estimate, s1=s1, s2a=s2a, s2b=s2b, s3=s3,
        n_per_stage=ledger.per_stage(), stage1_fp=fp1, stage1_fn=fn1, fp=fp, fn=fn,
        breakdown=inner.breakdown, bins_flagged=len(inner.flagged), bin_fp=bin_fp,
        bin_fn=bin_fn, rounds=len(ledger.rounds_used()), telemetry=inner.telemetry,
        ledger=ledger if keep_ledger else None,
    )
