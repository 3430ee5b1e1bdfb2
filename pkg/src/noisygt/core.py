"""Problem instances, the noisy OR test oracle, and test accounting."""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np


class InvalidParameterError(ValueError):
    pass


class DomainError(ValueError):
    pass


class LedgerOrderError(RuntimeError):
    pass


class Stage(IntEnum):
    INNER_BINID = 1
    INNER_CODE = 2
    STEP2A = 3
    STEP2B = 4
    STEP3 = 5

    @property
    def label(self) -> str:
        return _STAGE_LABELS[self]

    @property
    def round(self) -> int:
        """Adaptive round the stage belongs to (2a and 2b share one)."""
        return _STAGE_ROUNDS[self]

    @classmethod
    def from_label(cls, label: str) -> "Stage":
        for stage, name in _STAGE_LABELS.items():
            if name == label:
                return stage
        raise KeyError(label)


_STAGE_LABELS = {
    Stage.INNER_BINID: "Inner-BinID",
    Stage.INNER_CODE: "Inner-Code",
    Stage.STEP2A: "Step2a",
    Stage.STEP2B: "Step2b",
    Stage.STEP3: "Step3",
}
_STAGE_ROUNDS = {
    Stage.INNER_BINID: 1,
    Stage.INNER_CODE: 2,
    Stage.STEP2A: 3,
    Stage.STEP2B: 3,
    Stage.STEP3: 4,
}
N_ROUNDS = 4


class Streams:
    """Named, independent RNG streams derived from one root seed.

    Each (seed, trial, name) triple maps to its own ``SeedSequence`` so a
    single stage can be replayed without running the others.
    """

    def __init__(self, seed: int, trial: int = 0):
        self.seed = int(seed)
        self.trial = int(trial)
        self._cache: dict[str, np.random.Generator] = {}

    def __call__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            key = (self.trial, zlib.crc32(name.encode()))
            ss = np.random.SeedSequence(self.seed, spawn_key=key)
            self._cache[name] = np.random.default_rng(ss)
        return self._cache[name]


def sample_defective_set(p: int, k: int, seed) -> frozenset[int]:
    """Uniform k-subset of {1, ..., p}. ``seed`` may be an int or a Generator."""
    if not (1 <= k < p):
        raise InvalidParameterError(f"need 1 <= k < p, got p={p}, k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(p, size=k, replace=False) + 1
    return frozenset(int(j) for j in chosen)


@dataclass(frozen=True)
class ProblemInstance:
    p: int
    k: int
    defectives: frozenset
    rho: float
    theta: Optional[float] = None

    def __post_init__(self):
        if not (1 <= self.k < self.p):
            raise InvalidParameterError(f"need 1 <= k < p, got p={self.p}, k={self.k}")
        object.__setattr__(self, "defectives", frozenset(int(j) for j in self.defectives))
        if len(self.defectives) != self.k:
            raise InvalidParameterError("|defectives| must equal k")
        if min(self.defectives) < 1 or max(self.defectives) > self.p:
            raise InvalidParameterError("defectives must lie in {1, ..., p}")
        if not (0.0 <= self.rho < 0.5):
            raise DomainError(f"rho must lie in [0, 1/2), got {self.rho}")

    @classmethod
    def generate(cls, p: int, rho: float, rng, k: Optional[int] = None,
                 theta: Optional[float] = None) -> "ProblemInstance":
        if k is None:
            if theta is None:
                raise InvalidParameterError("give k or theta")
            k = k_from_theta(p, theta)
        return cls(p, k, sample_defective_set(p, k, rng), rho, theta)

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean defective indicator indexed 1..p (slot 0 unused)."""
        m = np.zeros(self.p + 1, dtype=bool)
        m[list(self.defectives)] = True
        return m

    @cached_property
    def defective_array(self) -> np.ndarray:
        return np.array(sorted(self.defectives), dtype=np.int64)


def k_from_theta(p: int, theta: float) -> int:
    if not (0.0 < theta < 1.0):
        raise InvalidParameterError(f"theta must lie in (0, 1), got {theta}")
    return max(1, int(round(p ** theta)))


@dataclass
class TestRecord:
    __test__ = False

    seq: int
    stage: Stage
    pool: np.ndarray
    outcome: int


@dataclass
class TestLedger:
    """Append-only record of executed tests; the only source of the test count."""

    __test__ = False

    records: list = field(default_factory=list)
    stage_counts: Counter = field(default_factory=Counter)

    @property
    def n_total(self) -> int:
        return len(self.records)

    @property
    def last_stage(self) -> Optional[Stage]:
        return self.records[-1].stage if self.records else None

    def append(self, pool: np.ndarray, outcome: int, stage: Stage) -> TestRecord:
        last = self.last_stage
        if last is not None and stage < last:
            raise LedgerOrderError(f"{stage.label} test issued after {last.label}")
        rec = TestRecord(len(self.records) + 1, Stage(stage), pool, int(outcome))
        self.records.append(rec)
        self.stage_counts[rec.stage] += 1
        return rec

    def count(self, stage: Stage) -> int:
        return self.stage_counts.get(stage, 0)

    def per_stage(self) -> dict[str, int]:
        return {s.label: self.count(s) for s in Stage}

    def rounds_used(self) -> list[int]:
        return sorted({r.stage.round for r in self.records})

    def trace_rows(self) -> Iterable[tuple]:
        for r in self.records:
            yield r.seq, r.stage.label, len(r.pool), r.outcome


def _as_pool(pool, p: int) -> np.ndarray:
    arr = np.asarray(pool, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 1 or arr.max() > p):
        raise InvalidParameterError(f"pool contains indices outside 1..{p}")
    return arr


def run_test(pool, instance: ProblemInstance, ledger: TestLedger, stage: Stage,
             rng: np.random.Generator) -> int:
    """One test: OR of the pool's defective indicators, XOR Bernoulli(rho) noise."""
    arr = _as_pool(pool, instance.p)
    u = bool(instance.mask[arr].any())
    z = instance.rho > 0 and rng.random() < instance.rho
    y = int(u ^ z)
    ledger.append(arr, y, stage)
    return y


def run_tests(pools: Sequence, instance: ProblemInstance, ledger: TestLedger,
              stage: Stage, rng: np.random.Generator) -> np.ndarray:
    """Run a batch of tests from the same round; noise is drawn in one call."""
    arrs = [_as_pool(pool, instance.p) for pool in pools]
    mask = instance.mask
    u = np.fromiter((mask[a].any() for a in arrs), dtype=bool, count=len(arrs))
    if instance.rho > 0:
        z = rng.random(len(arrs)) < instance.rho
    else:
        z = np.zeros(len(arrs), dtype=bool)
    y = (u ^ z).astype(np.int8)
    for a, out in zip(arrs, y):
        ledger.append(a, out, stage)
    return y


def mistakes(estimate: Iterable[int], truth: Iterable[int]) -> tuple[int, int]:
    """(false positives, false negatives) of ``estimate`` against ``truth``."""
    est, tru = set(estimate), set(truth)
    return len(est - tru), len(tru - est)
