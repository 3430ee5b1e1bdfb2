"""NCOMP decoding under a Bernoulli test design.

An item is declared defective when the fraction of its tests that came back
positive is at least ``1 - rho - delta``. Items never tested are declared
non-defective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .core import InvalidParameterError

# rows generated per chunk; bounds the float buffer to ~32 MB
_CHUNK_ENTRIES = 1 << 22


class Mode(str, Enum):
    EXACT = "Exact"
    APPROXIMATE = "Approximate"


def default_delta(rho: float) -> float:
    """A quarter of the gap to 1/2, clamped to [0.02, 0.12]."""
    return min(max((0.5 - rho) / 4.0, 0.02), 0.12)


@dataclass(frozen=True)
class NcompParams:
    delta: float
    nu: float
    kmax: int
    mode: Mode = Mode.EXACT

    @property
    def inclusion_prob(self) -> float:
        return self.nu / self.kmax

    def threshold(self, rho: float) -> float:
        return 1.0 - rho - self.delta

    def with_kmax(self, kmax: int) -> "NcompParams":
        return replace(self, kmax=max(1, int(kmax)))


def nondefective_positive_rate(params: NcompParams, rho: float, k: Optional[int] = None) -> float:
    """Probability a test containing a fixed non-defective comes back positive."""
    k = params.kmax if k is None else k
    clean = 1.0 - (1.0 - params.inclusion_prob) ** k
    return rho + (1.0 - 2.0 * rho) * clean


def check_separation(params: NcompParams, rho: float) -> None:
    """Reject parameters whose threshold does not sit above the non-defective rate."""
    if not (0.0 < params.delta < 0.5 - rho):
        raise InvalidParameterError(f"delta must lie in (0, 1/2 - rho), got {params.delta}")
    q = nondefective_positive_rate(params, rho)
    if params.threshold(rho) <= q:
        raise InvalidParameterError(
            f"threshold {params.threshold(rho):.3f} does not exceed the non-defective "
            f"positive rate {q:.3f}; lower nu or delta")


@dataclass(frozen=True)
class BernoulliDesign:
    n: int
    p: int
    inclusion_prob: float
    matrix: np.ndarray  # (n, p) bool, row i is the pool of test i

    def pools(self, labels: Optional[np.ndarray] = None) -> list[np.ndarray]:
        """Row pools as item arrays; 1-based positions unless ``labels`` maps them."""
        if labels is None:
            labels = np.arange(1, self.p + 1)
        return [labels[row] for row in self.matrix]


def ncomp_design(p: int, n: int, params: NcompParams, rng: np.random.Generator) -> BernoulliDesign:
    if p < 1 or n < 0:
        raise InvalidParameterError("need p >= 1 and n >= 0")
    q = params.inclusion_prob
    if not (0.0 < q <= 1.0):
        raise InvalidParameterError(f"inclusion probability nu/kmax must lie in (0, 1], got {q}")
    matrix = np.empty((n, p), dtype=bool)
    step = max(1, _CHUNK_ENTRIES // max(p, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        matrix[lo:hi] = rng.random((hi - lo, p), dtype=np.float32) < q
    return BernoulliDesign(n, p, q, matrix)


def item_statistics(design: BernoulliDesign, outcomes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-item (N'_j, N'_{j,1}): tests including j, and those that were positive."""
    outcomes = np.asarray(outcomes).astype(bool)
    if outcomes.shape != (design.n,):
        raise InvalidParameterError("outcomes length must equal the number of tests")
    n_in = design.matrix.sum(axis=0, dtype=np.int64)
    n_pos = design.matrix[outcomes].sum(axis=0, dtype=np.int64)
    return n_in, n_pos


def declared_mask(n_in: np.ndarray, n_pos: np.ndarray, rho: float, delta: float) -> np.ndarray:
    return (n_in > 0) & (n_pos >= (1.0 - rho - delta) * n_in)


def ncomp_decode(design: BernoulliDesign, outcomes: np.ndarray, params: NcompParams,
                 rho: float) -> frozenset[int]:
    """Items (1-based positions) passing the NCOMP threshold."""
    n_in, n_pos = item_statistics(design, outcomes)
    hits = np.flatnonzero(declared_mask(n_in, n_pos, rho, params.delta)) + 1
    return frozenset(int(j) for j in hits)


@dataclass(frozen=True)
class NcompTelemetry:
    """Counts of the three failure events of the NCOMP union bound."""

    low_inclusion: int  # N'_j <= n nu / (2 kmax)
    defective_below: int  # defective under threshold
    nondefective_above: int  # non-defective at or over threshold

    @property
    def mistakes(self) -> int:
        return self.defective_below + self.nondefective_above


def ncomp_telemetry(design: BernoulliDesign, outcomes: np.ndarray, params: NcompParams,
                    rho: float, truth: Iterable[int]) -> NcompTelemetry:
    n_in, n_pos = item_statistics(design, outcomes)
    declared = declared_mask(n_in, n_pos, rho, params.delta)
    is_def = np.zeros(design.p, dtype=bool)
    idx = np.fromiter(truth, dtype=np.int64) - 1
    is_def[idx] = True
    # reported at half the mean inclusion count; the concentration bounds for the other two
    # events assume N'_j > n nu / kmax, so this count is a diagnostic, not a decode input
    low = n_in <= design.n * params.nu / (2.0 * params.kmax)
    return NcompTelemetry(int(low.sum()), int((is_def & ~declared).sum()),
                          int((~is_def & declared).sum()))


def approx_tests_needed(k: int, population: int, alpha: float, c_ncomp: float) -> int:
    """ceil(c k log(population / k)), the approximate-recovery test count.

    ``alpha`` is the mistake fraction the constant was calibrated for; it does
    not enter the formula.
    """
    if not (1 <= k < population):
        raise InvalidParameterError(f"need 1 <= k < population, got k={k}, population={population}")
    if not (0.0 < alpha < 1.0):
        raise InvalidParameterError("alpha must lie in (0, 1)")
    return math.ceil(c_ncomp * k * math.log(population / k) - 1e-9)


def exact_tests_needed(kmax: int, population: int, c_exact: float) -> int:
    """ceil(c kmax log(population)), the exact-recovery test count."""
    if kmax < 1 or population < 2:
        raise InvalidParameterError("need kmax >= 1 and population >= 2")
    return math.ceil(c_exact * kmax * math.log(population) - 1e-9)
