"""Leading-order test-count bounds and rate curves for symmetric-noise group testing.

Everything is computed in nats; rates are reported in bits per test. The
``1 +/- o(1)`` factors of the asymptotic statements are dropped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, TextIO

from .core import DomainError, InvalidParameterError

LOG2 = math.log(2.0)


class Curve(str, Enum):
    CONVERSE = "Converse"
    THEOREM1 = "Theorem1"


def binary_entropy_nats(rho: float) -> float:
    """H2 in nats, with 0 log 0 = 0; valid on [0, 1]."""
    if not (0.0 <= rho <= 1.0):
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    return -sum(x * math.log(x) for x in (rho, 1.0 - rho) if x > 0)


def capacity_nats(rho: float) -> float:
    """BSC capacity log 2 - H2(rho); accepts rho = 0."""
    return LOG2 - binary_entropy_nats(rho)


def kl_flip_nats(rho: float) -> float:
    """D(rho || 1 - rho); infinite at rho = 0."""
    if rho == 0.0:
        return math.inf
    return (1.0 - 2.0 * rho) * math.log((1.0 - rho) / rho)


@dataclass(frozen=True)
class NoiseFunctionals:
    h2_nats: float
    capacity_nats: float
    kl_flip_nats: float

    @property
    def capacity_bits(self) -> float:
        return self.capacity_nats / LOG2

    @property
    def kl_flip_bits(self) -> float:
        return self.kl_flip_nats / LOG2


def _check_rho(rho: float) -> None:
    if not (0.0 < rho < 0.5):
        raise DomainError(f"rho must lie in the open interval (0, 1/2), got {rho}")


def noise_functionals(rho: float) -> NoiseFunctionals:
    _check_rho(rho)
    return NoiseFunctionals(binary_entropy_nats(rho), capacity_nats(rho), kl_flip_nats(rho))


def _check_pk(p: float, k: float) -> None:
    if not (1 <= k < p):
        raise InvalidParameterError(f"need 1 <= k < p, got p={p}, k={k}")


def converse_tests(p: float, k: float, rho: float) -> float:
    """Capacity converse k log(p/k) / (log 2 - H2(rho)), leading order."""
    _check_pk(p, k)
    nf = noise_functionals(rho)
    return k * math.log(p / k) / nf.capacity_nats


def thm1_tests(p: float, k: float, rho: float) -> float:
    """Four-stage achievability: converse term plus k log k / D(rho || 1-rho)."""
    _check_pk(p, k)
    nf = noise_functionals(rho)
    return k * math.log(p / k) / nf.capacity_nats + k * math.log(k) / nf.kl_flip_nats


@dataclass(frozen=True)
class BoundPoint:
    theta: float
    rate_bits_per_test: float
    which: Curve
    rho: float


def rate_at(rho: float, theta: float, which: Curve) -> float:
    if not (0.0 < theta < 1.0):
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    nf = noise_functionals(rho)
    if Curve(which) is Curve.CONVERSE:
        return nf.capacity_bits
    return 1.0 / (1.0 / nf.capacity_bits + (theta / (1.0 - theta)) / nf.kl_flip_bits)


def rate_curve(rho: float, thetas: Iterable[float], which: Curve) -> list[BoundPoint]:
    which = Curve(which)
    return [BoundPoint(float(t), rate_at(rho, t, which), which, rho) for t in thetas]


def empirical_rate(p: float, k: float, n: float) -> float:
    """k log2(p/k) / n, the plotted rate for a concrete test count."""
    return k * math.log2(p / k) / n


CURVE_COLUMNS = ("theta", "rate_bits_per_test", "which", "rho")


def write_curve_csv(points: Sequence[BoundPoint], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for pt in points:
        w.writerow([f"{pt.theta:.6g}", f"{pt.rate_bits_per_test:.6g}", pt.which.value,
                    f"{pt.rho:.6g}"])
