"""Random codebooks for 1-sparse recovery inside a bin, and their ML decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .core import InvalidParameterError, ProblemInstance, Stage, TestLedger, run_tests
from .theory import capacity_nats

MAX_RESAMPLE_ROUNDS = 1000


@dataclass(frozen=True)
class Codebook:
    """``words[:, j]`` is the codeword of the j-th item of a bin."""

    words: np.ndarray

    @property
    def n_prime(self) -> int:
        return self.words.shape[0]

    @property
    def p_prime(self) -> int:
        return self.words.shape[1]

    def prefix(self, m: int) -> "Codebook":
        """First ``m`` codewords, used for bins smaller than the codebook."""
        return Codebook(self.words[:, :m])

    def dump(self, out: TextIO) -> None:
        for j in range(self.p_prime):
            out.write("".join("1" if b else "0" for b in self.words[:, j]) + "\n")

    @classmethod
    def load(cls, lines) -> "Codebook":
        cols = [ln.strip() for ln in lines if ln.strip()]
        return cls(np.array([[c == "1" for c in col] for col in cols], dtype=np.uint8).T)


def required_code_length(p: int, B: int, rho: float, eta: float) -> int:
    """ceil((1 + eta) log(p/B) / capacity); at rho = 0 this is ceil((1+eta) log2(p/B))."""
    if not (1 <= B < p):
        raise InvalidParameterError(f"need 1 <= B < p, got p={p}, B={B}")
    if not (0.0 <= rho < 0.5):
        raise InvalidParameterError(f"rho must lie in [0, 1/2), got {rho}")
    if eta < 0:
        raise InvalidParameterError("eta must be nonnegative")
    n = (1.0 + eta) * math.log(p / B) / capacity_nats(rho)
    # guard against ceil(1.0000000002) on exact values
    return max(1, math.ceil(n - 1e-9))


def _column_keys(words: np.ndarray) -> np.ndarray:
    packed = np.packbits(words.astype(np.uint8), axis=0)
    return np.ascontiguousarray(packed.T).view(np.dtype((np.void, packed.shape[0]))).ravel()


def build_codebook(p_prime: int, n_prime: int, rng: np.random.Generator) -> Codebook:
    """i.i.d. Bernoulli(1/2) codebook with pairwise distinct columns."""
    if p_prime < 2 or n_prime < 1:
        raise InvalidParameterError("need p' >= 2 and n' >= 1")
    if n_prime < 63 and p_prime > 2 ** n_prime:
        raise InvalidParameterError(
            f"cannot have {p_prime} distinct codewords of length {n_prime}")
    words = rng.integers(0, 2, size=(n_prime, p_prime), dtype=np.uint8)
    for _ in range(MAX_RESAMPLE_ROUNDS):
        keys = _column_keys(words)
        _, first = np.unique(keys, return_index=True)
        dup = np.setdiff1d(np.arange(p_prime), first)
        if dup.size == 0:
            return Codebook(words)
        words[:, dup] = rng.integers(0, 2, size=(n_prime, dup.size), dtype=np.uint8)
    raise RuntimeError("could not draw distinct codewords")


def bin_pools(bin_items: Sequence[int], codebook: Codebook) -> list[np.ndarray]:
    items = np.asarray(bin_items, dtype=np.int64)
    words = codebook.words[:, : items.size].astype(bool)
    return [items[row] for row in words]


def run_bin_tests(bin_items: Sequence[int], codebook: Codebook, instance: ProblemInstance,
                  ledger: TestLedger, rng: np.random.Generator) -> np.ndarray:
    """Test t pools the bin items whose codeword has a 1 in position t."""
    if len(bin_items) > codebook.p_prime:
        raise InvalidParameterError("bin larger than codebook")
    return run_tests(bin_pools(bin_items, codebook), instance, ledger, Stage.INNER_CODE, rng)


def hamming_distances(received: np.ndarray, codebook: Codebook) -> np.ndarray:
    received = np.asarray(received, dtype=np.uint8)
    if received.shape != (codebook.n_prime,):
        raise InvalidParameterError("received word length does not match the code length")
    return (codebook.words != received[:, None]).sum(axis=0)


def ml_decode(received: np.ndarray, codebook: Codebook) -> int:
    """Nearest codeword in Hamming distance (ML for a BSC with rho < 1/2).

    Ties go to the smallest column index.
    """
    return int(np.argmin(hamming_distances(received, codebook)))
