import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisygt.codes import (
    Codebook,
    build_codebook,
    ml_decode,
    required_code_length,
    run_bin_tests,
)
from noisygt.core import InvalidParameterError, ProblemInstance, Stage, TestLedger


def brute_nearest(received, words):
    """Independent nearest-codeword search with an explicit smallest-index tie rule."""
    best, best_d = None, None
    for j in range(words.shape[1]):
        d = sum(int(a) != int(b) for a, b in zip(received, words[:, j]))
        if best_d is None or d < best_d:
            best, best_d = j, d
    return best


def test_required_code_length_examples():
    assert required_code_length(2, 1, 0.0, 0.0) == 1
    assert required_code_length(2, 1, 1e-12, 1e-12) == 1
    # (1.1)(10 log 2)/capacity(0.11) = 21.996 by independent evaluation
    assert required_code_length(2**20, 2**10, 0.11, 0.1) == 22
    assert required_code_length(2**20, 2**10, 0.0, 0.0) == 10


def test_required_code_length_monotone():
    rs = np.linspace(0, 0.45, 30)
    vals = [required_code_length(5000, 40, r, 0.2) for r in rs]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    vals = [required_code_length(5000, 40, 0.1, e) for e in np.linspace(0, 2, 30)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidParameterError):
        required_code_length(10, 10, 0.1, 0.1)


def test_codebook_two_items_one_bit():
    cb = build_codebook(2, 1, np.random.default_rng(0))
    assert sorted(cb.words[0].tolist()) == [0, 1]


def test_codebook_statistics_and_reproducibility():
    a = build_codebook(16, 64, np.random.default_rng(5))
    b = build_codebook(16, 64, np.random.default_rng(5))
    assert np.array_equal(a.words, b.words)
    assert abs(a.words.mean() - 0.5) <= 0.05


def test_codebook_pigeonhole():
    with pytest.raises(InvalidParameterError):
        build_codebook(5, 2, np.random.default_rng(0))
    cb = build_codebook(4, 2, np.random.default_rng(0))
    assert {tuple(c) for c in cb.words.T} == {(0, 0), (0, 1), (1, 0), (1, 1)}


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 200), st.integers(8, 30), st.integers(0, 10**6))
def test_codebook_columns_distinct(pp, n, seed):
    cb = build_codebook(pp, n, np.random.default_rng(seed))
    assert cb.words.shape == (n, pp)
    assert len({c.tobytes() for c in cb.words.T}) == pp


def test_bin_tests_noiseless():
    items = [11, 12, 13, 14, 15, 16, 17, 18]
    cb = build_codebook(8, 12, np.random.default_rng(1))
    inst = ProblemInstance(20, 1, {14}, 0.0)
    ledger = TestLedger()
    y = run_bin_tests(items, cb, inst, ledger, np.random.default_rng(0))
    assert np.array_equal(y, cb.words[:, 3])
    assert ledger.count(Stage.INNER_CODE) == 12
    inst0 = ProblemInstance(20, 1, {1}, 0.0)
    assert not run_bin_tests(items, cb, inst0, TestLedger(), np.random.default_rng(0)).any()


def test_bin_tests_noise_concentration():
    n = 400
    items = list(range(1, 33))
    cb = build_codebook(32, n, np.random.default_rng(2))
    inst = ProblemInstance(40, 1, {7}, 0.11)
    y = run_bin_tests(items, cb, inst, TestLedger(), np.random.default_rng(3))
    d = int((y != cb.words[:, 6]).sum())
    assert abs(d - 0.11 * n) <= 4 * math.sqrt(0.11 * 0.89 * n)


def test_ml_decode_exact_and_ties():
    cb = build_codebook(30, 20, np.random.default_rng(4))
    for j in range(30):
        assert ml_decode(cb.words[:, j], cb) == j
    words = np.zeros((4, 6), dtype=np.uint8)
    words[:, 2] = [1, 1, 0, 0]
    words[:, 5] = [0, 0, 1, 1]
    words[:, [0, 1, 3, 4]] = [[1, 1, 1, 1], [1, 1, 1, 0], [1, 1, 0, 1], [1, 0, 1, 1]]
    words[:, [0, 1, 3, 4]] = words[:, [0, 1, 3, 4]]
    received = np.array([1, 0, 1, 0], dtype=np.uint8)
    tie = Codebook(np.stack([words[:, 2], words[:, 5]], axis=1))
    assert ml_decode(received, tie) == 0
    # columns 2 and 5 both at distance 2, everything else farther
    far = np.zeros((4, 6), dtype=np.uint8)
    far[:, 2] = [1, 1, 0, 0]
    far[:, 5] = [0, 0, 1, 1]
    for j in (0, 1, 3, 4):
        far[:, j] = [0, 1, 0, 1]
    assert ml_decode(received, Codebook(far)) == 2


def test_ml_decode_matches_bruteforce():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        pp = int(rng.integers(2, 257))
        n = int(rng.integers(9, 40))
        cb = build_codebook(pp, n, rng)
        j = int(rng.integers(pp))
        received = cb.words[:, j] ^ (rng.random(n) < 0.15)
        assert ml_decode(received, cb) == brute_nearest(received, cb.words)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_ml_decode_row_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    cb = build_codebook(40, 25, rng)
    received = rng.integers(0, 2, 25).astype(np.uint8)
    perm = rng.permutation(25)
    permuted = Codebook(cb.words[perm])
    d = (cb.words != received[:, None]).sum(0)
    if (d == d.min()).sum() == 1:
        assert ml_decode(received[perm], permuted) == ml_decode(received, cb)


def _decode_error_rate(pp, n, rho, trials, seed):
    rng = np.random.default_rng(seed)
    errors = 0
    for t in range(trials):
        if t % 50 == 0:
            cb = build_codebook(pp, n, rng)
        j = int(rng.integers(pp))
        errors += ml_decode(cb.words[:, j] ^ (rng.random(n) < rho), cb) != j
    return errors / trials


def test_decode_error_small_with_slack():
    n = required_code_length(64, 1, 0.11, 0.5)
    assert n == 18
    assert _decode_error_rate(64, math.ceil(1.5 * n), 0.11, 3000, 0) <= 0.05


def test_decode_error_nonincreasing_in_length():
    L = 10
    rates = [_decode_error_rate(64, m, 0.11, 3000, 1) for m in (L, 2 * L, 4 * L)]
    assert rates[0] >= rates[1] >= rates[2]


def test_codebook_dump_roundtrip():
    cb = build_codebook(7, 9, np.random.default_rng(0))
    buf = io.StringIO()
    cb.dump(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 7 and all(len(l) == 9 and set(l) <= {"0", "1"} for l in lines)
    assert np.array_equal(Codebook.load(lines).words, cb.words)
