import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisygt.core import (
    InvalidParameterError,
    ProblemInstance,
    Stage,
    Streams,
    TestLedger,
    mistakes,
)
from noisygt.stages import (
    StageConfig,
    StageFailure,
    _breakdown,
    allocate_code,
    allocate_round3,
    allocate_round4,
    full_algorithm,
    n_bins,
    partition_bins,
    plan_stages,
    step_2b,
    step_3,
)
from noisygt.theory import kl_flip_nats


def test_config_roundtrip_and_validation():
    cfg = StageConfig()
    assert StageConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidParameterError):
        StageConfig.from_dict({"nope": 1})
    for bad in ({"alpha1": 1.0}, {"epsilon": 0.0}, {"c_check": 0.5},
                {"f_code": 0.7, "f_binid": 0.4}, {"binid_mode": "Sloppy"}):
        with pytest.raises((InvalidParameterError, ValueError)):
            replace(cfg, **bad).validate()


def test_bin_count_rule():
    cfg = StageConfig(epsilon=0.4)
    assert n_bins(2**16, 50, cfg) == round(50**1.4)
    assert n_bins(100, 50, cfg) == 100
    with pytest.raises(InvalidParameterError):
        n_bins(2**16, 50, replace(cfg, bins=10))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(1, 500), st.integers(0, 2**31 - 1))
def test_partition_is_balanced_partition(p, B, seed):
    B = min(B, p)
    a = partition_bins(p, B, np.random.default_rng(seed))
    items = np.concatenate(a.bins)
    assert sorted(items.tolist()) == list(range(1, p + 1))
    sizes = [len(b) for b in a.bins]
    assert max(sizes) - min(sizes) <= 1
    for b, members in enumerate(a.bins):
        assert (a.item_to_bin[members] == b).all()


def test_collision_count_by_hand():
    a = partition_bins(6, 3, np.random.default_rng(0))
    b0, b1 = a.bins[0], a.bins[1]
    inst = ProblemInstance(6, 3, frozenset({int(b0[0]), int(b0[1]), int(b1[0])}), 0.0)
    assert a.collisions(inst) == 2
    assert a.defective_counts(inst).tolist() == [2, 1, 0]


def test_plan_constants_mode():
    cfg = StageConfig()
    p, k, rho = 2**14, 40, 0.05
    plan = plan_stages(p, k, rho, cfg)
    d = kl_flip_nats(rho)
    assert plan.kmax_2a == math.ceil(cfg.alpha1 * k)
    assert plan.keep == k - math.ceil(cfg.alpha2 * k)
    assert plan.ncheck == math.ceil(cfg.c_check * math.log(k) / d)
    assert plan.ntilde % 2 == 1 and plan.ntilde >= cfg.c_tilde * math.log(k) / d
    assert plan.n_2a == math.ceil(cfg.c_ncomp_exact * plan.kmax_2a * math.log(p))


def test_plan_budget_mode_splits():
    cfg = StageConfig()
    plan = plan_stages(2**14, 40, 0.05, cfg, budget=5000)
    assert plan.n_binid == round(cfg.f_binid * 5000)
    assert plan.code_pool == round(cfg.f_code * 5000)
    assert plan.ntilde % 2 == 1
    with pytest.raises(InvalidParameterError):
        plan_stages(2**14, 40, 0.05, cfg, budget=0)


def test_allocators_share_the_remainder():
    plan = plan_stages(2**14, 40, 0.05, StageConfig(), budget=6000)
    code = allocate_code(plan, 50, 64)
    assert code.n_prime == max(plan.code_pool // 50, 6)
    r3 = allocate_round3(code, 3000, 45)
    assert r3.n_2a + 45 * r3.ncheck <= 3000
    r4 = allocate_round4(r3, 5900, 10)
    assert r4.ntilde == 9
    # constants mode is left alone
    const = plan_stages(2**14, 40, 0.05, StageConfig())
    assert allocate_round3(const, 10**9, 3) == const


def test_step_2b_ranking_and_saturation():
    inst = ProblemInstance(20, 3, frozenset({2, 5, 9}), 0.0)
    plan = replace(plan_stages(2**10, 3, 0.05, StageConfig()), keep=2, ncheck=3)
    kept, counts = step_2b({2, 5, 9, 11}, 3, inst, plan, TestLedger(), Streams(0))
    assert counts == {2: 3, 5: 3, 9: 3, 11: 0}
    assert kept == frozenset({2, 5})  # ties go to the smaller label
    small, _ = step_2b({9}, 3, inst, plan, TestLedger(), Streams(0))
    assert small == frozenset({9})


def test_step_3_strict_majority():
    inst = ProblemInstance(20, 2, frozenset({4, 7}), 0.0)
    plan = replace(plan_stages(2**10, 3, 0.05, StageConfig()), ntilde=5)
    led = TestLedger()
    assert step_3({4, 7, 8}, inst, plan, led, Streams(1)) == frozenset({4, 7})
    assert led.count(Stage.STEP3) == 15


def test_breakdown_explains_stage1_mistakes():
    # bins: {1,2} {3,4} {5,6} {7,8}; defectives 1,2 (collision), 3, 5
    a = partition_bins(8, 4, np.random.default_rng(0))
    a.bins = [np.array([1, 2]), np.array([3, 4]), np.array([5, 6]), np.array([7, 8])]
    a.item_to_bin = np.array([-1, 0, 0, 1, 1, 2, 2, 3, 3])
    inst = ProblemInstance(8, 4, frozenset({1, 2, 3, 5}), 0.1)
    flagged = frozenset({0, 1, 3})  # misses bin 2, false bin 3
    decoded = {0: 1, 1: 4, 3: 7}  # bin 1 decodes wrongly
    bd = _breakdown(a, flagged, decoded, inst)
    fp, fn = mistakes(frozenset(decoded.values()), inst.defectives)
    assert (bd.fp, bd.fn) == (fp, fn) == (2, 3)
    assert bd.n_col == 2 and bd.missed_bins == 1 and bd.decode_errors == 1


def test_noiseless_full_run_succeeds():
    inst = ProblemInstance.generate(2**12, 0.0, np.random.default_rng(2), k=20)
    rep = full_algorithm(inst, StageConfig(), seed=2)
    assert rep.success
    assert rep.estimate == inst.defectives


def test_full_run_is_deterministic():
    inst = ProblemInstance.generate(2**12, 0.05, np.random.default_rng(3), k=20)
    a = full_algorithm(inst, StageConfig(), seed=9, budget=4000)
    b = full_algorithm(inst, StageConfig(), seed=9, budget=4000)
    assert a.to_json() == b.to_json()


def test_ledger_matches_plan_and_rounds():
    inst = ProblemInstance.generate(2**12, 0.05, np.random.default_rng(4), k=20)
    rep = full_algorithm(inst, StageConfig(), seed=4, budget=4000, keep_ledger=True)
    plan = rep.plan
    n = rep.n_per_stage
    assert n["Inner-BinID"] == plan.n_binid
    assert n["Inner-Code"] == plan.n_prime * rep.bins_flagged
    assert n["Step2a"] == plan.n_2a
    assert n["Step2b"] == plan.ncheck * len(rep.s1)
    assert n["Step3"] == plan.ntilde * (len(rep.s1) - len(rep.s2b))
    assert rep.ledger.n_total == rep.n_total
    seqs = [r.seq for r in rep.ledger.records]
    assert seqs == list(range(1, len(seqs) + 1))
    assert rep.estimate == rep.s2a | rep.s2b | rep.s3


def test_bad_exact_params_abort_the_trial():
    inst = ProblemInstance.generate(2**10, 0.05, np.random.default_rng(0), k=4)
    with pytest.raises(StageFailure) as info:
        full_algorithm(inst, replace(StageConfig(), exact_delta=0.46), seed=0)
    assert info.value.stage is Stage.STEP2A
    assert isinstance(info.value.cause, InvalidParameterError)


def test_step_3_majority_against_exact_binomial():
    # retention failure for a defective is P[Bin(25, 0.89) <= 12] = 4.95e-7 (exact sum)
    tail = sum(math.comb(25, i) * 0.89**i * 0.11 ** (25 - i) for i in range(13))
    assert tail == pytest.approx(4.950026727609367e-07, rel=1e-9)
    n = 10_000
    inst = ProblemInstance(2 * n, n, frozenset(range(1, n + 1)), 0.11)
    plan = replace(plan_stages(2**10, 3, 0.11, StageConfig()), ntilde=25)
    kept = step_3(range(1, 2 * n + 1), inst, plan, TestLedger(), Streams(12))
    # expected misses n * tail = 0.005 in each direction
    assert kept == inst.defectives
