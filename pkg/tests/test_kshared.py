import random

import pytest

from at2.kshared import (
    BOTTOM,
    FAILURE,
    SUCCESS,
    AtomicAssetTransfer,
    ConsensusFromAssetTransfer,
    KConsensusObject,
    KSharedAssetTransfer,
    ResultTransfer,
    consensus_exhaustive,
    consensus_random,
    kshared_history_check,
)
from at2.scheduler import Scheduler, random_chooser


def test_k_consensus_object_serves_only_k_proposals():
    kc = KConsensusObject(2)
    assert kc.propose("a") == "a"
    assert kc.propose("b") == "a"
    assert kc.propose("c") is BOTTOM


def test_objects_refuse_more_owners_than_k():
    owners = {0: [1, 2, 3], 1: []}
    q0 = {0: 1, 1: 0}
    with pytest.raises(ValueError):
        AtomicAssetTransfer(2, owners, q0)
    with pytest.raises(ValueError):
        KSharedAssetTransfer(2, [1, 2, 3], owners, q0)
    with pytest.raises(ValueError):
        ConsensusFromAssetTransfer(3, "atomic", object_k=2)


def test_result_transfer_order_is_round_then_proposer():
    assert min(ResultTransfer(1, 1, 0, 1, 5), ResultTransfer(0, 3, 0, 1, 1)).proposer == 3
    assert min(ResultTransfer(0, 2, 0, 1, 5), ResultTransfer(0, 1, 0, 1, 9)).proposer == 1


def _solo(gen):
    sched = Scheduler({0: gen})
    sched.run(random_chooser(random.Random(0)))
    return sched.results[0]


def test_kshared_sequential_examples():
    obj = KSharedAssetTransfer(2, [1, 2], {0: [1, 2], 1: [1]}, {0: 5, 1: 0})
    assert _solo(obj.transfer(1, 0, 1, 3)) is True
    assert _solo(obj.transfer(2, 0, 1, 3)) is False
    assert _solo(obj.read(2, 0)) == 2
    assert _solo(obj.read(1, 1)) == 3
    assert _solo(obj.transfer(2, 1, 0, 1)) is False  # 2 does not own account 1


@pytest.mark.parametrize("backend", ["atomic", "kshared"])
def test_solo_proposer_decides_own_value(backend):
    cons = ConsensusFromAssetTransfer(3, backend)
    assert _solo(cons.propose(2, "mine")) == "mine"


def test_exhaustive_two_process_consensus_atomic_backend():
    report = consensus_exhaustive(2, "atomic")
    assert report.runs > 10
    assert report.ok


@pytest.mark.parametrize("k", [2, 3])
def test_random_schedules_with_crashes(k):
    report = consensus_random(k, 300, seed=k)
    assert report.runs == 300 and report.ok


def test_kshared_histories_linearizable():
    checked, violations = kshared_history_check(2, 3, 150, seed=4)
    assert (checked, violations) == (150, 0)


def paused_owner_is_helped(seed: int) -> bool:
    """Owner 1 announces a transfer and stops; owner 2 must commit it while doing its own."""
    rng = random.Random(seed)
    obj = KSharedAssetTransfer(2, [1, 2], {0: [1, 2], 1: []}, {0: 6, 1: 0})
    x1, x2 = rng.randint(0, 6), rng.randint(0, 6)
    sched = Scheduler({1: obj.transfer(1, 0, 1, x1), 2: obj.transfer(2, 0, 1, x2)})
    # let owner 2 run a little first so the interleaving varies
    for _ in range(rng.randint(0, 1)):
        sched.step(2)
    while obj.announce[0][1].value is BOTTOM:
        sched.step(1)
    assert sched.run_solo(2, max_steps=200)
    mine = ResultTransfer(0, 1, 0, 1, x1)
    return obj.committed_result(mine) in (SUCCESS, FAILURE) and obj.pending_announcements(0) == 0


def test_paused_owner_transfer_is_committed_by_active_owner():
    assert all(paused_owner_is_helped(s) for s in range(200))
