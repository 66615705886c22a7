import itertools

import numpy as np
import pytest

from qulogic import rng as rngmod
from qulogic.consensus import (
    FORGE_STRATEGIES,
    Message,
    ReceiverStrategy,
    check_consistency,
    decide,
    discord_avoidance_bound,
    estimate_forgery,
    exact_forgery_acceptance,
    forge_ids,
    run_round,
    tally,
)
from qulogic.lists import generate_correlated_lists


def lists_for(n, m, seed):
    return generate_correlated_lists(n, m, rngmod.stream(seed, "lists"))


class TestConsistency:
    own = np.array([0, 1, 0, 1, 1, 0])

    def test_accepts_matching_ids(self):
        assert check_consistency(Message(1, (1, 3)), self.own)

    @pytest.mark.parametrize("msg", [
        None,
        Message(1, (1,)),  # too short
        Message(1, (1, 1)),  # repeated
        Message(1, (1, 6)),  # out of range
        Message(1, (0, 1)),  # wrong bit at 0
    ])
    def test_rejects(self, msg):
        assert not check_consistency(msg, self.own)


class TestDecide:
    own = np.array([0, 1, 0, 1, 1, 0])
    good1 = Message(1, (1, 3))
    good0 = Message(0, (0, 2))

    def test_equivocation_aborts(self):
        assert decide(self.good1, {2: self.good0}, self.own) == (None, "a")

    def test_value(self):
        assert decide(self.good1, {2: self.good1, 3: Message(0, (1, 3))}, self.own) == (1, "b")

    def test_all_outsiders_abort(self):
        assert decide(self.good1, {2: self.good1, 3: None}, self.own) == (1, "c")

    def test_alone_is_not_enough(self):
        assert decide(self.good1, {2: None}, self.own) == (None, "d")


def test_tally_counts_receivers_against_all_agents():
    assert tally({1: 1, 2: 1, 3: None}, 4) == 1
    assert tally({1: 1, 2: None, 3: None}, 4) is None
    assert tally({1: 0, 2: 0, 3: 1, 4: 1, 5: 1}, 7) is None


class TestForgeIds:
    def test_shape(self):
        own = lists_for(4, 60, 0).list_for(1)
        ids = forge_ids(own, 1, np.random.default_rng(1))
        assert len(ids) == 20 and len(set(ids)) == 20
        assert all(own[i] == 1 for i in ids)

    def test_informed_avoids_known_discord(self):
        lists = lists_for(4, 60, 3)
        own = lists.list_for(1)
        knowledge = {i: int(t) for i, t in enumerate(lists.sender)}
        ids = forge_ids(own, 0, np.random.default_rng(1), knowledge)
        assert all(lists.sender[i] == 0 for i in ids)


class TestRound:
    def test_all_honest(self):
        for seed in range(50):
            out = run_round(lists_for(6, 60, seed), seed % 2, rngmod.stream(seed, "round"))
            assert set(out.decisions.values()) == {seed % 2}
            assert out.consensus == seed % 2
            assert out.rewarded == frozenset(range(6))
            assert set(out.criteria.values()) == {"b"}

    def test_id_length_discipline(self):
        out = run_round(lists_for(5, 36, 1), 0, rngmod.stream(1, "r"))
        for rec in out.transcript:
            if rec.step in ("broadcast", "relay") and rec.message is not None:
                assert len(rec.message.ids) == 12

    def test_silent_outsider_gives_criterion_c(self):
        out = run_round(lists_for(5, 36, 2), 1, rngmod.stream(2, "r"),
                        receiver_strategies={4: ReceiverStrategy("silent_abort")})
        assert {out.criteria[k] for k in (1, 2, 3)} == {"c"}
        assert out.decisions[4] is None

    def test_double_spend_never_splits_honest_receivers(self):
        for seed in range(300):
            out = run_round(lists_for(6, 60, seed), 0, rngmod.stream(seed, "ds"), sender_strategy="double_spend")
            decided = {v for v in out.honest_decisions().values() if v is not None}
            assert len(decided) <= 1

    def test_random_equivocation_never_splits(self):
        for seed in range(300):
            out = run_round(lists_for(5, 30, seed), 0, rngmod.stream(seed, "eq"), sender_strategy="random_equivocate")
            decided = {v for v in out.honest_decisions().values() if v is not None}
            assert len(decided) <= 1

    @pytest.mark.parametrize("forge", FORGE_STRATEGIES)
    def test_every_forge_strategy_runs(self, forge):
        strat = ReceiverStrategy("tamper", forge, knowledge={0: 1})
        out = run_round(lists_for(5, 30, 0), 1, rngmod.stream(0, forge), receiver_strategies={1: strat})
        assert 1 not in out.honest

    def test_honest_sender_agreement_bound(self):
        # m = 180: see the forgery tests for why the single-receiver rate needs a long list
        m, n = 180, 6
        bound = 1 - 5 * n * discord_avoidance_bound(m)
        strategies = {k: ReceiverStrategy("tamper") for k in (1, 2, 3)}
        ok = 0
        for seed in range(1000):
            out = run_round(lists_for(n, m, seed), seed % 2, rngmod.stream(seed, "hs"), receiver_strategies=strategies)
            ok += all(v == seed % 2 for v in out.honest_decisions().values())
        assert ok / 1000 >= bound

    def test_serialization_is_deterministic(self):
        a = run_round(lists_for(5, 30, 9), 1, rngmod.stream(9, "r"), sender_strategy="double_spend")
        b = run_round(lists_for(5, 30, 9), 1, rngmod.stream(9, "r"), sender_strategy="double_spend")
        assert a.serialize() == b.serialize()

    def test_missing_lists_abort(self):
        out = run_round(None, 0, np.random.default_rng(0), n=4, m=12)
        assert out.consensus is None and out.aborted_reason == "missing lists"


# ---------------------------------------------------------------------------
# forgery probability
# ---------------------------------------------------------------------------


def brute_force_acceptance(m, receivers):
    """Enumerate everything for a small balanced list set.

    Positions are labelled by role only: the forger's candidates are the
    m/3 true positions and the m/6 discord positions where its coin shows
    the forged bit.  Each honest receiver's m/3 discord coins are one of the
    C(m/3, m/6) balanced arrangements; it accepts iff it holds the forged
    bit at every discord position the forger picked.
    """
    t, d = m // 3, m // 3
    true_spots = [("t", i) for i in range(t)]
    discord = list(range(d))
    forger_discord = discord[: d // 2]
    cands = true_spots + [("d", i) for i in forger_discord]
    arrangements = list(itertools.combinations(discord, d // 2))  # positions holding the forged bit
    picks = list(itertools.combinations(cands, t))
    total = 0.0
    for pick in picks:
        hit = [i for kind, i in pick if kind == "d"]
        p_one = sum(all(i in arr for i in hit) for arr in arrangements) / len(arrangements)
        total += p_one**receivers
    return total / len(picks)


@pytest.mark.parametrize("m", [6, 12, 18, 24])
@pytest.mark.parametrize("h", [1, 2, 3])
def test_exact_forgery_matches_enumeration(m, h):
    assert exact_forgery_acceptance(m, h) == pytest.approx(brute_force_acceptance(m, h))


def test_estimate_agrees_with_exact():
    est = estimate_forgery(30, 20_000, rngmod.stream(4, "forge"))
    exact = exact_forgery_acceptance(30)
    sigma = (exact * (1 - exact) / est.attempts) ** 0.5
    assert abs(est.empirical - exact) < 4 * sigma
    assert est.conditional == pytest.approx(exact, rel=0.1)
    assert est.single_receiver == pytest.approx(exact_forgery_acceptance(30, 1), rel=0.05)


def test_independent_discord_mode():
    est = estimate_forgery(30, 10_000, rngmod.stream(5, "forge"), discord="independent")
    assert est.conditional == pytest.approx(exact_forgery_acceptance(30, 2, "independent"), rel=0.1)


def test_single_receiver_rate_exceeds_heuristic():
    # one honest receiver alone accepts far more often than (2/3)^(m/3);
    # the joint acceptance of two receivers stays within a factor of 4
    for m in (30, 60, 90):
        assert exact_forgery_acceptance(m, 1) > 4 * discord_avoidance_bound(m)
        assert 0.25 <= exact_forgery_acceptance(m, 2) / discord_avoidance_bound(m) <= 4
