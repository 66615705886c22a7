"""Acceptance criteria 1-11 at their stated tolerances and runtime budgets.

Each test tags itself with its criterion number and a short account of
what it measured; tests/conftest.py prints one PASS/FAIL line per
criterion at the end of the session.
"""
import itertools
import time

import numpy as np
import pytest

from qulogic import rng as rngmod
from qulogic.consensus import (
    ReceiverStrategy,
    discord_avoidance_bound,
    estimate_forgery,
    exact_forgery_acceptance,
    run_round,
)
from qulogic.harness.config import load_config, shipped_scenarios
from qulogic.harness.report import emit_report
from qulogic.harness.runner import run_scenario
from qulogic.ledger import Chain, Ledger, Reason, TxBody, make_transaction, validate_transaction
from qulogic.lists import generate_correlated_lists
from qulogic.qbc import ALICE_CHEATS, BIT_VALUES, Revealed, run_bonded_session, run_session
from qulogic.qcrypto import KeyPool, MacConfig, ThreePassKey, ToeplitzSpec, run_three_pass, toeplitz_hash, verify_mac


@pytest.fixture
def criterion(record_property):
    """Tag the test with its criterion number; returns a callable that records the measurement."""

    def tag(number, measured=""):
        record_property("acceptance", number)
        record_property("measured", measured)

    return tag


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start

    def ok(self):
        return self.elapsed < self.seconds

    def __str__(self):
        return f"{self.elapsed:.1f}s of {self.seconds}s"


def lists_for(n, m, *label):
    return generate_correlated_lists(n, m, rngmod.stream(*label, "lists"))


# ---------------------------------------------------------------------------
# 1. three-pass correctness
# ---------------------------------------------------------------------------


def test_1_three_pass_exhaustive(criterion):
    with Budget(1) as t:
        failures = 0
        for q1, q2, bit in itertools.product(range(4), range(4), (0, 1)):
            got, _ = run_three_pass([bit], ThreePassKey.of([q1]), ThreePassKey.of([q2]), np.random.default_rng(0))
            failures += got.tolist() != [bit]
    criterion(1, f"{failures} failures over 32 cases, {t}")
    assert failures == 0 and t.ok()


# ---------------------------------------------------------------------------
# 2. honest sender agreement
# ---------------------------------------------------------------------------


def test_2_honest_sender_agreement(criterion):
    with Budget(10) as t:
        agree = 0
        for seed in range(1000):
            x = seed % 2
            out = run_round(lists_for(6, 60, seed, "acc2"), x, rngmod.stream(seed, "acc2"))
            agree += set(out.decisions.values()) == {x} and out.consensus == x
    criterion(2, f"{agree}/1000 rounds agree on x_s, {t}")
    assert agree == 1000 and t.ok()


# ---------------------------------------------------------------------------
# 3. double-spend exclusion
# ---------------------------------------------------------------------------


def test_3_double_spend_exclusion(criterion):
    with Budget(30) as t:
        split = 0
        for seed in range(1000):
            out = run_round(lists_for(6, 60, seed, "acc3"), 0, rngmod.stream(seed, "acc3"), sender_strategy="double_spend")
            split += len({v for v in out.honest_decisions().values() if v is not None}) > 1
        report = run_scenario(load_config("double-spend").with_overrides(batch=1000))
        conflicts = sum(r["conflicting_append"] for r in report.records)
    criterion(3, f"{split} split rounds, {conflicts} conflicting appends over 1000 ledger rounds, {t}")
    assert split == 0 and conflicts == 0 and t.ok()


# ---------------------------------------------------------------------------
# 4. tampering resilience
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("agents", [10, 11], ids=["10-agents", "10-receivers"])
def test_4_tampering_resilience(criterion, agents):
    # agents counts the sender; both readings of "n = 10" are run
    tamper = {k: ReceiverStrategy("tamper") for k in range(1, 8)}
    with Budget(60) as t:
        ok = 0
        for seed in range(1000):
            x = seed % 2
            out = run_round(lists_for(agents, 120, seed, "acc4", agents), x, rngmod.stream(seed, "acc4", agents),
                            receiver_strategies=tamper)
            ok += all(v == x for v in out.honest_decisions().values())
    criterion(4, f"[{agents} agents] honest receivers output x_s in {ok}/1000 rounds, {t}")
    assert ok / 1000 >= 0.99 and t.ok()


# ---------------------------------------------------------------------------
# 5. forgery curve
# ---------------------------------------------------------------------------


def test_5_forgery_curve(criterion):
    rows = []
    with Budget(120) as t:
        for m in (30, 60, 90):
            est = estimate_forgery(m, 100_000, rngmod.stream(5, "acc5", m))
            rows.append((m, est))
    ratios = [est.conditional / discord_avoidance_bound(m) for m, est in rows]
    decreasing = all(a.conditional > b.conditional for (_, a), (_, b) in zip(rows, rows[1:]))
    detail = "; ".join(
        f"m={m}: est {est.conditional:.3g} (raw {est.hits}/{est.attempts}, exact {exact_forgery_acceptance(m):.3g}, "
        f"bound {discord_avoidance_bound(m):.3g}, ratio {r:.2f})"
        for (m, est), r in zip(rows, ratios)
    )
    criterion(5, f"{detail}; decreasing={decreasing}, {t}")
    assert all(0.25 <= r <= 4 for r in ratios) and decreasing and t.ok()


# ---------------------------------------------------------------------------
# 6. Toeplitz MAC
# ---------------------------------------------------------------------------


def test_6_toeplitz_mac(criterion):
    cfg = MacConfig(digest_len=128, max_msg_bits=4096)
    with Budget(10) as t:
        rng = np.random.default_rng(6)
        spec = ToeplitzSpec(rng.integers(0, 2, 128 + 512 - 1), rng.integers(0, 2, 128), 128, 512)
        linear = 0
        for _ in range(1000):
            a, b = rng.integers(0, 2, 512), rng.integers(0, 2, 512)
            linear += np.array_equal(toeplitz_hash(spec, a ^ b), toeplitz_hash(spec, a) ^ toeplitz_hash(spec, b) ^ spec.pad)

        led = Ledger()
        (coin,) = led.mint(["alice"], 5, "genesis")
        tx = make_transaction("alice", TxBody((coin.txid,), "bob"), KeyPool(("alice", "m1"), 66), mac_config=cfg)
        msg = tx.body.mac_input()
        assert validate_transaction(tx, led, KeyPool(("m1", "alice"), 66), rng, mac_config=cfg).admissible
        caught = 0
        for i in range(len(msg)):
            flipped = msg.copy()
            flipped[i] ^= 1
            caught += not verify_mac(KeyPool(("m1", "alice"), 66), flipped, tx.digest, cfg)
        for i in range(len(tx.digest)):
            bad = tx.copy()
            bad.digest = tx.digest.copy()
            bad.digest[i] ^= 1
            caught += validate_transaction(bad, led, KeyPool(("m1", "alice"), 66), rng, mac_config=cfg).reason is Reason.MAC
        flips = len(msg) + len(tx.digest)
    criterion(6, f"linearity {linear}/1000, single-bit tampers caught {caught}/{flips}, {t}")
    assert linear == 1000 and caught == flips and t.ok()


# ---------------------------------------------------------------------------
# 7 and 11. shipped scenarios
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def shipped_runs():
    """Every shipped scenario at its configured batch, with the time it took."""
    out = {}
    for name in shipped_scenarios():
        cfg = load_config(name)
        start = time.perf_counter()
        out[name] = (cfg, run_scenario(cfg), time.perf_counter() - start)
    return out


def test_7_ledger_convergence_and_conservation(criterion, shipped_runs):
    problems, checked = [], 0
    for name, (cfg, report, _) in shipped_runs.items():
        if cfg.pipeline == "forgery":
            continue  # no ledger in this pipeline
        for rec in report.records:
            checked += 1
            if not rec["replicas_identical"]:
                problems.append(f"{name}#{rec['run']} replicas differ")
            if not rec["conserved"]:
                problems.append(f"{name}#{rec['run']} supply != minted")
            if rec.get("double_redemption"):
                problems.append(f"{name}#{rec['run']} double redemption")
    slowest = max(elapsed for _, _, elapsed in shipped_runs.values())
    criterion(7, f"{checked} runs over {len(shipped_runs) - 1} ledger scenarios, {len(problems)} problems, "
                 f"slowest scenario {slowest:.1f}s")
    assert problems == []


def test_11_determinism(criterion, shipped_runs):
    with Budget(300) as t:
        differ = [name for name, (cfg, report, _) in shipped_runs.items()
                  if emit_report(run_scenario(cfg)) != emit_report(report)]
    criterion(11, f"{len(shipped_runs) - len(differ)}/{len(shipped_runs)} scenarios byte-identical on re-run, {t}")
    assert differ == [] and t.ok()


# ---------------------------------------------------------------------------
# 8-10. quantum bit commitment
# ---------------------------------------------------------------------------


def test_8_qbc_correctness(criterion):
    with Budget(30) as t:
        hits = {}
        for bits in BIT_VALUES:
            hits[bits] = sum(run_session(bits, 40, 5, rngmod.stream(seed, "acc8", bits)).opening == Revealed(bits)
                             for seed in range(100))
    criterion(8, ", ".join(f"{b}: {k}/100" for b, k in hits.items()) + f", {t}")
    assert all(k == 100 for k in hits.values()) and t.ok()


def test_9_cheat_sensitivity(criterion):
    with Budget(60) as t:
        rng = rngmod.stream(9, "acc9", "bob")
        bob = sum(run_session("00", 40, 5, rng, bob_skew="zero_heavy", skew_count=1).bob_caught for _ in range(1000)) / 1000
        alice = {}
        for cheat in ALICE_CHEATS:
            rng = rngmod.stream(9, "acc9", cheat)
            alice[cheat] = sum(run_session(BIT_VALUES[k % 4], 40, 5, rng, alice_cheat=cheat).alice_caught
                               for k in range(1000)) / 1000
    criterion(9, f"Bob one-sequence skew {bob:.3f}; " + ", ".join(f"{c} {f:.3f}" for c, f in alice.items()) + f", {t}")
    assert 0.7 <= bob <= 0.9 and all(f > 0.05 for f in alice.values()) and t.ok()


BOND_CASES = [
    ("honest", {}),
    ("bob-skew", {"bob_skew": "zero_heavy"}),
    ("bob-lie-quantum", {"bob_skew": "cross_basis_lie", "skew_count": 5, "skew_params": {"lies": 2},
                         "evidence": "quantum"}),
    ("honest-quantum", {"evidence": "quantum"}),
] + [(f"alice-{c}", {"alice_cheat": c}) for c in ALICE_CHEATS]


def test_10_bond_enforcement(criterion):
    mismatches, runs, frozen = [], 0, 0
    with Budget(60) as t:
        for label, kw in BOND_CASES:
            for seed in range(100):
                chain = Chain([f"miner-{k}" for k in range(1, 6)], rngmod.derive_seed(seed, "acc10", label),
                              MacConfig(digest_len=128))
                chain.mint(["alice", "bob"] * 3, 1, "funding")
                b = run_bonded_session(chain, "alice", "bob", 3, BIT_VALUES[seed % 4], 40, 5,
                                       rngmod.stream(seed, "acc10", label), **kw)
                s = b.session
                runs += 1
                frozen += b.bob_frozen + bool(b.alice_frozen)
                if b.bob_frozen != s.bob_caught:
                    mismatches.append(f"{label}#{seed} bob")
                if s.opening is not None and b.alice_frozen != s.alice_caught:
                    mismatches.append(f"{label}#{seed} alice")
                if not chain.ledger.conserved():
                    mismatches.append(f"{label}#{seed} supply")
    criterion(10, f"{runs} bonded sessions, {frozen} frozen bonds, {len(mismatches)} mismatches, {t}")
    assert mismatches == [] and t.ok()
