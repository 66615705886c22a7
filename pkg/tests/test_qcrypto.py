import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qulogic.qcrypto import (
    InterceptResend,
    KeyPool,
    MacConfig,
    SizingError,
    ThreePassKey,
    ToeplitzSpec,
    as_bits,
    mac,
    message_bits,
    run_three_pass,
    toeplitz_hash,
    verify_mac,
)
from qulogic.qubit import GATES, Basis, Label, apply_gate, basis_state, outcome_probability

VECTORS = json.loads((Path(__file__).parent / "fixtures" / "toeplitz_vectors.json").read_text())


# ---------------------------------------------------------------------------
# Toeplitz hashing
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("vec", VECTORS, ids=lambda v: f"{v['digest_len']}x{v['msg_len']}")
def test_frozen_vectors(vec):
    spec = ToeplitzSpec(as_bits(vec["seed"]), as_bits(vec["pad"]), vec["digest_len"], vec["msg_len"])
    assert "".join(map(str, toeplitz_hash(spec, vec["msg"]))) == vec["digest"]


def test_matrix_is_toeplitz():
    rng = np.random.default_rng(0)
    spec = ToeplitzSpec(rng.integers(0, 2, 10 + 7 - 1), rng.integers(0, 2, 10), 10, 7)
    t = spec.matrix()
    assert all(t[i, j] == t[i + 1, j + 1] for i in range(9) for j in range(6))


def test_seed_length_checked():
    with pytest.raises(SizingError, match="digest_len \\+ msg_len - 1"):
        ToeplitzSpec(np.zeros(5, np.uint8), np.zeros(4, np.uint8), 4, 3)


def test_empty_message_hashes_to_pad():
    pad = as_bits("1011")
    assert toeplitz_hash(ToeplitzSpec(np.zeros(3, np.uint8), pad, 4, 0), []).tolist() == [1, 0, 1, 1]


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_hash_matches_matrix_product(d, n, seed):
    rng = np.random.default_rng(seed)
    spec = ToeplitzSpec(rng.integers(0, 2, d + n - 1), rng.integers(0, 2, d), d, n)
    msg = rng.integers(0, 2, n)
    expected = (spec.matrix().astype(int) @ msg) % 2 ^ spec.pad
    assert np.array_equal(toeplitz_hash(spec, msg), expected)


def test_linearity():
    # without the pad the hash is GF(2)-linear: h(a ^ b) = h(a) ^ h(b) ^ r
    rng = np.random.default_rng(1)
    spec = ToeplitzSpec(rng.integers(0, 2, 64 + 200 - 1), rng.integers(0, 2, 64), 64, 200)
    for _ in range(200):
        a, b = rng.integers(0, 2, 200), rng.integers(0, 2, 200)
        lhs = toeplitz_hash(spec, a ^ b)
        rhs = toeplitz_hash(spec, a) ^ toeplitz_hash(spec, b) ^ spec.pad
        assert np.array_equal(lhs, rhs)


# ---------------------------------------------------------------------------
# key pools and MACs
# ---------------------------------------------------------------------------


class TestKeyPool:
    def test_endpoints_agree(self):
        a = KeyPool(("alice", "m1"), 9)
        b = KeyPool(("m1", "alice"), 9)
        assert np.array_equal(a.draw(1500), b.draw(1500))

    def test_pairs_differ(self):
        assert not np.array_equal(KeyPool(("a", "b"), 9).draw(256), KeyPool(("a", "c"), 9).draw(256))

    def test_peek_is_consistent_with_draw(self):
        pool = KeyPool(("a", "b"), 1)
        head = pool.peek(100, 900)
        pool.draw(100)
        assert np.array_equal(pool.draw(900), head)

    def test_twin_keeps_cursor(self):
        pool = KeyPool(("a", "b"), 1)
        pool.draw(77)
        twin = pool.twin()
        assert twin.cursor == 77 and np.array_equal(twin.draw(64), pool.draw(64))


class TestMac:
    cfg = MacConfig(digest_len=32, max_msg_bits=512)

    def test_round_trip(self):
        msg = message_bits([b"hello", b"world"])
        tag = mac(KeyPool(("s", "m"), 5), msg, self.cfg)
        assert verify_mac(KeyPool(("m", "s"), 5), msg, tag, self.cfg)

    def test_every_frame_is_fresh(self):
        pool = KeyPool(("s", "m"), 5)
        msg = message_bits([b"x"])
        assert not np.array_equal(mac(pool, msg, self.cfg), mac(pool, msg, self.cfg))

    def test_failed_check_still_consumes_a_frame(self):
        send, recv = KeyPool(("s", "m"), 5), KeyPool(("m", "s"), 5)
        msg = message_bits([b"x"])
        bad = mac(send, msg, self.cfg) ^ 1
        assert not verify_mac(recv, msg, bad, self.cfg)
        good = mac(send, msg, self.cfg)
        assert verify_mac(recv, msg, good, self.cfg)
        assert send.cursor == recv.cursor == 2 * self.cfg.frame_bits

    def test_oversize_message_rejected_in_step(self):
        send, recv = KeyPool(("s", "m"), 5), KeyPool(("m", "s"), 5)
        big = np.zeros(self.cfg.max_msg_bits + 1, np.uint8)
        with pytest.raises(SizingError):
            mac(send, big, self.cfg)
        assert not verify_mac(recv, big, np.zeros(32, np.uint8), self.cfg)
        assert send.cursor == recv.cursor

    def test_single_bit_tamper(self):
        msg = message_bits([b"abc"])
        tag = mac(KeyPool(("s", "m"), 2), msg, self.cfg)
        recv = KeyPool(("m", "s"), 2)
        for i in range(len(msg)):
            flipped = msg.copy()
            flipped[i] ^= 1
            probe = KeyPool(("m", "s"), 2, recv.cursor)
            assert not verify_mac(probe, flipped, tag, self.cfg)


# ---------------------------------------------------------------------------
# three-pass protocol
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("q1,q2,bit", list(itertools.product(range(4), range(4), (0, 1))))
def test_three_pass_exhaustive(q1, q2, bit):
    rng = np.random.default_rng(q1 * 8 + q2 * 2 + bit)
    got, transcript = run_three_pass([bit], ThreePassKey.of([q1]), ThreePassKey.of([q2]), rng)
    assert got.tolist() == [bit]
    assert len(transcript.passes) == 3


def test_three_pass_long_random_payload():
    rng = np.random.default_rng(5)
    bits = rng.integers(0, 2, 300)
    got, _ = run_three_pass(bits, ThreePassKey.random(300, rng), ThreePassKey.random(300, rng), rng)
    assert np.array_equal(got, bits)


def test_three_pass_rejects_length_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(SizingError):
        run_three_pass([0, 1], ThreePassKey.of([0]), ThreePassKey.of([0, 1]), rng)


def tap_error_oracle() -> float:
    """Exact error rate of a computational-basis tap on pass 0, by enumeration.

    Pass 0 carries X(k1)|b>.  Measuring it gives outcome o with Born
    probability; the forwarded |o> then travels through X(k2), X(-k1),
    X(-k2), i.e. ends as X(-k1)|o>, and the receiver's reading of that is
    compared with b.  Keys and bits are uniform.
    """
    total = 0.0
    for k1, bit in itertools.product(range(4), (0, 1)):
        sent = apply_gate(GATES[k1], basis_state(Label.ONE if bit else Label.ZERO))
        for o in (0, 1):
            p_o = outcome_probability(sent, Basis.COMPUTATIONAL, o)
            final = apply_gate(GATES[-k1 % 4], basis_state(Label.ONE if o else Label.ZERO))
            total += p_o * outcome_probability(final, Basis.COMPUTATIONAL, 1 - bit) / 8
    return total


def test_tap_error_rate_oracle_value():
    assert tap_error_oracle() == pytest.approx(0.25)


def test_tap_error_rate_simulated():
    rng = np.random.default_rng(8)
    n = 20_000
    bits = rng.integers(0, 2, n)
    tap = InterceptResend(passes=(0,))
    got, _ = run_three_pass(bits, ThreePassKey.random(n, rng), ThreePassKey.random(n, rng), rng, tap=tap)
    assert abs(np.mean(got != bits) - tap_error_oracle()) < 0.015
    assert len(tap.observed) == 1
