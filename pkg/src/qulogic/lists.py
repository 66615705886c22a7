"""Correlated-list generation, distribution, verification and composition.

Agent 0 is the consensus sender and holds a trit list; agents 1..n-1 are
receivers holding bit lists.  At every position where the sender's trit is
0 or 1 all receivers hold that same bit; where it is 2 (a "discord
position") each receiver holds its own fair coin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .qcrypto import SizingError, Tap, ThreePassKey, ThreePassTranscript, run_three_pass


class ParameterError(ValueError):
    pass


class MalformedPayload(ValueError):
    pass


class DeliveryError(RuntimeError):
    def __init__(self, distributor, agent, reason):
        super().__init__(f"distributor {distributor} failed to deliver to agent {agent}: {reason}")
        self.distributor = distributor
        self.agent = agent


class NoHonestDistributors(RuntimeError):
    """No list material survived classification; consensus must abort."""


DISCORD = 2


@dataclass(frozen=True)
class CorrelatedListSet:
    sender: np.ndarray
    receivers: tuple[np.ndarray, ...]

    @property
    def m(self) -> int:
        return len(self.sender)

    @property
    def n(self) -> int:
        """Number of agents, sender included."""
        return 1 + len(self.receivers)

    def list_for(self, agent: int) -> np.ndarray:
        return self.sender if agent == 0 else self.receivers[agent - 1]

    def discord_positions(self) -> np.ndarray:
        return np.flatnonzero(self.sender == DISCORD)

    def slice(self, start: int, stop: int) -> CorrelatedListSet:
        return CorrelatedListSet(self.sender[start:stop], tuple(r[start:stop] for r in self.receivers))

    def violations(self) -> list[str]:
        """Every broken invariant, checked exhaustively position by position."""
        out = []
        m = self.m
        if m % 6:
            out.append(f"length {m} is not a multiple of 6")
        counts = np.bincount(self.sender.astype(np.int64), minlength=3)
        if len(counts) > 3:
            out.append("sender list contains values outside {0,1,2}")
        elif any(c != m // 3 for c in counts):
            out.append(f"sender trit counts {counts.tolist()} are not m/3 each")
        for k, r in enumerate(self.receivers, start=1):
            if len(r) != m:
                out.append(f"receiver {k} list has length {len(r)}")
                continue
            if r.size and r.max() > 1:
                out.append(f"receiver {k} list is not binary")
            fixed = self.sender != DISCORD
            bad = np.flatnonzero(fixed & (r != self.sender))
            if bad.size:
                out.append(f"receiver {k} disagrees with sender at positions {bad[:5].tolist()}")
        return out


def _check_params(n: int, m: int):
    if m <= 0 or m % 6:
        raise ParameterError("m must be a multiple of 6")
    if n < 3:
        raise ParameterError("need at least 3 agents (a sender and two receivers)")


def generate_correlated_lists(
    n: int, m: int, rng: np.random.Generator, discord: str = "balanced"
) -> CorrelatedListSet:
    """Honest list generation for `n` agents.

    With ``discord="balanced"`` each receiver's coins on the m/3 discord
    positions are a random arrangement of exactly m/6 zeros and m/6 ones, so
    every receiver list holds exactly m/2 of each bit; each position's coin
    is still fair.  ``discord="independent"`` flips an independent coin per
    position instead.
    """
    _check_params(n, m)
    third = m // 3
    sender = rng.permutation(np.repeat(np.arange(3, dtype=np.uint8), third))
    spots = np.flatnonzero(sender == DISCORD)
    receivers = []
    for _ in range(n - 1):
        r = sender.copy()
        if discord == "balanced":
            coins = rng.permutation(np.repeat(np.array([0, 1], dtype=np.uint8), third // 2))
        elif discord == "independent":
            coins = rng.integers(0, 2, size=third, dtype=np.uint8)
        else:
            raise ParameterError(f"unknown discord mode {discord!r}")
        r[spots] = coins
        receivers.append(r)
    return CorrelatedListSet(sender, tuple(receivers))


# ---------------------------------------------------------------------------
# trit transport encoding
# ---------------------------------------------------------------------------

_TRIT_BITS = np.array([[0, 0], [0, 1], [1, 0]], dtype=np.uint8)


def encode_trits_as_bits(trits) -> np.ndarray:
    trits = np.asarray(trits, dtype=np.int64)
    if trits.size and (trits.min() < 0 or trits.max() > 2):
        raise ValueError("trits must lie in {0,1,2}")
    return _TRIT_BITS[trits].reshape(-1)


def decode_bits_as_trits(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 2:
        raise MalformedPayload("odd number of bits in a trit payload")
    pairs = bits.reshape(-1, 2)
    if np.any(pairs[:, 0] & pairs[:, 1]):
        raise MalformedPayload("bit pair 11 does not encode a trit")
    return (2 * pairs[:, 0] + pairs[:, 1]).astype(np.uint8)


# ---------------------------------------------------------------------------
# distributor behaviour
# ---------------------------------------------------------------------------


def _honest(lists, rng, **_):
    return lists


def _count_skew(lists, rng, fraction=1.0, **_):
    """Relabel a fraction of the sender's 0/1 trits as 2 (receivers untouched)."""
    sender = lists.sender.copy()
    fixed = np.flatnonzero(sender != DISCORD)
    hit = fixed[rng.random(fixed.size) < fraction]
    sender[hit] = DISCORD
    return replace(lists, sender=sender)


def _correlation_break(lists, rng, **_):
    """Receivers get independent uniform bits everywhere."""
    return replace(lists, receivers=tuple(rng.integers(0, 2, size=lists.m, dtype=np.uint8) for _ in lists.receivers))


def _target_receiver(lists, rng, target=1, fraction=1.0, **_):
    """Anti-correlate one receiver on a fraction of the positions where the sender holds 1."""
    recv = list(lists.receivers)
    r = recv[target - 1].copy()
    ones = np.flatnonzero(lists.sender == 1)
    hit = ones[rng.random(ones.size) < fraction]
    r[hit] = 0
    recv[target - 1] = r
    return replace(lists, receivers=tuple(recv))


def _random_noise(lists, rng, p=0.1, **_):
    """Flip each receiver bit independently with probability p."""
    return replace(
        lists,
        receivers=tuple(r ^ (rng.random(lists.m) < p).astype(np.uint8) for r in lists.receivers),
    )


DISTRIBUTOR_STRATEGIES: dict[str, Callable[..., CorrelatedListSet]] = {
    "honest": _honest,
    "count_skew": _count_skew,
    "correlation_break": _correlation_break,
    "target_receiver": _target_receiver,
    "random_noise": _random_noise,
}


@dataclass(frozen=True)
class DistributorStrategy:
    name: str = "honest"
    params: Mapping = field(default_factory=dict)

    def apply(self, lists: CorrelatedListSet, rng: np.random.Generator) -> CorrelatedListSet:
        try:
            fn = DISTRIBUTOR_STRATEGIES[self.name]
        except KeyError:
            raise ParameterError(f"unknown distributor strategy {self.name!r}") from None
        return fn(lists, rng, **dict(self.params))


# ---------------------------------------------------------------------------
# distribution over the three-pass channel
# ---------------------------------------------------------------------------


@dataclass
class Delivery:
    received: dict[int, np.ndarray]
    transcripts: dict[int, ThreePassTranscript]


def distribute_lists(
    distributor,
    lists: CorrelatedListSet,
    rng: np.random.Generator,
    targets: Optional[Sequence[int]] = None,
    tap: Optional[Tap] = None,
) -> Delivery:
    """Send each agent its own list with the quantum three-pass protocol."""
    targets = range(lists.n) if targets is None else targets
    received, transcripts = {}, {}
    for agent in targets:
        plain = lists.list_for(agent)
        payload = encode_trits_as_bits(plain) if agent == 0 else plain
        k1 = ThreePassKey.random(len(payload), rng)
        k2 = ThreePassKey.random(len(payload), rng)
        try:
            got, transcript = run_three_pass(payload, k1, k2, rng, tap=tap)
        except SizingError as exc:
            raise DeliveryError(distributor, agent, exc) from exc
        if agent == 0:
            try:
                got = decode_bits_as_trits(got)
            except MalformedPayload as exc:
                raise DeliveryError(distributor, agent, exc) from exc
        received[agent] = got
        transcripts[agent] = transcript
    return Delivery(received, transcripts)


# ---------------------------------------------------------------------------
# verification and classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributorReport:
    receiver_id: int
    distributor_id: object
    consistent: bool


def count_tolerance(s: int) -> float:
    """3-sigma binomial band for one trit count on a sample of size s."""
    return 3 * math.sqrt(s * (1 / 3) * (2 / 3))


def verify_distribution(
    distributor_id,
    sample_positions: Sequence[int],
    sender_view: np.ndarray,
    receiver_views: Mapping[int, np.ndarray],
) -> list[DistributorReport]:
    """Each receiver compares its bits with the sender's revealed trits on the sample.

    A receiver reports the distributor inconsistent if any sampled position
    with sender trit 0/1 disagrees with its own bit, or if the revealed trit
    counts stray outside the 3-sigma band around s/3.
    """
    pos = np.asarray(sample_positions, dtype=np.int64)
    revealed = np.asarray(sender_view)[pos]
    s = len(pos)
    counts = np.bincount(revealed.astype(np.int64), minlength=3)
    counts_ok = len(counts) == 3 and all(abs(c - s / 3) <= count_tolerance(s) for c in counts)
    fixed = revealed != DISCORD
    reports = []
    for k in sorted(receiver_views):
        mine = np.asarray(receiver_views[k])[pos]
        agrees = bool(np.all(mine[fixed] == revealed[fixed]))
        reports.append(DistributorReport(k, distributor_id, counts_ok and agrees))
    return reports


def classify_distributors(reports: Sequence[DistributorReport], theta: float, n: int) -> tuple[list, list]:
    """Split distributors into (honest, corrupted), preserving first-seen order.

    A distributor is corrupted when strictly more than theta*n agents report
    its lists inconsistent.
    """
    if not 0 <= theta <= 0.5:
        raise ParameterError("theta must lie in [0, 1/2]")
    order, complaints = [], {}
    for r in reports:
        if r.distributor_id not in complaints:
            order.append(r.distributor_id)
            complaints[r.distributor_id] = 0
        complaints[r.distributor_id] += not r.consistent
    honest = [d for d in order if complaints[d] <= theta * n]
    corrupted = [d for d in order if complaints[d] > theta * n]
    return honest, corrupted


def compose_lists(honest_sets: Sequence[CorrelatedListSet]) -> CorrelatedListSet:
    """Concatenate each agent's lists in distributor order."""
    if not honest_sets:
        raise NoHonestDistributors("no honest distributor lists to compose")
    n = honest_sets[0].n
    if any(s.n != n for s in honest_sets):
        raise ParameterError("all list sets must cover the same agents")
    return CorrelatedListSet(
        np.concatenate([s.sender for s in honest_sets]),
        tuple(np.concatenate([s.receivers[k] for s in honest_sets]) for k in range(n - 1)),
    )


# ---------------------------------------------------------------------------
# full distribution phase
# ---------------------------------------------------------------------------


def sacrificial_length(m: int) -> int:
    """Default verification segment: m/2 rounded up to a multiple of 6."""
    return max(6, 6 * math.ceil(m / 12))


@dataclass
class DistributionOutcome:
    composed: Optional[CorrelatedListSet]
    honest: list
    corrupted: list
    reports: list[DistributorReport]
    segments: dict  # distributor -> working CorrelatedListSet as delivered
    failures: dict  # distributor -> delivery error text

    @property
    def aborted(self) -> bool:
        return self.composed is None


def run_distribution_phase(
    n: int,
    m: int,
    distributors: Mapping[object, DistributorStrategy],
    theta: float,
    rng_for: Callable[[object], np.random.Generator],
    sample_len: Optional[int] = None,
    transport: bool = True,
    taps: Optional[Mapping[object, Tap]] = None,
) -> DistributionOutcome:
    """Generate, corrupt (per strategy), deliver, verify, classify and compose.

    Each distributor produces m working positions followed by a sacrificial
    verification segment generated under the same rules; the segment is
    checked and then discarded, so the working lists keep exact counts.
    """
    s = sacrificial_length(m) if sample_len is None else sample_len
    taps = taps or {}
    reports, segments, failures = [], {}, {}
    for d, strategy in distributors.items():
        rng = rng_for(d)
        work = generate_correlated_lists(n, m, rng)
        spare = generate_correlated_lists(n, s, rng)
        full = compose_lists([work, spare])
        full = strategy.apply(full, rng)
        if transport:
            try:
                got = distribute_lists(d, full, rng, tap=taps.get(d)).received
            except DeliveryError as exc:
                failures[d] = str(exc)
                reports.extend(DistributorReport(k, d, False) for k in range(1, n))
                continue
        else:
            got = {a: full.list_for(a) for a in range(n)}
        delivered = CorrelatedListSet(got[0], tuple(got[k] for k in range(1, n)))
        sample = np.arange(m, m + s)
        reports.extend(verify_distribution(d, sample, delivered.sender, {k: got[k] for k in range(1, n)}))
        segments[d] = delivered.slice(0, m)
    honest, corrupted = classify_distributors(reports, theta, n)
    honest = [d for d in honest if d in segments]
    composed = compose_lists([segments[d] for d in honest]) if honest else None
    return DistributionOutcome(composed, honest, corrupted, reports, segments, failures)


__all__ = [
    "CorrelatedListSet",
    "DeliveryError",
    "Delivery",
    "DISTRIBUTOR_STRATEGIES",
    "DistributionOutcome",
    "DistributorReport",
    "DistributorStrategy",
    "MalformedPayload",
    "NoHonestDistributors",
    "ParameterError",
    "classify_distributors",
    "compose_lists",
    "count_tolerance",
    "decode_bits_as_trits",
    "distribute_lists",
    "encode_trits_as_bits",
    "generate_correlated_lists",
    "run_distribution_phase",
    "sacrificial_length",
    "verify_distribution",
]
