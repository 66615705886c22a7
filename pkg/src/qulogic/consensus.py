"""One honest-success Byzantine agreement round over correlated lists.

Agent 0 is the sender, agents 1..n-1 the receivers.  A message is either a
`Message` (bit plus index list) or ``None``, which stands for the abort
symbol.  Decisions use the same convention: an int bit or ``None``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from typing import Mapping, Optional, Sequence

import numpy as np

from .lists import DISCORD, CorrelatedListSet, ParameterError, generate_correlated_lists


@dataclass(frozen=True)
class Message:
    bit: int
    ids: tuple[int, ...]

    def to_json(self):
        return {"b": self.bit, "ids": list(self.ids)}


def message_json(msg: Optional[Message]):
    return None if msg is None else msg.to_json()


def check_consistency(msg: Optional[Message], own_list: np.ndarray) -> bool:
    """True iff every index of msg points at a position where own_list holds msg.bit.

    Malformed messages (abort symbol, wrong ID length, repeated or
    out-of-range indices) are inconsistent rather than errors.
    """
    if msg is None:
        return False
    m = len(own_list)
    ids = msg.ids
    if len(ids) != m // 3 or len(set(ids)) != len(ids):
        return False
    if any(not 0 <= x < m for x in ids):
        return False
    return bool(np.all(own_list[list(ids)] == msg.bit)) if ids else True


def positions_of(values: np.ndarray, bit: int) -> tuple[int, ...]:
    return tuple(int(x) for x in np.flatnonzero(values == bit))


# ---------------------------------------------------------------------------
# sender
# ---------------------------------------------------------------------------

SENDER_STRATEGIES = ("honest", "double_spend", "random_equivocate")


def sender_broadcast(
    x_s: int,
    sender_list: np.ndarray,
    receivers: Sequence[int],
    rng: np.random.Generator,
    strategy: str = "honest",
    partition: Optional[Sequence[int]] = None,
) -> tuple[dict[int, Message], int]:
    """Messages to each receiver, plus the value the sender itself outputs.

    ``double_spend`` sends (0, positions of 0) to the receivers in
    `partition` (default: the first half) and (1, positions of 1) to the
    rest.  ``random_equivocate`` picks an independent bit per receiver.
    A dishonest sender outputs its message bit or its complement at random.
    """
    receivers = list(receivers)
    if strategy == "honest":
        msg = Message(int(x_s), positions_of(sender_list, x_s))
        return {k: msg for k in receivers}, int(x_s)
    if strategy == "double_spend":
        zeros = set(receivers[: len(receivers) // 2] if partition is None else partition)
        bits = {k: 0 if k in zeros else 1 for k in receivers}
    elif strategy == "random_equivocate":
        bits = {k: int(b) for k, b in zip(receivers, rng.integers(0, 2, size=len(receivers)))}
    else:
        raise ParameterError(f"unknown sender strategy {strategy!r}")
    ids = {b: positions_of(sender_list, b) for b in (0, 1)}
    messages = {k: Message(b, ids[b]) for k, b in bits.items()}
    own = int(x_s) if rng.random() < 0.5 else 1 - int(x_s)
    return messages, own


# ---------------------------------------------------------------------------
# receivers
# ---------------------------------------------------------------------------

FORGE_STRATEGIES = ("random_ids", "per_peer", "bot", "naive_flip", "informed")


@dataclass(frozen=True)
class ReceiverStrategy:
    """How a receiver relays.

    kind: ``honest``, ``tamper`` (relays 1-b with forged indices, or the
    abort symbol, per `forge`) or ``silent_abort`` (relays the abort
    symbol to everyone).  `knowledge` maps positions to sender trits the
    adversary has bought from bribed distributors; only ``informed``
    forgery uses it.
    """

    kind: str = "honest"
    forge: str = "random_ids"
    knowledge: Optional[Mapping[int, int]] = None

    @property
    def honest(self) -> bool:
        return self.kind == "honest"


HONEST = ReceiverStrategy()


def forge_ids(
    own_list: np.ndarray,
    bit: int,
    rng: np.random.Generator,
    knowledge: Optional[Mapping[int, int]] = None,
) -> tuple[int, ...]:
    """m/3 distinct positions where the forger's own list holds `bit`.

    Without knowledge the choice is uniform.  With leaked sender trits the
    forger first takes positions known to hold `bit` on the sender list,
    skips positions known to be discord, and fills up uniformly.
    """
    m = len(own_list)
    need = m // 3
    cands = np.flatnonzero(own_list == bit)
    if knowledge:
        sure = np.array([x for x in cands if knowledge.get(int(x)) == bit], dtype=np.int64)
        unknown = np.array([x for x in cands if int(x) not in knowledge], dtype=np.int64)
        sure = rng.permutation(sure)[:need]
        fill = rng.permutation(unknown)[: need - len(sure)]
        chosen = np.concatenate([sure, fill])
        if len(chosen) < need:
            rest = np.setdiff1d(cands, chosen)
            chosen = np.concatenate([chosen, rng.permutation(rest)[: need - len(chosen)]])
    else:
        chosen = rng.choice(cands, size=min(need, len(cands)), replace=False)
    return tuple(sorted(int(x) for x in chosen))


def receiver_relay(
    k: int,
    incoming: Optional[Message],
    own_list: np.ndarray,
    peers: Sequence[int],
    rng: np.random.Generator,
    strategy: ReceiverStrategy = HONEST,
) -> dict[int, Optional[Message]]:
    if strategy.kind == "honest":
        out = incoming if check_consistency(incoming, own_list) else None
        return {j: out for j in peers}
    if strategy.kind == "silent_abort":
        return {j: None for j in peers}
    if strategy.kind != "tamper":
        raise ParameterError(f"unknown receiver strategy {strategy.kind!r}")
    flip = 1 - (incoming.bit if incoming is not None else int(rng.integers(0, 2)))
    if strategy.forge == "bot":
        return {j: None for j in peers}
    if strategy.forge == "naive_flip":
        ids = incoming.ids if incoming is not None else ()
        return {j: Message(flip, ids) for j in peers}
    if strategy.forge == "per_peer":
        return {j: Message(flip, forge_ids(own_list, flip, rng)) for j in peers}
    if strategy.forge in ("random_ids", "informed"):
        know = strategy.knowledge if strategy.forge == "informed" else None
        msg = Message(flip, forge_ids(own_list, flip, rng, know))
        return {j: msg for j in peers}
    raise ParameterError(f"unknown forge strategy {strategy.forge!r}")


def decide(
    direct: Optional[Message],
    relayed: Mapping[int, Optional[Message]],
    own_list: np.ndarray,
) -> tuple[Optional[int], str]:
    """Decision of an honest receiver and the criterion that produced it.

    The directly received sender message counts as agent 0's contribution.
    H is the set of all consistent messages, so every message outside H is
    inconsistent by construction; criterion (c) (outsiders all abort
    symbols) is the special case of (b) where no outsider sent a bit.
    """
    incoming = {0: direct, **dict(relayed)}
    consistent = {src: msg for src, msg in incoming.items() if check_consistency(msg, own_list)}
    bits = {msg.bit for msg in consistent.values()}
    if len(bits) > 1:
        return None, "a"
    if len(consistent) >= 2:
        outsiders = [incoming[src] for src in incoming if src not in consistent]
        if outsiders and all(m is None for m in outsiders):
            return bits.pop(), "c"
        return bits.pop(), "b"
    return None, "d"


# ---------------------------------------------------------------------------
# full round
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptRecord:
    step: str
    src: int
    dst: Optional[int]
    message: object

    def to_json(self):
        msg = self.message
        if isinstance(msg, Message) or msg is None:
            msg = message_json(msg)
        return {"step": self.step, "from": self.src, "to": self.dst, "message": msg}


@dataclass
class RoundOutcome:
    n: int
    m: int
    decisions: dict[int, Optional[int]]  # receivers only
    sender_output: Optional[int]
    consensus: Optional[int]
    rewarded: frozenset
    criteria: dict[int, str] = field(default_factory=dict)
    honest: frozenset = frozenset()
    transcript: list[TranscriptRecord] = field(default_factory=list)
    aborted_reason: Optional[str] = None

    def honest_decisions(self) -> dict[int, Optional[int]]:
        return {k: v for k, v in self.decisions.items() if k in self.honest}

    def to_json(self, with_transcript: bool = True) -> dict:
        out = {
            "n": self.n,
            "m": self.m,
            "sender_output": self.sender_output,
            "decisions": {str(k): v for k, v in sorted(self.decisions.items())},
            "criteria": {str(k): v for k, v in sorted(self.criteria.items())},
            "consensus": self.consensus,
            "rewarded": sorted(self.rewarded),
            "aborted_reason": self.aborted_reason,
        }
        if with_transcript:
            out["transcript"] = [r.to_json() for r in self.transcript]
        return out

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def tally(decisions: Mapping[int, Optional[int]], n: int) -> Optional[int]:
    """The bit at least n/2 receivers decided on, if any."""
    for v in (0, 1):
        if sum(1 for d in decisions.values() if d == v) >= n / 2:
            return v
    return None


def run_round(
    lists: Optional[CorrelatedListSet],
    x_s: int,
    rng: np.random.Generator,
    sender_strategy: str = "honest",
    receiver_strategies: Optional[Mapping[int, ReceiverStrategy]] = None,
    partition: Optional[Sequence[int]] = None,
    n: Optional[int] = None,
    m: Optional[int] = None,
) -> RoundOutcome:
    """Broadcast, relay, decide and tally one synchronous round.

    Dishonest receivers report the bit they relayed (the abort symbol when
    silent) as their output; the sender's own output is recorded but does
    not enter the tally.  Agents whose output equals the consensus value,
    sender included, are marked for reward.
    """
    if lists is None:
        nn = n or 0
        return RoundOutcome(nn, m or 0, {k: None for k in range(1, nn)}, None, None, frozenset(),
                            aborted_reason="missing lists")
    if n is not None and n != lists.n:
        raise ParameterError(f"lists cover {lists.n} agents, round expects {n}")
    if m is not None and m != lists.m:
        raise ParameterError(f"lists have length {lists.m}, round expects {m}")
    n, m = lists.n, lists.m
    strategies = dict(receiver_strategies or {})
    receivers = list(range(1, n))
    honest = frozenset(k for k in receivers if strategies.get(k, HONEST).honest)
    transcript: list[TranscriptRecord] = []

    direct, sender_out = sender_broadcast(x_s, lists.sender, receivers, rng, sender_strategy, partition)
    for k in receivers:
        transcript.append(TranscriptRecord("broadcast", 0, k, direct[k]))

    inbox: dict[int, dict[int, Optional[Message]]] = {k: {} for k in receivers}
    for k in receivers:
        peers = [j for j in receivers if j != k]
        sent = receiver_relay(k, direct[k], lists.list_for(k), peers, rng, strategies.get(k, HONEST))
        for j, msg in sent.items():
            inbox[j][k] = msg
            transcript.append(TranscriptRecord("relay", k, j, msg))

    decisions, criteria = {}, {}
    for k in receivers:
        strat = strategies.get(k, HONEST)
        if strat.honest:
            decisions[k], criteria[k] = decide(direct[k], inbox[k], lists.list_for(k))
        elif strat.kind == "tamper" and strat.forge != "bot":
            decisions[k] = 1 - direct[k].bit
        else:
            decisions[k] = None
        transcript.append(TranscriptRecord("decide", k, None, decisions[k]))

    consensus = tally(decisions, n)
    rewarded = frozenset()
    if consensus is not None:
        rewarded = frozenset([k for k, d in decisions.items() if d == consensus]
                             + ([0] if sender_out == consensus else []))
    return RoundOutcome(n, m, decisions, sender_out, consensus, rewarded, criteria, honest, transcript)


# ---------------------------------------------------------------------------
# forgery experiment
# ---------------------------------------------------------------------------


def discord_avoidance_bound(m: int) -> float:
    """(2/3)^(m/3): the heuristic chance a forged index list avoids every discord position."""
    return (2 / 3) ** (m // 3)


@dataclass(frozen=True)
class ForgeryEstimate:
    m: int
    attempts: int
    honest_receivers: int
    hits: int  # forgeries every honest receiver accepted
    conditional: float  # mean acceptance probability given the forger's choice
    single_receiver: float  # mean probability one given honest receiver accepts
    theory: float

    @property
    def empirical(self) -> float:
        return self.hits / self.attempts if self.attempts else 0.0


def discord_pass_probability(m: int, k: int, discord: str = "balanced") -> float:
    """Chance one honest receiver holds a given bit at k given discord positions.

    Balanced lists put exactly half of each receiver's m/3 discord coins on
    each bit, so the k positions are drawn without replacement.
    """
    if discord == "independent":
        return 2.0 ** (-k)
    d = m // 3
    if k > d // 2:
        return 0.0
    return comb(d - k, d // 2 - k) / comb(d, d // 2)


def estimate_forgery(
    m: int,
    attempts: int,
    rng: np.random.Generator,
    honest_receivers: int = 2,
    discord: str = "balanced",
) -> ForgeryEstimate:
    """Monte Carlo of a tampering receiver forging the opposite bit.

    Each attempt draws a fresh list set (sender, forger, honest receivers),
    has the honest sender broadcast a random bit b, lets the forger build
    (1-b, forged IDs) with `forge_ids`, and runs `check_consistency` at every
    honest receiver.  Alongside the raw hit count it accumulates the exact
    acceptance probability given the forger's choice (receivers' lists are
    independent given the sender's), which has far lower variance when hits
    are rare.
    """
    n = 2 + honest_receivers
    hits = 0
    cond = single = 0.0
    for _ in range(attempts):
        lists = generate_correlated_lists(n, m, rng, discord)
        b = int(rng.integers(0, 2))
        forger = lists.list_for(1)
        msg = Message(1 - b, forge_ids(forger, 1 - b, rng))
        if all(check_consistency(msg, lists.list_for(k)) for k in range(2, n)):
            hits += 1
        k_discord = int(np.count_nonzero(lists.sender[list(msg.ids)] == DISCORD))
        p = discord_pass_probability(m, k_discord, discord)
        cond += p**honest_receivers
        single += p
    return ForgeryEstimate(m, attempts, honest_receivers, hits, cond / attempts, single / attempts,
                           discord_avoidance_bound(m))


def exact_forgery_acceptance(m: int, honest_receivers: int = 2, discord: str = "balanced") -> float:
    """Closed form of the quantity `estimate_forgery` samples.

    The forger picks m/3 of its positions holding 1-b: the m/3 positions
    where the sender holds 1-b plus the J discord positions where its own
    coin came up 1-b (J = m/6 for balanced lists, binomial otherwise).  The
    number K of discord positions among the picks is hypergeometric.
    """
    t, d = m // 3, m // 3
    if discord == "balanced":
        j_dist = {d // 2: 1.0}
    else:
        j_dist = {j: comb(d, j) / 2.0**d for j in range(d + 1)}
    total = 0.0
    for j, pj in j_dist.items():
        pool = t + j
        for k in range(0, min(j, t) + 1):
            hyper = comb(j, k) * comb(t, t - k) / comb(pool, t)
            total += pj * hyper * discord_pass_probability(m, k, discord) ** honest_receivers
    return total
