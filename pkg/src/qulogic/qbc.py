"""Cheat-sensitive quantum bit commitment and its punishment bonds.

Bob prepares m balanced-uniform sequences, Alice opens m-1 of them to check
his preparation and commits two bits on the last one by a phase gate and a
secret pattern of pair swaps (CS).  Bob measures in random bases; once CS is
revealed he can tell which positions he measured in the right basis and
read the committed value off his outcomes.

Both parties back the session with a bond on the ledger: an output they
send to themselves whose protection only holds if they were not caught.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .ledger import (
    Chain,
    CommitResult,
    Field,
    InsufficientFunds,
    Measure,
    Or,
    Predicate,
    TxBody,
    all_of,
)
from .qubit import GATES, Basis, Label, PhaseGate, QubitState, apply_gate, basis_state, measure, swap_pairs

BIT_VALUES = ("00", "01", "10", "11")
GATE_FOR_BITS = {"00": 0, "01": 1, "10": 2, "11": 3}  # quarter turns of X(m)

# which positions each opening hypothesis looks at, and the gate it assumes
HYPOTHESES = {
    "00": (True, 0),
    "10": (True, 2),
    "01": (False, 1),
    "11": (False, 3),
}


def _bits(value) -> str:
    if isinstance(value, str):
        text = value
    else:
        text = "".join(str(int(b)) for b in value)
    if text not in GATE_FOR_BITS:
        raise ValueError(f"a commitment is two bits, got {value!r}")
    return text


def _digest(data) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verified:
    """Alice found every opened sequence balanced-uniform."""


@dataclass(frozen=True)
class Revealed:
    bits: str


@dataclass(frozen=True)
class CheatDetected:
    party: str  # "alice" or "bob"
    phase: str  # "preparation" or "opening"
    detail: str = ""


PrepVerdict = Union[Verified, CheatDetected]
OpeningVerdict = Union[Revealed, CheatDetected]


# ---------------------------------------------------------------------------
# preparation
# ---------------------------------------------------------------------------


def label_violations(labels: Sequence[Label]) -> list[str]:
    """Which balanced-uniform rules a label sequence breaks (empty when it is fine)."""
    n = len(labels)
    out = []
    if n == 0 or n % 4:
        return [f"length {n} is not a positive multiple of 4"]
    counts = np.bincount([int(lab) for lab in labels], minlength=4)
    for lab in Label:
        if counts[lab] != n // 4:
            out.append(f"{counts[lab]} copies of {lab.name}, expected {n // 4}")
    for j in range(n // 2):
        if labels[2 * j].basis == labels[2 * j + 1].basis:
            out.append(f"pair {j} is not cross-basis")
    return out


def random_balanced_labels(n: int, rng: np.random.Generator) -> list[Label]:
    half = n // 2
    comp = rng.permutation([Label.ZERO] * (n // 4) + [Label.ONE] * (n // 4))
    circ = rng.permutation([Label.PLUS_I] * (n // 4) + [Label.MINUS_I] * (n // 4))
    comp_first = rng.integers(0, 2, size=half)
    out = []
    for j in range(half):
        a, b = Label(comp[j]), Label(circ[j])
        out += [a, b] if comp_first[j] else [b, a]
    return out


@dataclass
class BalancedUniformSequence:
    """Qubits Bob sends, plus his record (`spec`) of the label of each position.

    For an honest Bob the record is the truth; a cheating Bob may record
    labels the qubits do not carry.
    """

    states: list[QubitState]
    spec: tuple[Label, ...]
    skewed: bool = False

    @property
    def n(self) -> int:
        return len(self.states)

    def violations(self) -> list[str]:
        return label_violations(self.spec)

    @classmethod
    def from_labels(cls, labels: Sequence[Label], declared: Optional[Sequence[Label]] = None, skewed=False):
        declared = labels if declared is None else declared
        return cls([basis_state(lab) for lab in labels], tuple(Label(x) for x in declared), skewed)


# -- Bob's skew strategies: each returns (true labels, declared labels) --


def _zero_heavy(n, rng, **_):
    # n/2 copies of |0>, still cross-basis pairs: count rule broken, declared truthfully
    circ = rng.permutation([Label.PLUS_I] * (n // 4) + [Label.MINUS_I] * (n // 4))
    labels = []
    for j in range(n // 2):
        pair = [Label.ZERO, Label(circ[j])]
        labels += pair if rng.integers(0, 2) else pair[::-1]
    return labels, labels


def _same_basis_pairs(n, rng, **_):
    # right counts, but each pair sits in one basis
    comp = list(rng.permutation([Label.ZERO] * (n // 4) + [Label.ONE] * (n // 4)))
    circ = list(rng.permutation([Label.PLUS_I] * (n // 4) + [Label.MINUS_I] * (n // 4)))
    pairs = [comp[i : i + 2] for i in range(0, len(comp), 2)] + [circ[i : i + 2] for i in range(0, len(circ), 2)]
    order = rng.permutation(len(pairs))
    labels = [Label(x) for k in order for x in pairs[k]]
    return labels, labels


def _cross_basis_lie(n, rng, lies=1, **_):
    # a valid record, but `lies` positions actually hold a state of the other basis
    declared = random_balanced_labels(n, rng)
    labels = list(declared)
    for p in rng.choice(n, size=min(lies, n), replace=False):
        labels[p] = Label((int(declared[p]) + (1 if rng.integers(0, 2) else 3)) % 4)
    return labels, declared


SKEW_STRATEGIES: dict[str, Callable] = {
    "zero_heavy": _zero_heavy,
    "same_basis_pairs": _same_basis_pairs,
    "cross_basis_lie": _cross_basis_lie,
}


def prepare_sequences(
    n: int,
    m: int,
    rng: np.random.Generator,
    skew: Optional[str] = None,
    skew_count: int = 1,
    **skew_params,
) -> list[BalancedUniformSequence]:
    if n <= 0 or n % 4:
        raise ValueError(f"sequence length n must be a positive multiple of 4, got {n}")
    if m < 2:
        raise ValueError(f"need at least 2 sequences, got {m}")
    bad: set[int] = set()
    if skew is not None:
        if skew not in SKEW_STRATEGIES:
            raise ValueError(f"unknown skew strategy {skew!r}")
        if not 1 <= skew_count <= m:
            raise ValueError(f"skew_count must be in [1, {m}]")
        bad = set(int(i) for i in rng.choice(m, size=skew_count, replace=False))
    out = []
    for k in range(m):
        if k in bad:
            labels, declared = SKEW_STRATEGIES[skew](n, rng, **skew_params)
            out.append(BalancedUniformSequence.from_labels(labels, declared, skewed=True))
        else:
            out.append(BalancedUniformSequence.from_labels(random_balanced_labels(n, rng)))
    return out


def check_opened(opened: Sequence[BalancedUniformSequence], declared: Sequence[Sequence[Label]],
                 rng: np.random.Generator) -> PrepVerdict:
    """Alice's test of opened sequences against Bob's revealed labels.

    Each qubit is measured in the basis of its revealed label and consumed
    (replaced by its post-measurement state).
    """
    for k, (seq, labels) in enumerate(zip(opened, declared)):
        labels = tuple(Label(x) for x in labels)
        problems = label_violations(labels)
        if problems:
            return CheatDetected("bob", "preparation", f"opened sequence {k}: {problems[0]}")
        for p, lab in enumerate(labels):
            outcome, seq.states[p] = measure(seq.states[p], lab.basis, rng)
            if outcome != lab.outcome:
                return CheatDetected("bob", "preparation", f"opened sequence {k} position {p} is not {lab.name}")
    return Verified()


def alice_verify(
    sequences: Sequence[BalancedUniformSequence],
    chosen: Sequence[int],
    rng: np.random.Generator,
    reveals: Optional[Sequence[Sequence[Label]]] = None,
) -> PrepVerdict:
    """Open the `chosen` m-1 sequences; `reveals` defaults to their own records."""
    if len(chosen) != len(sequences) - 1 or len(set(chosen)) != len(chosen):
        raise ValueError("Alice opens exactly m-1 distinct sequences")
    opened = [sequences[k] for k in chosen]
    declared = [seq.spec for seq in opened] if reveals is None else reveals
    return check_opened(opened, declared, rng)


# ---------------------------------------------------------------------------
# commitment
# ---------------------------------------------------------------------------


@dataclass
class Commitment:
    committed_bits: str
    swap_string: np.ndarray  # CS, n/2 bits
    transmitted: list[QubitState]


def commit_with_gates(gates: Sequence[PhaseGate], qs: BalancedUniformSequence, cs) -> list[QubitState]:
    cs = np.asarray(cs, dtype=np.uint8)
    if len(cs) * 2 != qs.n:
        raise ValueError(f"CS must have n/2 = {qs.n // 2} bits")
    rotated = [apply_gate(g, s) for g, s in zip(gates, qs.states)]
    return swap_pairs(rotated, cs)


def commit(bits, qs: BalancedUniformSequence, cs) -> Commitment:
    bits = _bits(bits)
    gate = GATES[GATE_FOR_BITS[bits]]
    cs = np.asarray(cs, dtype=np.uint8)
    return Commitment(bits, cs, commit_with_gates([gate] * qs.n, qs, cs))


# ---------------------------------------------------------------------------
# Bob's measurement and the opening
# ---------------------------------------------------------------------------


@dataclass
class Measurements:
    bases: list[Basis]
    outcomes: np.ndarray


def bob_measure(transmitted: Sequence[QubitState], rng: np.random.Generator) -> Measurements:
    picks = rng.integers(0, 2, size=len(transmitted))
    bases = [Basis.CIRCULAR if b else Basis.COMPUTATIONAL for b in picks]
    outcomes = np.array([measure(s, b, rng)[0] for s, b in zip(transmitted, bases)], dtype=np.uint8)
    return Measurements(bases, outcomes)


def unswap_labels(cs, spec: Sequence[Label]) -> list[Label]:
    """Original label of each transmitted position once CS is known."""
    return swap_pairs(list(spec), np.asarray(cs, dtype=np.uint8))


@dataclass
class OpeningReport:
    relevant: dict  # hypothesis -> number of positions it tests
    satisfied: dict  # hypothesis -> all tested positions agree and count >= floor
    min_count: int
    verdict: OpeningVerdict


def analyze_opening(cs, spec: Sequence[Label], meas: Measurements, min_count: Optional[int] = None) -> OpeningReport:
    """Test the four opening hypotheses against Bob's record.

    Hypothesis v with gate q predicts, at each position it tests, the
    deterministic outcome of the rotated original X(q)|c> in the basis Bob
    used.  00 and 10 test the positions measured in the original's own
    basis, 01 and 11 the others.
    """
    n = len(spec)
    cs = np.asarray(cs, dtype=np.uint8)
    if len(cs) * 2 != n:
        raise ValueError(f"CS must have n/2 = {n // 2} bits")
    floor = n // 8 if min_count is None else min_count
    originals = unswap_labels(cs, spec)
    correct = np.array([lab.basis == b for lab, b in zip(originals, meas.bases)])
    relevant, satisfied = {}, {}
    for bits, (use_correct, q) in HYPOTHESES.items():
        idx = np.flatnonzero(correct == use_correct)
        predicted = np.array([Label((int(originals[p]) + q) % 4).outcome for p in idx], dtype=np.uint8)
        relevant[bits] = len(idx)
        satisfied[bits] = len(idx) >= floor and bool(np.all(meas.outcomes[idx] == predicted))
    passing = [b for b, ok in satisfied.items() if ok]
    if len(passing) == 1:
        verdict: OpeningVerdict = Revealed(passing[0])
    elif passing:
        verdict = CheatDetected("alice", "opening", f"hypotheses {passing} all fit")
    else:
        verdict = CheatDetected("alice", "opening", "no hypothesis fits")
    return OpeningReport(relevant, satisfied, floor, verdict)


def open_and_reconstruct(cs, spec: Sequence[Label], meas: Measurements, min_count: Optional[int] = None) -> OpeningVerdict:
    return analyze_opening(cs, spec, meas, min_count).verdict


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

ALICE_CHEATS = ("wrong_cs", "mismatched_gate", "random_cs")


@dataclass
class SessionRecord:
    phase: str
    party: str
    action: str
    digest: str
    data: dict = field(default_factory=dict)

    def to_json(self):
        return {"phase": self.phase, "party": self.party, "action": self.action, "digest": self.digest, "data": self.data}


@dataclass
class SessionResult:
    committed: str
    prep: PrepVerdict
    opening: Optional[OpeningVerdict]
    transcript: list[SessionRecord]
    report: Optional[OpeningReport] = None
    cs_binding_ok: Optional[bool] = None

    @property
    def bob_caught(self) -> bool:
        return isinstance(self.prep, CheatDetected)

    @property
    def alice_caught(self) -> bool:
        return isinstance(self.opening, CheatDetected)

    def evidence(self) -> dict:
        """Classical certificate for bond redemption, taken from the transcript."""
        return {
            "prep_verdict": "cheat" if self.bob_caught else "pass",
            "opening_case": self.opening.bits if isinstance(self.opening, Revealed) else "none",
        }


PrepCheck = Callable[[list, list, np.random.Generator], PrepVerdict]


def run_session(
    bits,
    n: int,
    m: int,
    rng: np.random.Generator,
    bob_skew: Optional[str] = None,
    skew_count: int = 1,
    skew_params: Optional[dict] = None,
    alice_cheat: Optional[str] = None,
    prep_check: Optional[PrepCheck] = None,
    min_count: Optional[int] = None,
) -> SessionResult:
    """One full session; stops after preparation when Bob is caught.

    `prep_check(opened_sequences, declared_labels, rng)` replaces Alice's
    own measurement of the opened sequences (used when the check is
    delegated to the ledger's verifier).
    """
    bits = _bits(bits)
    if alice_cheat is not None and alice_cheat not in ALICE_CHEATS:
        raise ValueError(f"unknown Alice strategy {alice_cheat!r}")
    log: list[SessionRecord] = []

    def record(phase, party, action, data):
        log.append(SessionRecord(phase, party, action, _digest(data), data))

    seqs = prepare_sequences(n, m, rng, bob_skew, skew_count, **(skew_params or {}))
    record("preparation", "bob", "send_sequences", {"m": m, "n": n})
    keep = int(rng.integers(0, m))
    chosen = [k for k in range(m) if k != keep]
    declared = [[int(x) for x in seqs[k].spec] for k in chosen]
    record("preparation", "alice", "open", {"chosen": chosen})
    record("preparation", "bob", "reveal", {"labels": declared})
    if prep_check is None:
        prep = check_opened([seqs[k] for k in chosen], declared, rng)
    else:
        prep = prep_check([seqs[k] for k in chosen], declared, rng)
    record("preparation", "alice", "verdict", {"result": "cheat" if isinstance(prep, CheatDetected) else "pass"})
    if isinstance(prep, CheatDetected):
        return SessionResult(bits, prep, None, log)

    qs = seqs[keep]
    cs = rng.integers(0, 2, size=n // 2).astype(np.uint8)
    if alice_cheat == "mismatched_gate":
        q = GATE_FOR_BITS[bits]
        other = rng.permutation(n)[: n // 2]
        gates = [GATES[q]] * n
        for p in other:
            gates[p] = GATES[(q + 1) % 4]
        transmitted = commit_with_gates(gates, qs, cs)
    else:
        transmitted = commit(bits, qs, cs).transmitted
    salt = rng.bytes(16).hex()
    cs_digest = hashlib.sha256((salt + "".join(map(str, cs))).encode()).hexdigest()
    record("commitment", "alice", "send_qs", {"cs_commitment": cs_digest})

    meas = bob_measure(transmitted, rng)
    record("commitment", "bob", "measure", {"bases": [b.value for b in meas.bases],
                                             "outcomes": meas.outcomes.tolist()})

    revealed = cs.copy()
    if alice_cheat == "wrong_cs":
        revealed[rng.integers(0, len(cs))] ^= 1
    elif alice_cheat == "random_cs":
        revealed = rng.integers(0, 2, size=n // 2).astype(np.uint8)
    record("opening", "alice", "reveal_cs", {"cs": revealed.tolist(), "salt": salt})
    binding_ok = hashlib.sha256((salt + "".join(map(str, revealed))).encode()).hexdigest() == cs_digest

    report = analyze_opening(revealed, qs.spec, meas, min_count)
    verdict = report.verdict
    record("opening", "bob", "verdict", {"result": verdict.bits if isinstance(verdict, Revealed) else "cheat",
                                         "relevant": report.relevant})
    return SessionResult(bits, prep, verdict, log, report, binding_ok)


# ---------------------------------------------------------------------------
# punishment bonds
# ---------------------------------------------------------------------------


def bob_bond_protection() -> Predicate:
    return Field("prep_verdict", "==", "pass")


def alice_bond_protection() -> Predicate:
    return Or(tuple(Field("opening_case", "==", v) for v in BIT_VALUES))


def deposit_order(labels: Sequence[Label]) -> list[int]:
    """Positions sorted by declared label, so each label's qubits form one range."""
    return sorted(range(len(labels)), key=lambda p: int(labels[p]))


def deposit_protection(labels: Sequence[Label]) -> Predicate:
    """φ over deposited qubits laid out in `deposit_order`: each range must show its declared outcome."""
    ordered = sorted(int(x) for x in labels)
    atoms, start = [], 0
    for lab in Label:
        count = ordered.count(int(lab))
        if count:
            atoms.append(Measure(start, start + count, lab.basis, lab.outcome, "all"))
        start += count
    return all_of(*atoms)


def select_outputs(chain: Chain, owner: str, n_coins: int) -> tuple[str, ...]:
    picked, total = [], 0
    for entry in sorted(chain.ledger.unspent(owner), key=lambda e: e.value):
        if total >= n_coins:
            break
        picked.append(entry.txid)
        total += entry.value
    if total < n_coins:
        raise InsufficientFunds(f"{owner} holds {total} coins, bond needs {n_coins}")
    return tuple(picked)


def make_bond(chain: Chain, owner: str, n_coins: int, alpha: Predicate, phi: Optional[Predicate],
              rng: np.random.Generator) -> str:
    """Commit a protected self-payment of at least `n_coins`; returns its id."""
    body = TxBody(select_outputs(chain, owner, n_coins), owner, alpha, phi)
    result = chain.transact(owner, body, rng)
    if not result.appended:
        raise RuntimeError(f"bond for {owner} was not committed ({result.status})")
    return result.txid


def build_punishment_bonds(alice: str, bob: str, n_coins: int, chain: Chain, rng: np.random.Generator) -> tuple[str, str]:
    """Bob's and Alice's bonds with the transcript-evidence protections. Returns (bob_bond, alice_bond)."""
    bob_bond = make_bond(chain, bob, n_coins, bob_bond_protection(), None, rng)
    alice_bond = make_bond(chain, alice, n_coins, alice_bond_protection(), None, rng)
    return bob_bond, alice_bond


def redeem_bond(chain: Chain, owner: str, bond: str, evidence: dict, rng: np.random.Generator,
                psi: Optional[list] = None) -> CommitResult:
    body = TxBody((bond,), owner, betas=(evidence,))
    return chain.transact(owner, body, rng, psis=None if psi is None else [psi])


def ledger_prep_check(chain: Chain, bob: str, n_coins: int, outcome: dict) -> PrepCheck:
    """Delegate Alice's preparation check to the ledger.

    Bob's bond is built after he reveals his labels: its classical part
    checks the revealed record is balanced-uniform and its quantum part
    measures the opened qubits, deposited in label order, against that
    record.  The verdict is whether Bob can redeem the bond.  `outcome`
    receives the bond id and the redemption result.
    """

    def check(opened, declared, rng):
        labels = [Label(x) for rec in declared for x in rec]
        qubits = [s for seq in opened for s in seq.states]
        balanced = all(not label_violations([Label(x) for x in rec]) for rec in declared)
        bond = make_bond(chain, bob, n_coins, Field("declared_balanced", "==", 1), deposit_protection(labels), rng)
        deposit = [qubits[p] for p in deposit_order(labels)]
        result = redeem_bond(chain, bob, bond, {"declared_balanced": int(balanced)}, rng, psi=deposit)
        outcome.update(bond=bond, redemption=result)
        if result.appended:
            return Verified()
        return CheatDetected("bob", "preparation", "bond protection failed")

    return check


@dataclass
class BondedSession:
    session: SessionResult
    bob_bond: str
    alice_bond: Optional[str]
    bob_redemption: CommitResult
    alice_redemption: Optional[CommitResult]

    @property
    def bob_frozen(self) -> bool:
        return not self.bob_redemption.appended

    @property
    def alice_frozen(self) -> bool:
        return self.alice_redemption is not None and not self.alice_redemption.appended


def run_bonded_session(
    chain: Chain,
    alice: str,
    bob: str,
    n_coins: int,
    bits,
    n: int,
    m: int,
    rng: np.random.Generator,
    evidence: str = "transcript",
    **session_kw,
) -> BondedSession:
    """A session with both bonds, each redeemed afterwards with the transcript's evidence.

    Alice posts her bond when she starts the commitment phase, so a session
    that ends in preparation never puts her coins at stake.
    """
    if evidence not in ("transcript", "quantum"):
        raise ValueError(f"unknown evidence mode {evidence!r}")
    alice_bond_holder: dict = {}

    if evidence == "quantum":
        outcome: dict = {}
        check = ledger_prep_check(chain, bob, n_coins, outcome)

        def prep_then_bond(opened, declared, r):
            verdict = check(opened, declared, r)
            if isinstance(verdict, Verified):
                alice_bond_holder["id"] = make_bond(chain, alice, n_coins, alice_bond_protection(), None, r)
            return verdict

        session = run_session(bits, n, m, rng, prep_check=prep_then_bond, **session_kw)
        bob_bond, bob_redemption = outcome["bond"], outcome["redemption"]
    else:
        bob_bond = make_bond(chain, bob, n_coins, bob_bond_protection(), None, rng)

        def verify_then_bond(opened, declared, r):
            verdict = check_opened(opened, declared, r)
            if isinstance(verdict, Verified):
                alice_bond_holder["id"] = make_bond(chain, alice, n_coins, alice_bond_protection(), None, r)
            return verdict

        session = run_session(bits, n, m, rng, prep_check=verify_then_bond, **session_kw)
        bob_redemption = redeem_bond(chain, bob, bob_bond, session.evidence(), rng)

    alice_bond = alice_bond_holder.get("id")
    alice_redemption = None
    if alice_bond is not None:
        alice_redemption = redeem_bond(chain, alice, alice_bond, session.evidence(), rng)
    return BondedSession(session, bob_bond, alice_bond, bob_redemption, alice_redemption)
