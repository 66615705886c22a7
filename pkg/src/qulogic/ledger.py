"""Transactions, protection predicates, miner checks and the replicated ledger.

A transaction redeems earlier outputs in full (no change outputs) and
hands their whole value to one receiver.  Its authentication digest is a
Toeplitz MAC under the key pool the sender shares with each miner, so every
miner receives its own copy of the digest; the ledger stores transactions
by the SHA-256 of their canonical body instead.
"""
from __future__ import annotations

import hashlib
import json
import operator
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .consensus import ReceiverStrategy, RoundOutcome, run_round
from .lists import CorrelatedListSet, generate_correlated_lists
from .qcrypto import KeyPool, MacConfig, frame_fields, mac, message_bits, verify_mac
from .qubit import Basis, QubitState, measure


class MalformedProtection(ValueError):
    pass


class InsufficientFunds(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# protection predicates
# ---------------------------------------------------------------------------

MAX_DEPTH = 16
MAX_ATOMS = 1024

_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


class Predicate:
    def to_json(self):
        raise NotImplementedError

    def atoms(self) -> Iterable[Predicate]:
        yield self

    def depth(self) -> int:
        return 1


@dataclass(frozen=True)
class Const(Predicate):
    value: bool

    def to_json(self):
        return {"const": bool(self.value)}


TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True)
class Field(Predicate):
    """Classical atom: evidence[name] <op> value."""

    name: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise MalformedProtection(f"unknown comparison {self.op!r}")

    def to_json(self):
        return {"field": self.name, "op": self.op, "value": self.value}


@dataclass(frozen=True)
class Measure(Predicate):
    """Quantum atom: measure certificate qubits [start, stop) in `basis`.

    policy ``"all"`` needs every outcome to equal `expected`, ``"any"`` at
    least one, and an integer k at least k of them.
    """

    start: int
    stop: int
    basis: Basis
    expected: int
    policy: Union[str, int] = "all"

    def __post_init__(self):
        if self.start < 0 or self.stop < self.start:
            raise MalformedProtection("bad qubit range")
        if not (self.policy in ("all", "any") or isinstance(self.policy, int)):
            raise MalformedProtection(f"unknown repetition policy {self.policy!r}")

    def to_json(self):
        return {"measure": [self.start, self.stop], "basis": self.basis.value,
                "expected": self.expected, "policy": self.policy}


@dataclass(frozen=True)
class And(Predicate):
    terms: tuple

    def to_json(self):
        return {"and": [t.to_json() for t in self.terms]}

    def atoms(self):
        for t in self.terms:
            yield from t.atoms()

    def depth(self):
        return 1 + max((t.depth() for t in self.terms), default=0)


@dataclass(frozen=True)
class Or(And):
    def to_json(self):
        return {"or": [t.to_json() for t in self.terms]}


@dataclass(frozen=True)
class Not(Predicate):
    term: Predicate

    def to_json(self):
        return {"not": self.term.to_json()}

    def atoms(self):
        yield from self.term.atoms()

    def depth(self):
        return 1 + self.term.depth()


def all_of(*terms) -> Predicate:
    return And(tuple(terms))


def any_of(*terms) -> Predicate:
    return Or(tuple(terms))


def predicate_from_json(obj, _depth: int = 0) -> Predicate:
    if _depth > MAX_DEPTH:
        raise MalformedProtection("protection expression too deep")
    if not isinstance(obj, dict) or len(obj) == 0:
        raise MalformedProtection(f"not a protection expression: {obj!r}")
    try:
        if "const" in obj:
            return Const(bool(obj["const"]))
        if "field" in obj:
            return Field(obj["field"], obj["op"], obj["value"])
        if "measure" in obj:
            start, stop = obj["measure"]
            return Measure(int(start), int(stop), Basis(obj["basis"]), int(obj["expected"]), obj.get("policy", "all"))
        if "and" in obj:
            return And(tuple(predicate_from_json(t, _depth + 1) for t in obj["and"]))
        if "or" in obj:
            return Or(tuple(predicate_from_json(t, _depth + 1) for t in obj["or"]))
        if "not" in obj:
            return Not(predicate_from_json(obj["not"], _depth + 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedProtection(str(exc)) from exc
    raise MalformedProtection(f"unknown protection node {sorted(obj)}")


def check_predicate(pred: Optional[Predicate], kind: str):
    """Enforce size bounds and that α holds only classical atoms, φ only quantum ones."""
    if pred is None:
        return
    if pred.depth() > MAX_DEPTH:
        raise MalformedProtection("protection expression too deep")
    atoms = list(pred.atoms())
    if len(atoms) > MAX_ATOMS:
        raise MalformedProtection("protection expression has too many atoms")
    wrong = Measure if kind == "classical" else Field
    if any(isinstance(a, wrong) for a in atoms):
        raise MalformedProtection(f"{kind} protection contains a {wrong.__name__} atom")


def evaluate_classical(pred: Predicate, evidence: Mapping) -> bool:
    if isinstance(pred, Const):
        return pred.value
    if isinstance(pred, Field):
        if pred.name not in evidence:
            return False
        try:
            return bool(_OPS[pred.op](evidence[pred.name], pred.value))
        except TypeError:
            return False
    if isinstance(pred, Not):
        return not evaluate_classical(pred.term, evidence)
    if isinstance(pred, Or):
        return any(evaluate_classical(t, evidence) for t in pred.terms)
    if isinstance(pred, And):
        return all(evaluate_classical(t, evidence) for t in pred.terms)
    raise MalformedProtection(f"{type(pred).__name__} cannot appear in a classical protection")


def quantum_protection_malformed(phi: Predicate, psi: Sequence[QubitState]) -> bool:
    return any(isinstance(a, Measure) and a.stop > len(psi) for a in phi.atoms())


def eval_quantum_protection(phi: Predicate, psi: list[QubitState], rng: np.random.Generator) -> bool:
    """Measure the certificate as φ prescribes.

    Measurement is destructive: every measured qubit in `psi` is replaced in
    place by its post-measurement state, so a second evaluation sees the
    collapsed certificate.  Out-of-range atoms make the whole check false.
    """
    if quantum_protection_malformed(phi, psi):
        return False
    return _eval_q(phi, psi, rng)


def _eval_q(pred, psi, rng) -> bool:
    if isinstance(pred, Const):
        return pred.value
    if isinstance(pred, Measure):
        hits = 0
        for i in range(pred.start, pred.stop):
            outcome, psi[i] = measure(psi[i], pred.basis, rng)
            hits += outcome == pred.expected
        size = pred.stop - pred.start
        if pred.policy == "all":
            return hits == size
        if pred.policy == "any":
            return hits > 0
        return hits >= pred.policy
    if isinstance(pred, Not):
        return not _eval_q(pred.term, psi, rng)
    if isinstance(pred, Or):
        return any(_eval_q(t, psi, rng) for t in pred.terms)
    if isinstance(pred, And):
        return all(_eval_q(t, psi, rng) for t in pred.terms)
    raise MalformedProtection(f"{type(pred).__name__} cannot appear in a quantum protection")


# ---------------------------------------------------------------------------
# transactions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TxBody:
    """Everything the MAC covers: redeemed ids, receiver, protections, classical certificates."""

    redeems: tuple[str, ...]
    receiver: str
    alpha: Optional[Predicate] = None
    phi: Optional[Predicate] = None
    betas: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "redeems", tuple(self.redeems))
        if self.betas is not None:
            object.__setattr__(self, "betas", tuple(dict(b) for b in self.betas))
            if self.alpha is None:
                object.__setattr__(self, "alpha", TRUE)
            if self.phi is None:
                object.__setattr__(self, "phi", TRUE)
            if len(self.betas) != len(self.redeems):
                raise MalformedProtection("need one classical certificate per redeemed transaction")
        elif (self.alpha is None) != (self.phi is None):
            object.__setattr__(self, "alpha", self.alpha or TRUE)
            object.__setattr__(self, "phi", self.phi or TRUE)
        check_predicate(self.alpha, "classical")
        check_predicate(self.phi, "quantum")

    @property
    def form(self) -> str:
        if self.betas is not None:
            return "general"
        return "plain" if self.alpha is None else "protected"

    def mac_fields(self) -> list[bytes]:
        fields = [y.encode() for y in self.redeems] + [self.receiver.encode()]
        if self.alpha is not None:
            fields += [canonical_json(self.alpha.to_json()).encode(), canonical_json(self.phi.to_json()).encode()]
        if self.betas is not None:
            fields += [canonical_json(b).encode() for b in self.betas]
        return fields

    def mac_input(self) -> np.ndarray:
        return message_bits(self.mac_fields())

    @property
    def txid(self) -> str:
        return hashlib.sha256(frame_fields(self.mac_fields())).hexdigest()


@dataclass
class Transaction:
    sender: str
    body: TxBody
    digest: Optional[np.ndarray] = None
    psis: Optional[list[list[QubitState]]] = None  # travels on the quantum channel, not MACed

    @property
    def txid(self) -> str:
        return self.body.txid

    @property
    def form(self) -> str:
        return self.body.form

    def copy(self) -> Transaction:
        psis = None if self.psis is None else [list(p) for p in self.psis]
        return Transaction(self.sender, self.body, None if self.digest is None else self.digest.copy(), psis)


def make_transaction(
    sender: str,
    body: TxBody,
    pool: KeyPool,
    psis: Optional[Sequence[Sequence[QubitState]]] = None,
    mac_config: MacConfig = MacConfig(),
) -> Transaction:
    """Authenticate `body` with the next key frame of the sender-miner pool."""
    if psis is not None:
        if body.form != "general":
            raise MalformedProtection("quantum certificates need the general transaction form")
        if len(psis) != len(body.redeems):
            raise MalformedProtection("need one quantum certificate per redeemed transaction")
        psis = [list(p) for p in psis]
    return Transaction(sender, body, mac(pool, body.mac_input(), mac_config), psis)


class Reason(str, Enum):
    MAC = "MAC"
    OWNERSHIP = "OWNERSHIP"
    DOUBLE_REDEEM = "DOUBLE_REDEEM"
    CLASSICAL_PROTECTION = "CLASSICAL_PROTECTION"
    QUANTUM_PROTECTION = "QUANTUM_PROTECTION"


@dataclass(frozen=True)
class Verdict:
    reason: Optional[Reason] = None
    detail: str = ""

    @property
    def admissible(self) -> bool:
        return self.reason is None

    def __bool__(self):
        return self.admissible


ADMISSIBLE = Verdict()


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Entry:
    txid: str
    kind: str  # "coinbase" or "transfer"
    receiver: str
    value: int
    sender: Optional[str] = None
    redeems: tuple = ()
    alpha: Optional[Predicate] = None
    phi: Optional[Predicate] = None
    betas: Optional[tuple] = None
    memo: str = ""

    def to_json(self) -> dict:
        return {
            "txid": self.txid,
            "kind": self.kind,
            "sender": self.sender,
            "receiver": self.receiver,
            "value": self.value,
            "redeems": list(self.redeems),
            "alpha": None if self.alpha is None else self.alpha.to_json(),
            "phi": None if self.phi is None else self.phi.to_json(),
            "betas": None if self.betas is None else list(self.betas),
            "memo": self.memo,
        }


class Ledger:
    def __init__(self):
        self.entries: list[Entry] = []
        self._index: dict[str, Entry] = {}
        self.redeemed: set[str] = set()

    def get(self, txid: str) -> Optional[Entry]:
        return self._index.get(txid)

    def __contains__(self, txid):
        return txid in self._index

    def __len__(self):
        return len(self.entries)

    def _add(self, entry: Entry):
        if entry.txid in self._index:
            raise ValueError(f"transaction {entry.txid} already on the ledger")
        self.entries.append(entry)
        self._index[entry.txid] = entry

    def append(self, tx: Union[Transaction, TxBody], sender: Optional[str] = None) -> Entry:
        body = tx.body if isinstance(tx, Transaction) else tx
        sender = tx.sender if isinstance(tx, Transaction) else sender
        value = sum(self._index[y].value for y in body.redeems)
        entry = Entry(body.txid, "transfer", body.receiver, value, sender, body.redeems,
                      body.alpha, body.phi, body.betas)
        self._add(entry)
        self.redeemed.update(body.redeems)
        return entry

    def mint(self, agents: Iterable[str], amount: int, memo: str = "reward") -> list[Entry]:
        out = []
        for agent in agents:
            seed = f"coinbase|{len(self.entries)}|{memo}|{agent}|{amount}"
            entry = Entry(hashlib.sha256(seed.encode()).hexdigest(), "coinbase", agent, int(amount), memo=memo)
            self._add(entry)
            out.append(entry)
        return out

    def unspent(self, node: Optional[str] = None) -> list[Entry]:
        return [e for e in self.entries if e.txid not in self.redeemed and (node is None or e.receiver == node)]

    def balance(self, node: str) -> int:
        return sum(e.value for e in self.unspent(node))

    def balances(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.unspent():
            out[e.receiver] = out.get(e.receiver, 0) + e.value
        return dict(sorted(out.items()))

    def total_supply(self) -> int:
        return sum(e.value for e in self.unspent())

    def minted_total(self) -> int:
        return sum(e.value for e in self.entries if e.kind == "coinbase")

    def double_redemptions(self) -> list[str]:
        """Ids redeemed by more than one transfer (full scan)."""
        seen, dup = set(), []
        for e in self.entries:
            for y in e.redeems:
                if y in seen:
                    dup.append(y)
                seen.add(y)
        return dup

    def conserved(self) -> bool:
        for e in self.entries:
            if e.kind == "transfer":
                if e.value != sum(self._index[y].value for y in e.redeems):
                    return False
        return self.total_supply() == self.minted_total() and all(v >= 0 for v in self.balances().values())

    def serialize(self) -> str:
        return "".join(canonical_json(e.to_json()) + "\n" for e in self.entries)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def mint_reward(ledger: Ledger, agents: Iterable[str], amount: int, memo: str = "reward") -> Ledger:
    ledger.mint(sorted(agents), amount, memo)
    return ledger


# ---------------------------------------------------------------------------
# miner checks
# ---------------------------------------------------------------------------


def check_quantum_certificates(tx: Transaction, ledger: Ledger, rng: np.random.Generator) -> Verdict:
    """Check 5 on its own; consumes the certificates it measures."""
    for i, y in enumerate(tx.body.redeems):
        entry = ledger.get(y)
        phi = None if entry is None else entry.phi
        if phi is None or phi == TRUE:
            continue
        psi = tx.psis[i] if tx.psis is not None and i < len(tx.psis) else []
        if quantum_protection_malformed(phi, psi):
            return Verdict(Reason.QUANTUM_PROTECTION, f"certificate {i} is malformed: too few qubits for {y[:12]}")
        if not eval_quantum_protection(phi, psi, rng):
            return Verdict(Reason.QUANTUM_PROTECTION, f"certificate {i} fails the protection of {y[:12]}")
    return ADMISSIBLE


def needs_quantum_check(tx: Transaction, ledger: Ledger) -> bool:
    for y in tx.body.redeems:
        entry = ledger.get(y)
        if entry is not None and entry.phi is not None and entry.phi != TRUE:
            return True
    return False


def validate_transaction(
    tx: Transaction,
    ledger: Ledger,
    pool: KeyPool,
    rng: np.random.Generator,
    check_quantum: bool = True,
    mac_config: MacConfig = MacConfig(),
) -> Verdict:
    """Run the five miner checks in order; the first failure is the verdict.

    `pool` is the miner's end of the key pool shared with the sender; one
    key frame is consumed whether or not the MAC verifies.
    """
    body = tx.body
    digest = tx.digest if tx.digest is not None else np.zeros(0, dtype=np.uint8)
    if not verify_mac(pool, body.mac_input(), digest, mac_config):
        return Verdict(Reason.MAC, "digest does not match")
    for y in body.redeems:
        entry = ledger.get(y)
        if entry is None:
            return Verdict(Reason.OWNERSHIP, f"unknown transaction {y[:12]}")
        if entry.receiver != tx.sender:
            return Verdict(Reason.OWNERSHIP, f"{tx.sender} is not the receiver of {y[:12]}")
    if len(set(body.redeems)) != len(body.redeems):
        return Verdict(Reason.DOUBLE_REDEEM, "transaction redeems the same output twice")
    for y in body.redeems:
        if y in ledger.redeemed:
            return Verdict(Reason.DOUBLE_REDEEM, f"{y[:12]} was already redeemed")
    for i, y in enumerate(body.redeems):
        alpha = ledger.get(y).alpha
        if alpha is None:
            continue
        evidence = body.betas[i] if body.betas is not None else {}
        if not evaluate_classical(alpha, evidence):
            return Verdict(Reason.CLASSICAL_PROTECTION, f"certificate {i} fails the protection of {y[:12]}")
    if check_quantum:
        return check_quantum_certificates(tx, ledger, rng)
    return ADMISSIBLE


# ---------------------------------------------------------------------------
# replicated chain
# ---------------------------------------------------------------------------


@dataclass
class CommitResult:
    txid: Optional[str]  # appended transaction, if any
    round: Optional[RoundOutcome]
    verdicts: dict
    status: str  # "appended", "aborted", "rejected"
    votes: dict = field(default_factory=dict)

    @property
    def appended(self) -> bool:
        return self.txid is not None


class Chain:
    """Miners' replicas, pairwise key pools and the per-transaction commit pipeline.

    With ``certificate_copies="designated"`` only one miner (rotating with
    the round counter) receives and measures the quantum certificates and
    announces the check-5 outcome, which every honest miner adopts.  With
    ``"per_miner"`` the sender prepares a copy for every miner.
    """

    def __init__(self, miners: Sequence[str], seed: int, mac_config: MacConfig = MacConfig(),
                 certificate_copies: str = "designated", reward: int = 1):
        if certificate_copies not in ("designated", "per_miner"):
            raise ValueError(f"unknown certificate_copies mode {certificate_copies!r}")
        self.miners = list(miners)
        self.seed = int(seed)
        self.mac_config = mac_config
        self.certificate_copies = certificate_copies
        self.reward = reward
        self.replicas = {m: Ledger() for m in self.miners}
        self.rounds = 0
        self.log: list[dict] = []
        self._pools: dict[tuple[str, str], KeyPool] = {}

    @property
    def ledger(self) -> Ledger:
        return self.replicas[self.miners[0]]

    def pool(self, owner: str, peer: str) -> KeyPool:
        key = (owner, peer)
        if key not in self._pools:
            pair_seed = rngmod.derive_seed(self.seed, "pool", *sorted(key))
            self._pools[key] = KeyPool(key, pair_seed)
        return self._pools[key]

    def designated(self) -> str:
        return self.miners[self.rounds % len(self.miners)]

    def mint(self, agents: Iterable[str], amount: int, memo: str = "reward"):
        for replica in self.replicas.values():
            mint_reward(replica, agents, amount, memo)

    def sign(self, sender: str, body: TxBody, psis=None, miners: Optional[Sequence[str]] = None) -> dict[str, Transaction]:
        """One authenticated copy of `body` per miner."""
        out = {}
        target = self.designated()
        for miner in self.miners if miners is None else miners:
            give = None
            if psis is not None and (self.certificate_copies == "per_miner" or miner == target):
                give = [list(p) for p in psis]
            tx = make_transaction(sender, body, self.pool(sender, miner), None, self.mac_config)
            tx.psis = give
            out[miner] = tx
        return out

    def submit(
        self,
        versions: Mapping[str, tuple[int, Transaction]],
        lists: Optional[CorrelatedListSet],
        rng: np.random.Generator,
        sender_strategy: str = "honest",
        miner_strategies: Optional[Mapping[str, ReceiverStrategy]] = None,
    ) -> CommitResult:
        """Validate, agree on the version by one consensus round, then tally admissibility.

        `versions` maps each miner to (version label, its copy of the
        transaction).  The sender is consensus agent 0 and miner i is agent
        i+1.  Appends to every replica iff the round reaches consensus on a
        label and at least half the miners hold that version and judge it
        admissible.
        """
        miner_strategies = dict(miner_strategies or {})
        sender = next(iter(versions.values()))[1].sender
        labels = {m: versions[m][0] for m in self.miners}
        if sender_strategy == "honest" and len(set(labels.values())) != 1:
            raise ValueError("an honest sender sends one version to every miner")

        verdicts: dict[str, Verdict] = {}
        for miner in self.miners:
            tx = versions[miner][1]
            verdicts[miner] = validate_transaction(tx, self.replicas[miner], self.pool(miner, sender), rng,
                                                   check_quantum=False, mac_config=self.mac_config)
        verdicts = self._quantum_checks(versions, verdicts, rng)

        agent_of = {m: i + 1 for i, m in enumerate(self.miners)}
        strategies = {agent_of[m]: s for m, s in miner_strategies.items()}
        partition = [agent_of[m] for m in self.miners if labels[m] == 0]
        x_s = labels[self.miners[0]]
        # an equivocating sender's broadcast bit to each miner is that miner's version label
        broadcast = "honest" if sender_strategy == "honest" else "double_spend"
        outcome = run_round(lists, x_s, rng, broadcast, strategies, partition=partition)
        self.rounds += 1

        if outcome.consensus is None:
            result = CommitResult(None, outcome, verdicts, "aborted")
        else:
            votes: dict[str, int] = {}
            for m in self.miners:
                honest = m not in miner_strategies or miner_strategies[m].honest
                if honest and labels[m] == outcome.consensus and verdicts[m].admissible:
                    tid = versions[m][1].txid
                    votes[tid] = votes.get(tid, 0) + 1
            winners = [t for t, c in votes.items() if c >= len(self.miners) / 2]
            if len(winners) == 1:
                tid = winners[0]
                tx = next(versions[m][1] for m in self.miners if versions[m][1].txid == tid)
                for replica in self.replicas.values():
                    replica.append(tx)
                result = CommitResult(tid, outcome, verdicts, "appended", votes)
            else:
                result = CommitResult(None, outcome, verdicts, "rejected", votes)
            names = {0: sender, **{i: m for m, i in agent_of.items()}}
            if outcome.rewarded and self.reward:
                self.mint([names[a] for a in sorted(outcome.rewarded)], self.reward, f"consensus-{self.rounds}")
        self.log.append({"round": self.rounds, "status": result.status, "txid": result.txid,
                         "consensus": outcome.consensus,
                         "verdicts": {m: (v.reason.value if v.reason else "OK") for m, v in verdicts.items()}})
        return result

    def transact(self, sender: str, body: TxBody, rng: np.random.Generator, psis=None,
                 list_len: int = 12) -> CommitResult:
        """Sign one version for every miner and commit it with freshly dealt lists."""
        copies = self.sign(sender, body, psis)
        lists = generate_correlated_lists(len(self.miners) + 1, list_len, rng)
        return self.submit({m: (0, tx) for m, tx in copies.items()}, lists, rng)

    def _quantum_checks(self, versions, verdicts, rng):
        out = dict(verdicts)
        if self.certificate_copies == "per_miner":
            for m in self.miners:
                tx = versions[m][1]
                if out[m].admissible:
                    out[m] = check_quantum_certificates(tx, self.replicas[m], rng)
            return out
        verifier = self.designated()
        vtx = versions[verifier][1]
        announced = check_quantum_certificates(vtx, self.replicas[verifier], rng)
        for m in self.miners:
            tx = versions[m][1]
            if not out[m].admissible or not needs_quantum_check(tx, self.replicas[m]):
                continue
            if tx.txid == vtx.txid:
                out[m] = announced
            else:
                out[m] = Verdict(Reason.QUANTUM_PROTECTION, "no certificate verdict for this version")
        return out
