"""Seeded batch execution of a scenario and aggregation into a RunReport."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from scipy.stats import binomtest

from .. import rng as rngmod
from ..consensus import ReceiverStrategy, discord_avoidance_bound, estimate_forgery, exact_forgery_acceptance
from ..ledger import Chain, TxBody
from ..lists import DistributorStrategy, run_distribution_phase
from ..qbc import BIT_VALUES, CheatDetected, Revealed, run_bonded_session
from ..qcrypto import MacConfig
from .config import ScenarioConfig

BRIBERY_NOTE = "bribery leak is a modeling construction: bribed distributors reveal their segment of the sender list"


@dataclass
class RunReport:
    config: dict
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)  # metric -> {k, n, freq, ci_low, ci_high}
    notes: list = field(default_factory=list)

    @property
    def pipeline(self) -> str:
        return self.config.get("pipeline", "")

    def frequency(self, metric: str) -> float:
        return self.aggregates[metric]["freq"]


def wilson(k: int, n: int, confidence: float = 0.95) -> dict:
    if n == 0:
        return {"k": 0, "n": 0, "freq": None, "ci_low": None, "ci_high": None}
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return {"k": k, "n": n, "freq": k / n, "ci_low": round(float(ci.low), 6), "ci_high": round(float(ci.high), 6)}


def _aggregate(records: list, metrics: list[str]) -> dict:
    if not records:
        return {}
    out = {}
    for metric in metrics:
        vals = [r[metric] for r in records if r.get(metric) is not None]
        out[metric] = wilson(sum(bool(v) for v in vals), len(vals))
    return out


# ---------------------------------------------------------------------------
# ledger pipeline: distribution -> classification -> composition -> round -> commit
# ---------------------------------------------------------------------------

LEDGER_METRICS = [
    "lists_composed",
    "consensus_reached",
    "honest_agree",
    "honest_output_xs",
    "appended",
    "conflicting_append",
    "replicas_identical",
    "conserved",
    "double_redemption",
    "corrupted_distributor_caught",
    "honest_distributor_kept",
]


def _receiver_strategies(cfg: ScenarioConfig) -> dict[int, ReceiverStrategy]:
    out = {}
    for g in cfg.adversaries.receivers:
        for k in g.agents:
            out[k] = ReceiverStrategy(g.kind, g.forge)
    return out


def _ledger_run(cfg: ScenarioConfig, index: int) -> dict:
    seed, p, a = cfg.seed, cfg.params, cfg.adversaries
    n_recv = cfg.roles.receivers
    n = n_recv + 1

    plan = {d: DistributorStrategy() for d in range(1, cfg.roles.distributors + 1)}
    for g in a.distributors:
        for d in g.ids:
            plan[d] = DistributorStrategy(g.strategy, dict(g.params))
    dist = run_distribution_phase(
        n, p.m, plan, p.theta,
        rng_for=lambda d: rngmod.stream(seed, "run", index, "distributor", d),
        sample_len=p.sample_len, transport=p.transport,
    )

    miners = [f"miner-{k}" for k in range(1, n_recv + 1)]
    chain = Chain(miners, rngmod.derive_seed(seed, "run", index, "chain"), MacConfig(p.digest_len), reward=p.reward)
    chain.mint(["sender"], 10, "genesis")
    if p.reward:
        chain.mint([f"distributor-{d}" for d in dist.honest], p.reward, "distribution")

    strategies = _receiver_strategies(cfg)
    leak = None
    if a.bribery is not None and a.bribery.bribed and dist.composed is not None:
        bought = dist.honest[: a.bribery.bribed]
        knowledge = {}
        for slot, d in enumerate(dist.honest):
            if d in bought:
                for j in range(p.m):
                    knowledge[slot * p.m + j] = int(dist.composed.sender[slot * p.m + j])
        for k in a.bribery.agents:
            base = strategies.get(k, ReceiverStrategy("tamper"))
            strategies[k] = ReceiverStrategy(base.kind if base.kind != "honest" else "tamper", "informed", knowledge)
        leak = len(bought) / len(dist.honest)

    coin = chain.ledger.unspent("sender")[0].txid
    body_a, body_b = TxBody((coin,), "carol"), TxBody((coin,), "dave")
    round_rng = rngmod.stream(seed, "run", index, "round")
    if a.sender == "honest":
        labels = {m: 0 for m in miners}
    elif a.sender == "double_spend":
        labels = {m: (0 if i < len(miners) // 2 else 1) for i, m in enumerate(miners)}
    else:
        picks = round_rng.integers(0, 2, size=len(miners))
        labels = {m: int(b) for m, b in zip(miners, picks)}
    copies_a = chain.sign("sender", body_a, miners=[m for m in miners if labels[m] == 0])
    copies_b = chain.sign("sender", body_b, miners=[m for m in miners if labels[m] == 1])
    versions = {m: (labels[m], copies_a[m] if labels[m] == 0 else copies_b[m]) for m in miners}

    miner_strategies = {miners[k - 1]: s for k, s in strategies.items()}
    result = chain.submit(versions, dist.composed, round_rng, a.sender, miner_strategies)
    outcome = result.round

    honest_dec = [outcome.decisions.get(k) for k in range(1, n) if strategies.get(k, ReceiverStrategy("honest")).honest]
    decided = {d for d in honest_dec if d is not None}
    digests = {r.digest() for r in chain.replicas.values()}
    ledger = chain.ledger
    bad = {d for g in a.distributors if g.strategy != "honest" for d in g.ids}
    return {
        "run": index,
        "distributors_honest": list(dist.honest),
        "distributors_corrupted": list(dist.corrupted),
        "lists_composed": dist.composed is not None,
        "consensus": outcome.consensus,
        "decisions": {str(k): v for k, v in sorted(outcome.decisions.items())},
        "criteria": {str(k): v for k, v in sorted(outcome.criteria.items())},
        "consensus_reached": outcome.consensus is not None,
        "honest_agree": len(decided) <= 1,
        "honest_output_xs": (all(d == 0 for d in honest_dec) if a.sender == "honest" and dist.composed is not None
                             else None),
        "status": result.status,
        "appended": result.appended,
        "appended_txid": result.txid,
        "conflicting_append": body_a.txid in ledger and body_b.txid in ledger,
        "verdicts": {m: (v.reason.value if v.reason else "OK") for m, v in sorted(result.verdicts.items())},
        "ledger_digest": ledger.digest(),
        "replicas_identical": len(digests) == 1,
        "conserved": ledger.conserved(),
        "double_redemption": bool(ledger.double_redemptions()),
        "supply": ledger.total_supply(),
        "minted": ledger.minted_total(),
        "rewarded": sorted(outcome.rewarded),
        "corrupted_distributor_caught": (all(d in dist.corrupted for d in bad) if bad else None),
        "honest_distributor_kept": all(d in dist.honest for d in plan if d not in bad),
        "leak_fraction": leak,
    }


# ---------------------------------------------------------------------------
# QBC pipeline: bonded sessions
# ---------------------------------------------------------------------------

QBC_METRICS = [
    "revealed_committed",
    "bob_caught",
    "alice_caught",
    "bob_frozen",
    "alice_frozen",
    "bond_coupling",
    "replicas_identical",
    "conserved",
]


def _qbc_run(cfg: ScenarioConfig, index: int) -> dict:
    seed, p, a = cfg.seed, cfg.params, cfg.adversaries
    rng = rngmod.stream(seed, "run", index, "qbc")
    miners = [f"miner-{k}" for k in range(1, cfg.roles.receivers + 1)]
    chain = Chain(miners, rngmod.derive_seed(seed, "run", index, "chain"), MacConfig(p.digest_len),
                  certificate_copies=p.certificate_copies, reward=p.reward)
    # whole-output redemption: fund each party with unit coins so a bond is exactly bond_coins
    chain.mint(["alice", "bob"] * p.bond_coins, 1, "funding")
    bits = p.qbc_bits or BIT_VALUES[int(rng.integers(0, 4))]
    kw = {}
    if a.bob is not None:
        kw.update(bob_skew=a.bob, skew_count=a.bob_skew_count, skew_params=dict(a.bob_params))
    if a.alice is not None:
        kw["alice_cheat"] = a.alice
    bonded = run_bonded_session(chain, "alice", "bob", p.bond_coins, bits, p.qbc_n, p.qbc_m, rng,
                                evidence=p.evidence, **kw)
    s = bonded.session
    digests = {r.digest() for r in chain.replicas.values()}
    honest_alice = a.alice is None
    return {
        "run": index,
        "committed": bits,
        "prep": "cheat" if isinstance(s.prep, CheatDetected) else "pass",
        "opening": (None if s.opening is None else s.opening.bits if isinstance(s.opening, Revealed) else "cheat"),
        "relevant": None if s.report is None else s.report.relevant,
        "cs_binding_ok": s.cs_binding_ok,
        "revealed_committed": (isinstance(s.opening, Revealed) and s.opening.bits == bits
                               if honest_alice and s.opening is not None else None),
        "bob_caught": s.bob_caught,
        "alice_caught": s.alice_caught if s.opening is not None else None,
        "bob_frozen": bonded.bob_frozen,
        "alice_frozen": bonded.alice_frozen if bonded.alice_bond is not None else None,
        "bond_coupling": bonded.bob_frozen == s.bob_caught and bonded.alice_frozen == s.alice_caught,
        "transcript_digests": [r.digest for r in s.transcript],
        "ledger_digest": chain.ledger.digest(),
        "replicas_identical": len(digests) == 1,
        "conserved": chain.ledger.conserved(),
    }


# ---------------------------------------------------------------------------
# forgery curve
# ---------------------------------------------------------------------------


def _forgery_records(cfg: ScenarioConfig) -> list[dict]:
    p = cfg.params
    out = []
    if cfg.batch == 0:
        return out
    for m in p.forgery_ms:
        est = estimate_forgery(m, p.forgery_attempts, rngmod.stream(cfg.seed, "forgery", m), p.forgery_receivers)
        out.append({
            "m": m,
            "attempts": est.attempts,
            "honest_receivers": est.honest_receivers,
            "hits": est.hits,
            "empirical": est.empirical,
            "conditional": est.conditional,
            "single_receiver": est.single_receiver,
            "theory": discord_avoidance_bound(m),
            "exact": exact_forgery_acceptance(m, p.forgery_receivers),
        })
    return out


# ---------------------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, progress: Callable[[int], None] = None) -> RunReport:
    """Run the configured batch; records are ordered by run index."""
    report = RunReport(config=cfg.to_dict())
    if cfg.pipeline == "forgery":
        report.records = _forgery_records(cfg)
        conds = [r["conditional"] for r in report.records]
        report.notes.append("conditional = exact acceptance probability given the forged list, averaged")
        if len(conds) > 1:
            dec = all(a > b for a, b in zip(conds, conds[1:]))
            report.aggregates["forgery_decreasing"] = wilson(int(dec), 1)
        return report
    step = _ledger_run if cfg.pipeline == "ledger" else _qbc_run
    for i in range(cfg.batch):
        report.records.append(step(cfg, i))
        if progress is not None:
            progress(i)
    report.aggregates = _aggregate(report.records, LEDGER_METRICS if cfg.pipeline == "ledger" else QBC_METRICS)
    if cfg.adversaries.bribery is not None:
        report.notes.append(BRIBERY_NOTE)
    return report


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
