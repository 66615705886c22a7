"""Scenario configuration: YAML text in, validated dataclasses out."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import yaml

from ..consensus import FORGE_STRATEGIES, SENDER_STRATEGIES
from ..lists import DISTRIBUTOR_STRATEGIES
from ..qbc import ALICE_CHEATS, BIT_VALUES, SKEW_STRATEGIES

PIPELINES = ("ledger", "qbc", "forgery")
RECEIVER_KINDS = ("honest", "tamper", "silent_abort")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    """Every problem found in one config, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class Roles:
    receivers: int = 5
    distributors: int = 3
    miners: Optional[int] = None  # ledger nodes are the receivers; if given it must match


@dataclass
class Params:
    m: int = 12  # list length contributed by each distributor
    theta: float = 0.3
    digest_len: int = 128
    sample_len: Optional[int] = None
    transport: bool = True
    reward: int = 1
    qbc_n: int = 40
    qbc_m: int = 5
    qbc_bits: Optional[str] = None  # fixed committed value; random per run when unset
    bond_coins: int = 3
    evidence: str = "transcript"
    certificate_copies: str = "designated"
    forgery_ms: list = field(default_factory=lambda: [30, 60, 90])
    forgery_attempts: int = 1000
    forgery_receivers: int = 2


@dataclass
class ReceiverGroup:
    agents: list
    kind: str = "tamper"
    forge: str = "random_ids"


@dataclass
class DistributorGroup:
    ids: list
    strategy: str = "honest"
    params: dict = field(default_factory=dict)


@dataclass
class Bribery:
    """How many honest distributors sell their segment of the sender's list.

    A modeling construction with no quantitative source: the leak is the
    bribed share of the composed list.
    """

    bribed: int = 0
    agents: list = field(default_factory=list)  # receivers that buy the leak and forge with it


@dataclass
class Adversaries:
    sender: str = "honest"
    receivers: list = field(default_factory=list)  # of ReceiverGroup
    distributors: list = field(default_factory=list)  # of DistributorGroup
    bribery: Optional[Bribery] = None
    alice: Optional[str] = None
    bob: Optional[str] = None
    bob_skew_count: int = 1
    bob_params: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str
    pipeline: str = "ledger"
    seed: int = 0
    batch: int = 10
    roles: Roles = field(default_factory=Roles)
    params: Params = field(default_factory=Params)
    adversaries: Adversaries = field(default_factory=Adversaries)
    description: str = ""

    def to_dict(self) -> dict:
        return _strip(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, allow_unicode=True)

    def with_overrides(self, seed: Optional[int] = None, batch: Optional[int] = None) -> ScenarioConfig:
        data = self.to_dict()
        if seed is not None:
            data["seed"] = seed
        if batch is not None:
            data["batch"] = batch
        return from_dict(data)

    def validate(self) -> list[str]:
        return violations(self)


def _strip(data):
    """Drop None values so the dump only carries what was set."""
    if isinstance(data, dict):
        return {k: _strip(v) for k, v in data.items() if v is not None}
    if isinstance(data, list):
        return [_strip(v) for v in data]
    return data


# ---------------------------------------------------------------------------
# building from plain data
# ---------------------------------------------------------------------------


def _build(cls, data, where: str, problems: list):
    if data is None:
        return cls() if _all_defaulted(cls) else None
    if not isinstance(data, dict):
        problems.append(f"{where}: expected a mapping")
        return cls() if _all_defaulted(cls) else None
    known = {f.name for f in fields(cls)}
    for key in sorted(set(data) - known):
        problems.append(f"{where}: unknown key {key!r}")
    kwargs = {k: v for k, v in data.items() if k in known}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{where}: {exc}")
        return None


def _all_defaulted(cls) -> bool:
    from dataclasses import MISSING

    return all(f.default is not MISSING or f.default_factory is not MISSING for f in fields(cls))


def _parse(data) -> tuple[Optional[ScenarioConfig], list[str]]:
    problems: list[str] = []
    if not isinstance(data, dict):
        return None, ["config must be a mapping at the top level"]
    top = dict(data)
    roles = _build(Roles, top.pop("roles", None), "roles", problems)
    params = _build(Params, top.pop("params", None), "params", problems)
    adv_raw = top.pop("adversaries", None) or {}
    adversaries = None
    if isinstance(adv_raw, dict):
        adv_raw = dict(adv_raw)
        recv = [_build(ReceiverGroup, g, f"adversaries.receivers[{i}]", problems)
                for i, g in enumerate(adv_raw.pop("receivers", None) or [])]
        dist = [_build(DistributorGroup, g, f"adversaries.distributors[{i}]", problems)
                for i, g in enumerate(adv_raw.pop("distributors", None) or [])]
        bribery = adv_raw.pop("bribery", None)
        bribery = None if bribery is None else _build(Bribery, bribery, "adversaries.bribery", problems)
        adversaries = _build(Adversaries, adv_raw, "adversaries", problems)
        if adversaries is not None:
            adversaries.receivers = [g for g in recv if g is not None]
            adversaries.distributors = [g for g in dist if g is not None]
            adversaries.bribery = bribery
    else:
        problems.append("adversaries: expected a mapping")
    if "name" not in top:
        problems.append("name: required")
        top["name"] = ""
    cfg = _build(ScenarioConfig, top, "config", problems)
    if cfg is None or roles is None or params is None or adversaries is None:
        return None, problems
    cfg.roles, cfg.params, cfg.adversaries = roles, params, adversaries
    return cfg, problems


def from_dict(data) -> ScenarioConfig:
    cfg, problems = _parse(data)
    if cfg is not None:
        problems += violations(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(source: Union[str, Path]) -> ScenarioConfig:
    """Load from a path, a shipped scenario name, or YAML text.

    Raises ConfigError listing every parse error (with its line and column)
    or every broken constraint.
    """
    text = _read_source(source)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ConfigError([f"{where}{getattr(exc, 'problem', None) or exc}"]) from None
    return from_dict(data)


def _read_source(source) -> str:
    if isinstance(source, Path):
        return source.read_text()
    if "\n" not in source:
        path = Path(source)
        if path.is_file():
            return path.read_text()
        shipped = SCENARIO_DIR / f"{source}.yaml"
        if shipped.is_file():
            return shipped.read_text()
        if source.endswith((".yaml", ".yml")):
            raise ConfigError([f"{source}: no such file"])
    return source


def shipped_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


def violations(cfg: ScenarioConfig) -> list[str]:
    out = []
    r, p, a = cfg.roles, cfg.params, cfg.adversaries
    if cfg.pipeline not in PIPELINES:
        out.append(f"pipeline must be one of {', '.join(PIPELINES)}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        out.append("seed must be a 64-bit unsigned integer")
    if not isinstance(cfg.batch, int) or cfg.batch < 0:
        out.append("batch must be a non-negative integer")

    if not isinstance(p.m, int) or p.m <= 0 or p.m % 6:
        out.append("m must be a multiple of 6")
    if not 0 <= p.theta <= 0.5:
        out.append("θ ∈ [0, 1/2]")
    if p.digest_len <= 0:
        out.append("digest_len must be positive")
    if p.sample_len is not None and (p.sample_len <= 0 or p.sample_len % 6):
        out.append("sample_len must be a positive multiple of 6")
    if p.reward < 0:
        out.append("reward must be non-negative")
    if not isinstance(p.qbc_n, int) or p.qbc_n <= 0 or p.qbc_n % 4:
        out.append("n must be a multiple of 4")
    if p.qbc_m < 2:
        out.append("qbc_m must be at least 2")
    if p.qbc_bits is not None and p.qbc_bits not in BIT_VALUES:
        out.append(f"qbc_bits must be one of {', '.join(BIT_VALUES)}")
    if p.bond_coins <= 0:
        out.append("bond_coins must be positive")
    if p.evidence not in ("transcript", "quantum"):
        out.append("evidence must be transcript or quantum")
    if p.certificate_copies not in ("designated", "per_miner"):
        out.append("certificate_copies must be designated or per_miner")
    for m in p.forgery_ms:
        if not isinstance(m, int) or m <= 0 or m % 6:
            out.append(f"forgery m={m}: m must be a multiple of 6")
    if p.forgery_attempts < 0 or p.forgery_receivers < 1:
        out.append("forgery_attempts must be non-negative and forgery_receivers positive")

    if r.receivers < 2:
        out.append("need at least 2 receivers")
    if r.distributors < 1:
        out.append("need at least 1 distributor")
    if r.miners is not None and r.miners != r.receivers:
        out.append("miners must equal receivers (the receivers are the ledger nodes)")

    if a.sender not in SENDER_STRATEGIES:
        out.append(f"unknown sender strategy {a.sender!r}")
    seen: set = set()
    for g in a.receivers:
        if g.kind not in RECEIVER_KINDS:
            out.append(f"unknown receiver kind {g.kind!r}")
        if g.forge not in FORGE_STRATEGIES:
            out.append(f"unknown forge strategy {g.forge!r}")
        for k in g.agents:
            if not isinstance(k, int) or not 1 <= k <= r.receivers:
                out.append(f"receiver {k} is outside 1..{r.receivers}")
            elif k in seen:
                out.append(f"receiver {k} is assigned twice")
            seen.add(k)
    dseen: set = set()
    for g in a.distributors:
        if g.strategy not in DISTRIBUTOR_STRATEGIES:
            out.append(f"unknown distributor strategy {g.strategy!r}")
        for d in g.ids:
            if not isinstance(d, int) or not 1 <= d <= r.distributors:
                out.append(f"distributor {d} is outside 1..{r.distributors}")
            elif d in dseen:
                out.append(f"distributor {d} is assigned twice")
            dseen.add(d)
    if a.bribery is not None:
        if not 0 <= a.bribery.bribed <= r.distributors:
            out.append(f"bribed must be in 0..{r.distributors}")
        for k in a.bribery.agents:
            if not isinstance(k, int) or not 1 <= k <= r.receivers:
                out.append(f"bribery agent {k} is outside 1..{r.receivers}")
    if a.alice is not None and a.alice not in ALICE_CHEATS:
        out.append(f"unknown Alice strategy {a.alice!r}")
    if a.bob is not None and a.bob not in SKEW_STRATEGIES:
        out.append(f"unknown Bob strategy {a.bob!r}")
    if a.bob is not None and not 1 <= a.bob_skew_count <= p.qbc_m:
        out.append(f"bob_skew_count must be in 1..{p.qbc_m}")
    return out
