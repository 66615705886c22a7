"""Deterministic report serialization: JSON-lines records and a fixed-layout table."""
from __future__ import annotations

import json

from .runner import RunReport, canonical

FORMATS = ("records", "human")


def emit_report(report: RunReport, fmt: str = "records") -> str:
    if fmt == "records":
        return _records(report)
    if fmt == "human":
        return _human(report)
    raise ValueError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")


def _records(report: RunReport) -> str:
    lines = [canonical({"type": "config", "config": report.config, "notes": report.notes})]
    lines += [canonical({"type": "run", **rec}) for rec in report.records]
    lines += [canonical({"type": "aggregate", "metric": k, **v}) for k, v in sorted(report.aggregates.items())]
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> RunReport:
    """Inverse of the records format."""
    report = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: {exc.msg}") from None
        kind = obj.pop("type", None)
        if kind == "config":
            report = RunReport(config=obj["config"], notes=list(obj.get("notes", [])))
        elif report is None:
            raise ValueError(f"line {lineno}: records must start with a config line")
        elif kind == "run":
            report.records.append(obj)
        elif kind == "aggregate":
            report.aggregates[obj.pop("metric")] = obj
        else:
            raise ValueError(f"line {lineno}: unknown record type {kind!r}")
    if report is None:
        raise ValueError("no config line found")
    return report


def _fmt(x, width: int, prec: int = 4) -> str:
    if x is None:
        text = "-"
    elif isinstance(x, bool):
        text = "yes" if x else "no"
    elif isinstance(x, float):
        text = f"{x:.{prec}g}" if (x != 0 and abs(x) < 1e-3) else f"{x:.{prec}f}"
    else:
        text = str(x)
    return text.rjust(width)


def _human(report: RunReport) -> str:
    cfg = report.config
    out = [
        f"scenario  {cfg.get('name', '')}",
        f"pipeline  {cfg.get('pipeline', '')}",
        f"seed      {cfg.get('seed', '')}",
        f"batch     {cfg.get('batch', '')}",
    ]
    out += [f"note      {n}" for n in report.notes]
    out.append("")
    if report.pipeline == "forgery":
        cols = [("m", 5), ("attempts", 9), ("hits", 6), ("empirical", 11), ("conditional", 12),
                ("single", 11), ("(2/3)^(m/3)", 12), ("exact", 11)]
        keys = ["m", "attempts", "hits", "empirical", "conditional", "single_receiver", "theory", "exact"]
        out.append(" ".join(name.rjust(w) for name, w in cols))
        out.append("-" * (sum(w for _, w in cols) + len(cols) - 1))
        for rec in report.records:
            out.append(" ".join(_fmt(rec[k], w) for k, (_, w) in zip(keys, cols)))
        if "forgery_decreasing" in report.aggregates:
            out.append("")
            out.append(f"conditional column strictly decreasing in m: {_fmt(bool(report.aggregates['forgery_decreasing']['k']), 0)}")
    else:
        cols = [("metric", 30), ("k/n", 11), ("freq", 8), ("95% CI", 19)]
        out.append(" ".join(name.ljust(w) if i == 0 else name.rjust(w) for i, (name, w) in enumerate(cols)))
        out.append("-" * (sum(w for _, w in cols) + len(cols) - 1))
        if report.records:
            for metric, agg in sorted(report.aggregates.items()):
                if not agg["n"]:
                    continue
                ci = f"[{agg['ci_low']:.3f}, {agg['ci_high']:.3f}]"
                out.append(" ".join([metric.ljust(30), f"{agg['k']}/{agg['n']}".rjust(11),
                                     _fmt(agg["freq"], 8, 3), ci.rjust(19)]))
    return "\n".join(out) + "\n"
