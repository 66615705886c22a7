"""Acceptance summary: one PASS/FAIL line per criterion at the end of the run."""


def pytest_terminal_summary(terminalreporter):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            props = dict(getattr(rep, "user_properties", []))
            if "acceptance" not in props or getattr(rep, "when", "call") != "call":
                continue
            rows.append((props["acceptance"], "PASS" if rep.passed else "FAIL", props.get("measured", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, measured in sorted(rows, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {measured}")
