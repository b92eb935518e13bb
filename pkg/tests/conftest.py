"""Prints one PASS/FAIL line per acceptance criterion at the end of the run.

Acceptance tests are named ``test_cNN_...``; they may attach a ``detail`` string
through ``record_property``.  A criterion split over several tests passes only
if every one of them does.
"""

import re

CRITERIA = {
    1: "format fidelity",
    2: "window arithmetic",
    3: "encoding invariants",
    4: "shape/FLOP fidelity",
    5: "loss/metric oracles",
    6: "gradient check",
    7: "learnability",
    8: "BB advantage direction",
    9: "CAM properties",
    10: "kernel ablation direction",
    11: "determinism",
}

_NAME = re.compile(r"test_acceptance\.py::test_c(\d+)_")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _NAME.search(getattr(rep, "nodeid", ""))
            if not m or (outcome == "passed" and rep.when != "call"):
                continue
            ok, details = rows.get(int(m.group(1)), (True, []))
            detail = dict(rep.user_properties).get("detail")
            if outcome != "passed":
                detail = f"{rep.nodeid.split('::')[-1]} {outcome} in {rep.when}" + (
                    f" ({detail})" if detail else "")
            if detail:
                details.append(detail)
            rows[int(m.group(1))] = (ok and outcome == "passed", details)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        ok, details = rows[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {num:>2} {CRITERIA[num]}: "
                                    + "; ".join(details))
