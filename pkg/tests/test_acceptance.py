"""Every acceptance criterion at its stated sample size and tolerance.

Each test prints one PASS/FAIL line for its criterion (and one line per
individual check); the lines are repeated in the terminal summary.
"""
import pytest

from mixforge import verification as V

from conftest import ACCEPTANCE_LINES

TITLES = {
    1: "Haar/noise suite",
    2: "solver validation",
    3: "derivative suite",
    4: "right-inverse suite",
    5: "squeeze ratio <= 1/2 on >= 99% of 500 pairs, both models",
    6: "coupling and total variation",
    7: "Kantorovich density",
    8: "exponential mixing, default nse ensemble",
    9: "stationary moments",
    10: "bitwise determinism",
}

_RESULTS = {}


def _run(criterion):
    if criterion == 9:
        rep = _RESULTS.get("report")
        return V.check_stationary(V.FULL, 0, rep.kappa if rep is not None else None)
    if criterion == 8:
        reps = []
        out = V.check_mixing(V.FULL, 0, reps)
        _RESULTS["report"] = reps[0]
        return out
    return V.SUITES[criterion](V.FULL, 0)


@pytest.mark.parametrize("criterion", sorted(TITLES))
def test_acceptance(criterion):
    checks = _run(criterion)
    ok = all(c.passed for c in checks)
    summary = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {TITLES[criterion]}"
    lines = [summary] + ["    " + c.line() for c in checks]
    for line in lines:
        print(line)
    ACCEPTANCE_LINES.extend(lines)
    failed = [c.line() for c in checks if not c.passed]
    assert ok, "\n".join(failed)
