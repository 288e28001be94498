import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tposeen.solver import ForcingSpec, Grid, picard_solve  # noqa: E402
from tposeen.special import FlowParams  # noqa: E402

# scaled-down standard scenario, see the decision notes for the grid choice
STANDARD_GRID = (64, 8.0)
STANDARD_KMAX = 8


@pytest.fixture(scope="session")
def standard():
    """Converged Picard solution of the standard scenario (amplitude 0.05), shared by the session."""
    p = FlowParams(1.0, 2 * np.pi)
    f = ForcingSpec.standard(0.05)
    g = Grid(*STANDARD_GRID)
    fld, hist = picard_solve(f, p, g, K_max=STANDARD_KMAX)
    return {"params": p, "forcing": f, "grid": g, "field": fld, "history": hist}


_ACCEPTANCE = {}


@pytest.fixture
def record():
    """record(criterion, ok, detail, part=None) stores one acceptance outcome."""

    def _record(criterion, ok, detail, part=None):
        _ACCEPTANCE.setdefault(int(criterion), []).append((part, bool(ok), str(detail)))
        print(f"criterion {criterion}{'' if part is None else ' [' + part + ']'}: {'PASS' if ok else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[c]
        ok = all(p[1] for p in parts)
        detail = "; ".join((f"{name}: " if name else "") + ("ok " if good else "FAIL ") + d for name, good, d in parts)
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'} ({detail})")
