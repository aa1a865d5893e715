import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gibbsvoid.geometry import PointPattern, Window  # noqa: E402


@pytest.fixture
def unit():
    return Window.unit()


def random_pattern(rng, n, w=None, min_gap=0.0):
    """Uniform points in ``w`` by sequential rejection so that all gaps exceed ``min_gap``."""
    w = w or Window.unit()
    lo, hi = np.asarray(w.lower), np.asarray(w.upper)
    pts = []
    tries = 0
    while len(pts) < n and tries < 100_000:
        tries += 1
        p = lo + rng.random(w.d) * (hi - lo)
        if all(np.linalg.norm(p - q) > min_gap for q in pts):
            pts.append(p)
    return PointPattern(np.array(pts).reshape(-1, w.d), w)


# criterion number -> list of (check, ok, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list] = {}


def record(criterion: int, check: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[num]
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAIL'} ({d})" for name, good, d in checks)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}  {detail}")
