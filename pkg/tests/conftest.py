import numpy as np
import pytest

from rosanna.dataset import SyntheticSpec, VectorSet, gen_synthetic

# 16 small 3-d vectors, grouped by their g=1 cone.
TOY16 = np.array([
    (-22, 12, 5), (-21, -19, -12),
    (29, 24, -13), (44, 17, -4), (49, -6, 5), (57, 8, -2),
    (-3, -18, 10), (-1, -13, 0),
    (5, 11, 4), (11, 14, -3), (14, 25, 23),
    (-36, 23, -47), (5, 26, -27), (9, -2, -17), (12, 5, -14),
    (-7, 11, 22),
], dtype=np.float32)


@pytest.fixture
def toy16():
    return VectorSet(TOY16, source="toy16")


@pytest.fixture(scope="session")
def gauss_small():
    base = gen_synthetic(SyntheticSpec("gaussian", 3000, 8, seed=11))
    queries = gen_synthetic(SyntheticSpec("gaussian", 200, 8, seed=12)).data
    return base, queries


_REPORT = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _record(name, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"[{status}] {name}: {detail}"
        print(line)
        _REPORT.append(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
