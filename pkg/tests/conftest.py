import numpy as np
import pytest

ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def random_convex_polygon(rng, n=None, scale=1.0, center=(0.0, 0.0)):
    """Shape-regular convex polygon from sorted random angles on a stretched circle.

    The angle gap and the stretch are bounded so that ``area / h^2`` stays
    away from zero; slivers make the monomial mass matrix ill-conditioned.
    """
    n = int(rng.integers(3, 9)) if n is None else n
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        if np.min(np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))) > 0.3:
            break
    r = scale * rng.uniform(0.8, 1.2)
    pts = np.column_stack([np.cos(ang), np.sin(ang)]) * r
    pts[:, 0] *= rng.uniform(0.75, 1.33)
    return pts + np.asarray(center)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
