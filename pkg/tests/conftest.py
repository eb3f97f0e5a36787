import numpy as np
import pytest


def random_dominant(rng, n, density=0.6, ratio=None, random_sign=True):
    """Independent generator of normalized diagonally dominant matrices.

    Off-diagonal entries are uniform in [-1, 1] on a random support, the
    diagonal is max(1, rowsum / ratio) with ratio drawn in (0.3, 0.99), and
    the diagonal sign is random when ``random_sign``.
    """
    w = rng.uniform(-1.0, 1.0, (n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(w, 0.0)
    rows = np.abs(w).sum(axis=1)
    r = rng.uniform(0.3, 0.99) if ratio is None else ratio
    d = np.maximum(1.0, rows / r) * 1.000001
    if random_sign:
        d *= rng.choice([-1.0, 1.0], n)
    w[np.arange(n), np.arange(n)] = d
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
