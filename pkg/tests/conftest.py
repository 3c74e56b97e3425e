import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def cone_embeddings(k, per_cluster, rng, dim=16, spread_deg=8.0):
    """Non-negative embeddings around k orthogonal axes (90 deg apart), each
    within ``spread_deg`` of its axis. Returns ``(embeddings, labels)``."""
    out, labels = [], []
    for c in range(k):
        axis = np.zeros(dim)
        axis[c] = 1.0
        for _ in range(per_cluster):
            d = np.abs(rng.normal(size=dim))
            d[c] = 0.0
            d /= np.linalg.norm(d)
            ang = np.deg2rad(spread_deg) * rng.uniform()
            out.append((np.cos(ang) * axis + np.sin(ang) * d) * rng.uniform(0.5, 3.0))
            labels.append(c)
    return np.array(out), np.array(labels)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
