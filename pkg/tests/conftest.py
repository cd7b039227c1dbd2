import numpy as np
import pytest

from proxcorr.graph import build_metropolis_weights, random_geometric_graph
from proxcorr.problems import build_coupled_qp, build_ns1, initial_iterate, ns1_reference, qp_reference

# acceptance results, filled by tests/test_acceptance.py and printed at the end of the session
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")


@pytest.fixture(scope="session")
def ns1_50():
    inst, op = build_ns1(50)
    mix = build_metropolis_weights(random_geometric_graph(50, 42))
    z, _ = ns1_reference(inst)
    return inst, op, mix, z, initial_iterate(inst, 0)


@pytest.fixture(scope="session")
def ns1_small():
    inst, op = build_ns1(8)
    mix = build_metropolis_weights(random_geometric_graph(8, 42))
    z, _ = ns1_reference(inst)
    return inst, op, mix, z, initial_iterate(inst, 0)


@pytest.fixture(scope="session")
def qp5():
    inst, op = build_coupled_qp(7, 5, 3, 2)
    mix = build_metropolis_weights(random_geometric_graph(5, 42))
    z, _ = qp_reference(inst)
    return inst, op, mix, z, initial_iterate(inst, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
