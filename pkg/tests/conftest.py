import numpy as np
import pytest
from hypothesis import settings

from oselab.cocycle import ConjugatorField, coboundary_generator, constant_generator
from oselab.dynamics import CAT_MAP, doubling_map, sample_points, toral_automorphism
from oselab.oseledets import lyapunov_spectrum

settings.register_profile("oselab", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("oselab")

E = np.e
DIAG = [E, 1.0, 1.0 / E]


@pytest.fixture(scope="session")
def cat():
    return toral_automorphism(CAT_MAP)


@pytest.fixture(scope="session")
def doubling():
    return doubling_map()


@pytest.fixture(scope="session")
def cat_coboundary():
    return coboundary_generator(ConjugatorField(3, 2, 0.5, 0.3, seed=7), DIAG)


@pytest.fixture(scope="session")
def doubling_coboundary():
    return coboundary_generator(ConjugatorField(3, 1, 0.5, 0.3, seed=3), DIAG)


@pytest.fixture(scope="session")
def diag_constant():
    return constant_generator(np.diag([E ** 2, 1.0, 1.0 / E]))


@pytest.fixture(scope="session")
def cat_spectrum(cat, cat_coboundary):
    x = sample_points(cat, "iid_uniform", 1, 1).points[0]
    return lyapunov_spectrum(cat_coboundary, cat, x, 4096)


@pytest.fixture(scope="session")
def doubling_spectrum(doubling, doubling_coboundary):
    x = sample_points(doubling, "iid_uniform", 1, 5).points[0]
    return lyapunov_spectrum(doubling_coboundary, doubling, x, 2048)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS, key=lambda n: int(n.split()[0][1:])):
        ok, detail = RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
