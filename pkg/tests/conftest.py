import pytest

from htnlearn.curricula import curricugen
from htnlearn.generators import blocks_domain, tower4_problem, logistics_domain
from htnlearn.ground import Grounding
from htnlearn.learn import MethodLibrary
from htnlearn.pipeline import learn_problem

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def blocks():
    return blocks_domain()


@pytest.fixture(scope="session")
def logistics():
    return logistics_domain()


@pytest.fixture(scope="session")
def tower4():
    return tower4_problem()


@pytest.fixture(scope="session")
def tower4_grounding(blocks, tower4):
    return Grounding(blocks, tower4)


@pytest.fixture(scope="session")
def tower4_gen(blocks, tower4):
    return curricugen(blocks, tower4)


@pytest.fixture()
def tower4_learned(blocks, tower4):
    lib = MethodLibrary()
    return lib, learn_problem(blocks, tower4, lib)

