import numpy as np
import pytest

from tetrodiff.meshgen import Cone, Cube, Cylinder, DomainSpec, RefineConfig, Sphere, build_initial_mesh, refine_to_target

_ACCEPTANCE: list[str] = []


def record(line: str) -> None:
    """Collect one acceptance line; printed now and again in the terminal summary."""
    print(line)
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


SHAPES = {
    "cube": lambda: Cube(),
    "cylinder": lambda: Cylinder(),
    "sphere": lambda: Sphere(),
    "cone": lambda: Cone(),
}


def refined(shape: str = "cube", h0: float = 0.6, layers: int = 3, ring: int = 8):
    mesh = build_initial_mesh(DomainSpec(SHAPES[shape](), layers, ring))
    refine_to_target(mesh, RefineConfig(h0))
    return mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cube_mesh():
    return refined("cube", 0.6)
