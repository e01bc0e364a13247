from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sphere_scene(kd=(0.6, 0.5, 0.4), roughness=0.5, metalness=0.0, probe=None):
    from mcinverse import fixtures
    from mcinverse.render import Scene
    s = fixtures.uv_sphere(16, 8)
    return Scene(s, fixtures.materials(kd, roughness, metalness, size=4),
                 probe or fixtures.sky_probe(8, 16, sun_power=5.0, sun_width=0.4))


@pytest.fixture
def small_scene():
    return sphere_scene()


@pytest.fixture
def small_camera():
    from mcinverse import fixtures
    return fixtures.orbit(1, 3.0, 20.0, 12)[0]


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _report(number, name, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
