"""Shared groups and surfaces for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from carnotgeo.algebra import heisenberg
from carnotgeo.surface import Region, Surface, SurfaceSpec

KORANYI_EXPR = "(x1^2+x2^2)^2+16*x3^2-1"
KORANYI_BOX = ((-1.2, 1.2), (-1.2, 1.2), (-0.4, 0.4))
ELLIPSOID_EXPR = "x1^2+x2^2+x3^2+x4^2+4*x5^2-1"
ELLIPSOID_BOX = ((-1.1, 1.1),) * 4 + ((-0.6, 0.6),)
# superellipse |x2|^4 + |x3/(1/4)|^2 <= 1 is the Koranyi unit ball traced on the plane x1 = 0
PLANE_BALL_REGION = Region((0.0, 0.0), (1.0, 0.25), (4.0, 2.0))


def unit_patch(grid=128) -> Surface:
    return Surface(heisenberg(1), SurfaceSpec("graph", "0", (grid, grid), axis=0, domain=((0.0, 1.0), (0.0, 1.0))))


def plane_ball(grid=64) -> Surface:
    return Surface(heisenberg(1), SurfaceSpec("graph", "0", (grid, grid), axis=0, region=PLANE_BALL_REGION))


def koranyi_sphere(grid=64) -> Surface:
    return Surface(heisenberg(1), SurfaceSpec("levelset", KORANYI_EXPR, (grid, grid), box=KORANYI_BOX))


def ellipsoid_h2(grid=12) -> Surface:
    return Surface(heisenberg(2), SurfaceSpec("levelset", ELLIPSOID_EXPR, (grid,) * 4, box=ELLIPSOID_BOX))


def paraboloid(a=0.5, grid=64, radius=1.0) -> Surface:
    region = Region((0.0, 0.0), (radius, radius), (2.0, 2.0))
    return Surface(heisenberg(1), SurfaceSpec("graph", f"{a}*(x1^2+x2^2)", (grid, grid), axis=2, region=region))


def curved_graph(grid=64) -> Surface:
    """A t-graph over a box away from its characteristic points with nonzero H_H."""
    expr = "0.3*x1^2+0.5*x2^2+0.1*x1*x2+0.2*x1^3"
    return Surface(heisenberg(1), SurfaceSpec("graph", expr, (grid, grid), axis=2, domain=((0.2, 1.0), (0.1, 0.9))))


@pytest.fixture(scope="session")
def h1():
    return heisenberg(1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    """Store one PASS/FAIL line for the terminal summary and return ``passed``."""
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].lstrip("C").rstrip(":"))):
            terminalreporter.write_line(line)
