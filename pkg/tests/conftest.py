import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from curvtomo import Disc, ForceField, Geometry, Magnetic, Potential  # noqa: E402


def make_geom(b=0.0, phi=None, tau=0.5, inner=None, outer_r=1.0):
    """Disc geometry; ``inner`` gives the source-domain radius inside a disc of ``outer_r``."""
    force = ForceField(phi if phi is not None else Potential.zero(),
                       Magnetic.constant(b) if b else Magnetic.none())
    if inner is None:
        return Geometry(Disc(radius=outer_r), force, tau)
    return Geometry(Disc(radius=inner), force, tau, outer=Disc(radius=outer_r))


@pytest.fixture
def free_disc():
    return make_geom()


@pytest.fixture
def weak_magnetic():
    return make_geom(b=0.2)


@pytest.fixture
def nested_free():
    return make_geom(inner=0.8)


@pytest.fixture
def nested_mixed():
    return make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0, inner=0.8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary so the
# verdicts show up without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
