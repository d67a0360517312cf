import numpy as np
import pytest

from tnstokes.assembly import assemble_static
from tnstokes.dynamics import Stepper, StepperConfig
from tnstokes.fem import GradientDiscretisation, zero_field
from tnstokes.mesh import build_uniform
from tnstokes.presets import preset_fields, vortex
from tnstokes.rheology import RheologyParams


@pytest.fixture(scope="session")
def gd5():
    return GradientDiscretisation(build_uniform(5, 5))


@pytest.fixture(scope="session")
def gd9():
    return GradientDiscretisation(build_uniform(9, 9))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_stepper(gd, preset="exp1", p=2.0, tau=2.0 ** -5, N=32, stochastic=True,
                 zero_force=False, zero_lift=False, check_energy=False):
    """Stepper for a preset, optionally with F and/or g switched off."""
    data = preset_fields(preset, stochastic)
    F = zero_field() if zero_force else data.F
    g = zero_field() if zero_lift else data.g
    forms = assemble_static(gd, data.sigma, gd.interpolate(g, constrained=True), F)
    cfg = StepperConfig(tau, N, RheologyParams(p, 0.1), check_energy=check_energy)
    return Stepper(gd, forms, cfg), data


def trivial_bc_stepper(gd, p, tau=2.0 ** -5, N=32):
    """g = 0, F = 0 and the vortex noise coefficient; v_in is the vortex."""
    forms = assemble_static(gd, vortex(), None, zero_field())
    return Stepper(gd, forms, StepperConfig(tau, N, RheologyParams(p, 0.1))), vortex()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def report(number, title, ok, detail):
    line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
