import numpy as np
import pytest

from zubov_lbf.system import SystemSpec
from zubov_lbf.transform import BetaFamily

VDP_F = ["-x2", "x1 - (1 - x1^2)*x2"]
VDP_H1 = "1 + 0.25 - ((x1-1)^2+(x2-1)^2)/0.25"
VDP_H2 = "1 + 0.25 - ((x1+1)^2+(x2+1)^2)/0.25"
VDP_ROI = [[-2.5, 2.5], [-3.5, 3.5]]
POWER_F = ["x2", "-0.5*x2-(sin(x1+pi/3)-sin(pi/3))"]


def make_1d(**kw):
    kw.setdefault("lam", 1.0)
    kw.setdefault("beta", BetaFamily("exp", 2.0))
    return SystemSpec.from_strings(["-x1"], ["x1^2"], [[-1.0, 1.0]], **kw)


def make_vdp(obstacles=2, **kw):
    kw.setdefault("lam", 0.1)
    kw.setdefault("beta", BetaFamily("tanh", 0.1))
    return SystemSpec.from_strings(VDP_F, [VDP_H1, VDP_H2][:obstacles], VDP_ROI, **kw)


@pytest.fixture
def sys1d():
    return make_1d()


@pytest.fixture
def vdp2():
    return make_vdp(2)


@pytest.fixture
def vdp1():
    return make_vdp(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion, passed, detail) rows filled in by test_acceptance
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
