import os

import pytest

from gfm_thevenin.analytic import IdvsConfig
from gfm_thevenin.core import rl_from_x_over_r
from gfm_thevenin.emt import GfmPlantModel, build_droop_gfm, build_idvs
from gfm_thevenin.scan import ScanConfig, sweep

WORKERS = max(1, min(8, os.cpu_count() or 1))

_acceptance_lines = []


def record_acceptance(criterion: str, ok: bool, detail: str) -> None:
    _acceptance_lines.append(f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def idvs_048():
    return build_idvs(IdvsConfig(1.0, rl_from_x_over_r(0.48, 10.0)))


@pytest.fixture(scope="session")
def gfm_default():
    return build_droop_gfm(GfmPlantModel())


@pytest.fixture(scope="session")
def coarse_scan():
    return ScanConfig(n_points=8, parallel=WORKERS)


@pytest.fixture(scope="session")
def idvs_spectrum(idvs_048):
    return sweep(idvs_048, ScanConfig(parallel=WORKERS))


@pytest.fixture(scope="session")
def gfm_spectrum(gfm_default):
    return sweep(gfm_default, ScanConfig(parallel=WORKERS))
