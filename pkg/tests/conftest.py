from pathlib import Path

import numpy as np
import pytest

from crossembody.kinematics import IkParams
from crossembody.retarget import RetargetConfig

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def retarget_cfg():
    return RetargetConfig()


@pytest.fixture(scope="session")
def tight_cfg():
    """Retarget config with tight IK, as used for training data."""
    return RetargetConfig(ik=IkParams(pos_tol=1e-8, rot_tol=1e-8, min_damping=1e-5))


def random_quat(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q
