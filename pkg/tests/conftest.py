import numpy as np
import pytest

from d2dnet.model import NetworkParams, dbm_to_watts
from d2dnet.sim import SimulationConfig, run_campaign

THETA_DB = np.arange(-10, 21, 2)
THETA = 10.0 ** (THETA_DB / 10.0)


@pytest.fixture
def defaults():
    return NetworkParams()


_CAMPAIGNS = {}


def campaign(cutoff_dbm=-70.0, bias=1.0, realizations=2000, seed=20240601, laplace_points=None):
    """Cached Monte Carlo campaign; the acceptance and simulator tests share runs."""
    key = (cutoff_dbm, bias, realizations, seed, None if laplace_points is None else tuple(laplace_points))
    if key not in _CAMPAIGNS:
        params = NetworkParams(cutoff_threshold=dbm_to_watts(cutoff_dbm), bias=bias)
        config = SimulationConfig(num_realizations=realizations, rng_seed=seed)
        _CAMPAIGNS[key] = (params, run_campaign(params, config, THETA, laplace_points))
    return _CAMPAIGNS[key]


CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance verdict; a criterion fails if any of its parts fail."""
    previous = CRITERIA.get(number)
    if previous is not None:
        ok = ok and previous[0]
        detail = previous[1] + "; " + detail
    CRITERIA[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
