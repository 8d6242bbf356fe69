"""Session-wide bookkeeping: every sigmoid volume transform is checked, and
acceptance results are summarised at the end of the run."""
import pytest

from neurotopo import density

ACCEPTANCE = {}
VOLUME = {"calls": 0, "max_rel": 0.0}

_sigma_transform = density.sigma_transform


def _tracked_sigma_transform(x, V0):
    t = _sigma_transform(x, V0)
    VOLUME["calls"] += 1
    VOLUME["max_rel"] = max(VOLUME["max_rel"], t.volume_error / t.x.size)
    return t


density.sigma_transform = _tracked_sigma_transform


@pytest.fixture
def acceptance_log():
    def log(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return log


@pytest.fixture
def volume_stats():
    return VOLUME


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if ACCEPTANCE:
        tr.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    tr.write_line(f"volume transforms this session: {VOLUME['calls']}, "
                  f"max |sum(y) - V0| / N = {VOLUME['max_rel']:.3e}")
