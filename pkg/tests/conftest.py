import datetime as dt

import pytest

from nowcasting.data import build_triangle
from nowcasting.epi import ModelSpec
from nowcasting.simulate import LeadingIndicator, SimulationConfig, simulate_surveillance


def last_reporting_day(cfg: SimulationConfig) -> dt.date:
    return cfg.calendar.reporting_days(cfg.end - dt.timedelta(days=6), cfg.end)[-1]


@pytest.fixture(scope="session")
def small_sim():
    """Short simulation with one leading indicator (lead 14 days)."""
    cfg = SimulationConfig(
        n_days=56,
        max_delay=10,
        seed=11,
        leading_indicators=[LeadingIndicator("icu", lead=14, ratio=0.8)],
    )
    return simulate_surveillance(cfg)


@pytest.fixture(scope="session")
def small_triangle(small_sim):
    cfg = small_sim.config
    return build_triangle(small_sim.snapshots, last_reporting_day(cfg), cfg.max_delay, cfg.calendar, start=cfg.start)


@pytest.fixture(scope="session")
def specs(small_sim, small_triangle):
    """R, L and RL specs whose window is the whole small triangle."""
    icu = small_sim.indicators["icu"]
    n = small_triangle.n_dates
    common = dict(max_delay=10, window_length=n, breakpoint_spacing=14)
    return {
        "R": ModelSpec("R", **common),
        "L": ModelSpec("L", [icu.replace(lag=14, transform="log")], **common),
        "RL": ModelSpec("RL", [icu.replace(lag=14, transform="relative_weekly_change")], **common),
    }


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one summary line per acceptance criterion, printed at the end of the run."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def report(number: int, status: str, detail: str):
        lines.append(f"criterion {number}: {status}  {detail}")

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
