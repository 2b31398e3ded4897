from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_settings(rng, n, f_range=(0.0, 5.0), tau_range=(0.0, 5.0)):
    from gbsense.quantum import PulseSettings

    return [
        PulseSettings(rng.uniform(*tau_range), rng.uniform(0, 2 * math.pi), rng.uniform(*f_range))
        for _ in range(n)
    ]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed again in the run summary."""

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
