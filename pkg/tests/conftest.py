import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sfda.spline import GroupSample

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_sample(rng, n_subjects=8, max_obs=4, group=1, ties=False):
    """Small random group with 1..max_obs observations per subject."""
    counts = rng.integers(1, max_obs + 1, n_subjects)
    subject = np.repeat(np.arange(n_subjects), counts)
    t = rng.uniform(0.0, 1.0, subject.size)
    if ties:
        t = np.round(t, 1)
    y = np.sin(2 * np.pi * t) + rng.normal(0.0, 0.3, t.size)
    return GroupSample(t=t, y=y, subject=subject, subject_ids=tuple(range(n_subjects)), group=group)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
