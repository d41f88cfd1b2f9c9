import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from geodiag.synth import SceneConfig, sample_scene

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def default_scene(seed: int):
    return sample_scene(SceneConfig(seed=seed), scene_id=f"{seed:05d}")


@pytest.fixture(scope="session")
def scenes():
    """Default-config scenes by seed, built once per session."""

    def get(n, start=0):
        return [default_scene(i) for i in range(start, start + n)]

    return get


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
