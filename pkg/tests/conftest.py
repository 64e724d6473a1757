import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spod_mini(tmp_path_factory):
    """The packaged SPOD-mini recipe generated once per session."""
    from hyperspod.config import packaged_config
    from hyperspod.scenesynth import generate_dataset, load_recipe

    out = tmp_path_factory.mktemp("spod-mini")
    manifest = generate_dataset(load_recipe(packaged_config("spod-mini")), out)
    return out, manifest


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
