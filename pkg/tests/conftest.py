import sys
from pathlib import Path

import pytest

# make the loop-based oracles importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

from rankmotion.phantom import PhantomSpec, generate_phantom  # noqa: E402


def small_spec(**kw) -> PhantomSpec:
    """A 24^3, 4-phase phantom that registers in a couple of seconds."""
    base = dict(
        dims=(24, 24, 24), n_phases=4, amplitude_mm=2.0, hysteresis_mm=0.7,
        tumor_center=(14.0, 12.0, 9.0), tumor_radius=3.0,
        body_center=(12.0, 12.0, 12.0), body_radii=(10.0, 8.0, 10.0),
        lung_center=(12.0, 12.0, 12.0), lung_radii=(7.0, 5.0, 8.0),
        si_center=(12.0, 12.0, 10.0), si_radii=(9.0, 8.0, 9.0),
        ap_center=(12.0, 12.0, 11.0), ap_radii=(8.0, 7.0, 8.0),
    )
    base.update(kw)
    return PhantomSpec(**base)


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom(small_spec())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
