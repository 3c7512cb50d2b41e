import pytest

from evoforge.sim_env import fixture_path, load_env


@pytest.fixture(scope="session")
def paint():
    return load_env(fixture_path("paint-lite"))


@pytest.fixture(scope="session")
def editor():
    return load_env(fixture_path("editor-lite"))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
