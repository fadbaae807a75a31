import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def heavy_cache():
    from erwlab import suites
    return suites.cache_dir()


GATE_LINES: list[str] = []


@pytest.fixture
def gate():
    """Record one pass/fail line per acceptance criterion."""
    def record(num: int, title: str, passed, detail: str = ""):
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[None if passed is None else bool(passed)]
        line = f"[{num:02d}] {title}: {verdict}" + (f" ({detail})" if detail else "")
        GATE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in sorted(GATE_LINES):
            terminalreporter.write_line(line)
