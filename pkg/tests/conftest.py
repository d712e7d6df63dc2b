import pytest

from fetaprune.experiments import fixture


@pytest.fixture(scope="session")
def small_fixture():
    """Trained [64, 64, 32, 10] net on the shipped synthetic data."""
    return fixture(hidden=(64, 32), seed=0)


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def criterion(request):
    """Record one check of an acceptance criterion: ``criterion(n, ok, detail)``.

    Prints a PASS/FAIL line at once and an aggregated line per criterion in
    the terminal summary.
    """
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.acceptance.setdefault(number, []).append((bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.acceptance
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        checks = results[number]
        ok = all(c[0] for c in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
