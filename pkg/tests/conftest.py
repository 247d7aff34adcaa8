import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("repo")

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Append ``(criterion, passed, detail)`` rows printed in the terminal summary."""
    lines = request.config.stash[_LINES_KEY]

    def report(criterion, passed, detail):
        lines.append(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
