import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Print and record one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} | {detail}"
        request.config._acceptance_lines.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
