import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    class Recorder:
        def __init__(self):
            self.number = None
            self.detail = ""

        def __call__(self, number, detail):
            self.number, self.detail = number, detail

    rec = Recorder()
    yield rec
    if rec.number is not None:
        report = getattr(request.node, "rep_call", None)
        ok = report is not None and report.passed
        line = f"criterion {rec.number}: {'PASS' if ok else 'FAIL'}  {rec.detail}"
        _ACCEPTANCE[rec.number] = line
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
