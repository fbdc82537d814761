import pytest

_VERDICTS: dict[str, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key, title = mark.args
    if report.when == "call" or report.failed:
        reason = ""
        if report.failed and call.excinfo is not None:
            text = str(call.excinfo.value).strip()
            reason = text.splitlines()[0][:160] if text else call.excinfo.typename
        verdict = "PASS" if report.passed else "FAIL"
        if key not in _VERDICTS or verdict == "FAIL":
            _VERDICTS[key] = (verdict, title, reason)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else 0, k)):
        verdict, title, reason = _VERDICTS[key]
        line = f"criterion {key:>5}: {verdict}  {title}"
        if reason:
            line += f"  ({reason})"
        terminalreporter.write_line(line)
