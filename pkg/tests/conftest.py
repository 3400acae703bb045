"""Shared pytest hooks: a one-line verdict per acceptance criterion."""

ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}: {detail}")
