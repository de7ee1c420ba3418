import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, title, detail = verdicts[n]
        terminalreporter.write_line(f"AC{n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
