import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, ok, detail in sorted(results):
        verdict = "PASS" if ok else "FAIL"
        line = f"ACCEPTANCE {num} {verdict} {label}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
