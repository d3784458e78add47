import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None) and not _ran_acceptance(terminalreporter):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)


def _ran_acceptance(reporter):
    return any("test_acceptance" in r.nodeid for key in ("passed", "failed", "skipped")
               for r in reporter.stats.get(key, []))
