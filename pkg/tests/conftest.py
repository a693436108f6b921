import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one line per acceptance check, in order, after the run."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance")
    for number, label, ok in sorted(results):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {label}")
