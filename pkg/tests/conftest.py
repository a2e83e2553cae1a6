def pytest_terminal_summary(terminalreporter):
    """Echo the per-criterion verdict lines collected by the acceptance run."""
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
