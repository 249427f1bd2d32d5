import acceptance_log

_RAN: set[int] = set()


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        _RAN.add(marker.args[0])


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.summary_lines(_RAN)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
