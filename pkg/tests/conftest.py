import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from hypothesis import settings

# the first call into a jitted kernel loads it from cache, which blows the default deadline
settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
