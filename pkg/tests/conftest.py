"""
Shared pytest configuration
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: exhaustive checks that take tens of seconds (deselect with -m 'not slow')")
