import sys

import pytest

from spiderkit.politeness import ClientIdentity, PoliteClient, PolitenessConfig
from spiderkit.testbed import FixtureScript, HttpFixture
from spiderkit.transport import ClientConfig, HttpClient

IDENTITY = ClientIdentity("spiderkit-test/1.0", "tester@example.org")


def polite(min_delay=0.001, retry_wait=0.01, max_retries=2, timeout=5.0, **kw):
    config = PolitenessConfig(min_delay=min_delay, retry_wait=retry_wait,
                              max_retries=max_retries, **kw)
    return PoliteClient(config, IDENTITY, HttpClient(ClientConfig(timeout=timeout)))


@pytest.fixture
def serve():
    """Start fixtures for a test and stop them afterwards."""
    started = []

    def start(script=None, **kw):
        fx = HttpFixture(script or FixtureScript(), **kw).start()
        started.append(fx)
        return fx

    yield start
    for fx in started:
        fx.stop()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
