import pytest

from regait.crawler import CrawlerParams, reference_gait


@pytest.fixture(scope="session")
def cparams() -> CrawlerParams:
    return CrawlerParams()


@pytest.fixture(scope="session")
def gait(cparams):
    # One period at the default resolution; shared read-only across tests.
    return reference_gait(cparams)
