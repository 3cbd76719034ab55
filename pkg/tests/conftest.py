import pytest
from hypothesis import HealthCheck, settings

from dusc import crypto
from dusc.protocol import OwnerKeys
from helpers import key

settings.register_profile(
    "dusc", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dusc")


@pytest.fixture
def source():
    return key("source")


@pytest.fixture
def requester():
    return key("requester")


@pytest.fixture
def owner():
    return OwnerKeys.generate(crypto.seed_from_label("tests", "owner"))


@pytest.fixture
def stranger():
    return key("stranger")
