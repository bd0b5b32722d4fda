import pytest

from ger.demo import write_demo_fixtures

import helpers


@pytest.fixture
def zoo_pair():
    return helpers.zoo_pair()


@pytest.fixture
def demo_fixtures(tmp_path):
    """Demo corpus, scripted responses, and config written into tmp_path."""
    return write_demo_fixtures(tmp_path / "fixtures")
