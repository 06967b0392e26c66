import pytest

from scorer_helpers import make_examples


@pytest.fixture
def fixture_examples():
    return make_examples()
