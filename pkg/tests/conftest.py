import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: long-running acceptance criteria (still run by default)"
    )


@pytest.fixture(scope="session")
def rng_factory():
    import numpy as np

    def make(seed):
        return np.random.default_rng(seed)

    return make
