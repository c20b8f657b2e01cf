import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def counts_cache():
    """Enumerations shared across test modules, keyed by (d, n_max, torus)."""
    from sawlab.enumeration import count_saws
    store = {}

    def get(d, n_max, torus=None):
        key = (d, n_max, torus)
        if key not in store:
            store[key] = count_saws(d, n_max, torus=torus)
        return store[key]
    return get
