import numpy as np
import pytest

from windcorrect.datagen import BiasProfile, FarmConfig, generate_farm
from windcorrect.sampler import FeatureContext, assign_days, build_samples, partition, split_monthly


@pytest.fixture(scope="session")
def small_farm():
    cfg = FarmConfig(n_turbines=2, start_time="2021-04-01T00:00:00Z", duration_days=61, rng_seed=11)
    bias = BiasProfile(diurnal_amplitude_ms=2.0, noise_std_ms=0.5)
    return generate_farm(cfg, bias)


@pytest.fixture(scope="session")
def small_samples(small_farm):
    """Samples of turbine T01 split into (train, validation, test)."""
    samples = build_samples(small_farm.nwp, small_farm.scada["T01"], FeatureContext())
    split = split_monthly(samples, 0)
    return tuple(partition(samples, split, p) for p in ("train", "validation", "test"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
