import pytest
import torch
from hypothesis import settings

from vesselcast.forecaster import ForecastModel, ModelConfig
from vesselcast.pipeline import group_voyages, process_voyages
from vesselcast.synth import SyntheticFleetSpec, generate_fleet
from vesselcast.windowing import fit_scaler

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_fleet_segments():
    spec = SyntheticFleetSpec(vessels=8, duration_s=6 * 3600.0, seed=11)
    fleet = generate_fleet(spec)
    outs = process_voyages(group_voyages(fleet.records()))
    return [s for o in outs for s in o.segments]


@pytest.fixture
def toy_config():
    return ModelConfig(w_in=30, horizon=30, d_model=16, encoder_layers=1, heads=2, d_ff=32, dropout=0.1)


@pytest.fixture
def toy_model(small_fleet_segments, toy_config):
    return ForecastModel.create(toy_config, fit_scaler(small_fleet_segments))


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)

