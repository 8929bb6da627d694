import math
import pytest
from src.Slicing.channel import ChannelParams
from src.Slicing.scenario import Scenario, SpsParams
from src.Slicing.slices import SliceGrid, SliceSpec


def make_scenario(num_vues=10, epoch_slots=100, episode_epochs=3, **kwargs):
    """Two light slices on a short ring, small enough for unit tests."""
    slices = (
        SliceSpec(0, "safety", packet_period=50, packet_size=2400, pdr_min=0.01, pdr_max=0.10,
                  delay_min=10, delay_max=50, alpha=(1.0, 2.0), share=0.5),
        SliceSpec(1, "autonomous", packet_period=25, packet_size=1600, pdr_min=0.005, pdr_max=0.05,
                  delay_min=5, delay_max=25, alpha=(1.0, 3.0), share=0.5),
    )
    grids = (
        SliceGrid((2, 4), (1_440_000,), (30,)),
        SliceGrid((2, 3), (1_080_000,), (15, 25)),
    )
    options = dict(num_vues=num_vues, road_length_m=400.0, epoch_slots=epoch_slots, episode_epochs=episode_epochs,
                   sps=SpsParams(sensing_window=50))
    options.update(kwargs)
    return Scenario(slices=slices, grids=grids, **options)


@pytest.fixture
def small_scenario():
    return make_scenario()


@pytest.fixture
def flat_channel():
    return ChannelParams(rician_k=math.inf, shadowing_sigma=0.0)
