import math
import pytest
import numpy as np
from src.Slicing.scenario import (Scenario, SpsParams, component_rng, config_value, derive_seed, scenario_from_dict,
                                  freeway_scenario)
from src.Slicing.slices import ConfigurationError, build_action_space


def slice_table(**overrides):
    table = {"name": "safety", "packet_period": 50, "packet_size_bits": 2400, "pdr_min": 0.01, "pdr_max": 0.1,
             "delay_min": 10, "delay_max": 50, "share": 1.0, "subchannels": [2, 3],
             "subchannel_bandwidth_hz": [1440000], "selection_window": [30]}
    table.update(overrides)
    return table


def test_defaults_from_minimal_config():
    scenario = scenario_from_dict({"slices": [slice_table()]})
    assert scenario.num_vues == 100
    assert scenario.road_length_m == 3400.0
    assert scenario.epoch_slots == 400
    assert scenario.sps.p_res == 0.2
    assert scenario.sps.candidate_fraction == 0.2
    assert scenario.slices[0].delay_max == 50.0
    assert scenario.grids[0].subchannels == (2, 3)


def test_network_and_channel_tables():
    config = {
        "network": {"num_vues": 24, "activity": 0.8, "epoch_slots": 200, "max_vues": 60},
        "channel": {"rician_k": math.inf, "shadowing_sigma_db": 0, "pathloss": [20, 40, 40, 10, 10]},
        "sps": {"p_res": 1, "counter_min": 1, "counter_max": 1},
        "slices": [slice_table()],
    }
    scenario = scenario_from_dict(config)
    assert scenario.num_vehicles == 30
    assert math.isinf(scenario.channel.rician_k)
    assert scenario.channel.pathloss == (20.0, 40.0, 40.0, 10.0, 10.0)
    assert scenario.sps.p_res == 1.0
    assert scenario.norm.max_vues == 60


def test_missing_slice_key_names_it():
    table = slice_table()
    del table["packet_period"]
    with pytest.raises(ConfigurationError) as e:
        scenario_from_dict({"slices": [table]})
    assert e.value.key == "packet_period"
    assert "packet_period" in str(e.value)


def test_wrong_type_names_key():
    with pytest.raises(ConfigurationError) as e:
        scenario_from_dict({"network": {"num_vues": "many"}, "slices": [slice_table()]})
    assert e.value.key == "num_vues"


def test_missing_slices_section():
    with pytest.raises(ConfigurationError):
        scenario_from_dict({"network": {}})


@pytest.mark.parametrize("network", [{"activity": 0.0}, {"activity_persistence": 1.0}, {"epoch_slots": 0},
                                     {"queue_limit": 0}, {"num_vues": -1}])
def test_infeasible_network_values(network):
    with pytest.raises(ConfigurationError):
        scenario_from_dict({"network": network, "slices": [slice_table()]})


def test_selection_window_must_fit_in_an_epoch():
    with pytest.raises(ConfigurationError) as e:
        scenario_from_dict({"network": {"epoch_slots": 30}, "slices": [slice_table()]})
    assert e.value.key == "selection_window"
    assert scenario_from_dict({"network": {"epoch_slots": 31}, "slices": [slice_table()]}).epoch_slots == 31


def test_shares_must_sum_to_one():
    with pytest.raises(ConfigurationError):
        scenario_from_dict({"slices": [slice_table(share=0.4), slice_table(name="b", share=0.4)]})


@pytest.mark.parametrize("kwargs", [dict(p_res=1.5), dict(counter_min=0), dict(counter_min=6, counter_max=5),
                                    dict(candidate_fraction=0.0), dict(sensing_window=0)])
def test_sps_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SpsParams(**kwargs)


def test_config_value_accepts_int_for_float():
    assert config_value({"x": 3}, "x", 1.0, float, "t") == 3.0
    assert isinstance(config_value({"x": 3}, "x", 1.0, float, "t"), float)


def test_component_rng_is_named_and_stable():
    a = component_rng(5, "placement").random(4)
    b = component_rng(5, "placement").random(4)
    c = component_rng(5, "fading").random(4)
    d = component_rng(6, "placement").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_derive_seed():
    assert derive_seed(3, "evaluate/0") == derive_seed(3, "evaluate/0")
    assert derive_seed(3, "evaluate/0") != derive_seed(3, "evaluate/1")
    assert 0 <= derive_seed(3, "x") < 2 ** 31


def test_freeway_scenario():
    scenario = freeway_scenario()
    assert scenario.num_slices == 2
    assert len(build_action_space(scenario.grids, scenario.total_bandwidth_hz)) == 88


def test_with_vues_keeps_everything_else(small_scenario):
    bigger = small_scenario.with_vues(40)
    assert bigger.num_vues == 40
    assert bigger.slices == small_scenario.slices
    assert isinstance(bigger, Scenario)


def test_norm_defaults_to_twice_population(small_scenario):
    assert small_scenario.norm.max_vues == 2 * small_scenario.num_vehicles
