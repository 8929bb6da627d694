from src.Slicing.scenario import Scenario, scenario_from_dict, freeway_scenario
from src.Slicing.Simulator import Simulator
from src.Slicing.environment import SlicingEnv
from src.Slicing.experiments import ExperimentConfig, experiment_config_from_dict, run_experiment
