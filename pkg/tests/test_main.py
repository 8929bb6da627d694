import pytest
from main import (apply_overrides, create_output_dir, find_config_files, locate_key, parse_input, read_config,
                  run_simulation)
from src.Slicing.slices import ConfigurationError

CONFIG = """
[settings]
experiment = "evaluate"
seed = 5

[network]
num_vues = 10
road_length_m = 400.0
epoch_slots = 50
episode_epochs = 2

[[slices]]
name = "safety"
packet_period = 50
packet_size_bits = 2400
pdr_min = 0.01
pdr_max = 0.10
delay_min = 10
delay_max = 50
share = 0.5
subchannels = [2, 4]
subchannel_bandwidth_hz = [1440000]
selection_window = [30]

[[slices]]
name = "autonomous"
packet_period = 25
packet_size_bits = 1600
pdr_min = 0.005
pdr_max = 0.05
delay_min = 5
delay_max = 25
share = 0.5
subchannels = [2, 3]
subchannel_bandwidth_hz = [1080000]
selection_window = [15, 25]

[evaluate]
scheme = "random"
episodes = 2

[IO]
logName = "cli"
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cli.toml"
    path.write_text(CONFIG)
    return path


@pytest.mark.parametrize("text, key, section, expected", [
    ("a = 1\nb = 2\n", "b", None, 2),
    ("  seed=3", "seed", None, 1),
    ("seeds = 1\nseed = 2", "seed", None, 2),
    ("a = 1", "b", None, None),
    ("a = 1", None, None, None),
    ("[x]\nk = 1\n[y]\nk = 2\n", "k", "y", 4),
    ("[[s]]\nk = 1\n[[s]]\nk = 2\n[t]\nk = 3\n", "k", "s #2", 4),
    ("[[s]]\nk = 1\n[[s]]\nj = 2\n", "k", "s #2", 2),
    ("k = 1\n", "k", "missing", 1),
])
def test_locate_key(text, key, section, expected):
    assert locate_key(text, key, section) == expected


def test_read_config(config_file):
    config = read_config(config_file)
    assert config.experiment == "evaluate"
    assert config.base_dir == config_file.parent


def test_read_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_config(tmp_path / "nothing.toml")


def test_read_config_invalid_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[settings\nseed = 1\n")
    with pytest.raises(ValueError, match="Invalid TOML"):
        read_config(path)


def test_read_config_missing_section(tmp_path):
    path = tmp_path / "no_slices.toml"
    path.write_text("[settings]\nseed = 1\n")
    with pytest.raises(ValueError, match="slices"):
        read_config(path)


def test_read_config_error_names_line(tmp_path):
    path = tmp_path / "bad_value.toml"
    path.write_text(CONFIG.replace("episodes = 2", "episodes = 2\nepisode_count = 3"))
    line = path.read_text().splitlines().index("episode_count = 3") + 1
    with pytest.raises(ConfigurationError, match=f"line {line}") as e:
        read_config(path)
    assert e.value.key == "episode_count"


def test_read_config_error_in_second_slice(tmp_path):
    path = tmp_path / "bad_slice.toml"
    path.write_text(CONFIG.replace("packet_period = 25", "packet_period = \"fast\""))
    line = path.read_text().splitlines().index("packet_period = \"fast\"") + 1
    assert line > path.read_text().splitlines().index("packet_period = 50") + 1
    with pytest.raises(ConfigurationError, match=rf"slices #2.*line {line}\)") as e:
        read_config(path)
    assert e.value.key == "packet_period"
    assert e.value.section == "slices #2"


def test_find_config_files(tmp_path):
    for name in ["b.toml", "a.toml", "notes.txt"]:
        (tmp_path / name).write_text("")
    assert [p.name for p in find_config_files(tmp_path)] == ["a.toml", "b.toml"]
    with pytest.raises(FileNotFoundError):
        find_config_files(tmp_path / "missing")


def test_create_output_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SLICING_OUTPUT_DIR", str(tmp_path / "env"))
    assert create_output_dir("x") == tmp_path / "env"
    explicit = create_output_dir("x", str(tmp_path / "explicit"))
    assert explicit == tmp_path / "explicit"
    assert (explicit / "checkpoints").is_dir()


def test_create_output_dir_default(tmp_path, monkeypatch):
    monkeypatch.delenv("SLICING_OUTPUT_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    assert create_output_dir("run").resolve() == (tmp_path / "output_run").resolve()


def test_parse_input_overrides(config_file):
    args = parse_input(["evaluate", "-c", str(config_file), "--seed", "9", "--workers", "2"])
    config = apply_overrides(read_config(config_file), args)
    assert (config.experiment, config.seed, config.workers) == ("evaluate", 9, 2)


def test_parse_input_keeps_config_values(config_file):
    config = read_config(config_file)
    assert apply_overrides(config, parse_input(["-c", str(config_file)])) is config


@pytest.mark.parametrize("argv", [["-f", "input"], ["--workers", "0"], ["train"]])
def test_parse_input_errors(argv):
    with pytest.raises(SystemExit):
        parse_input(argv)


def test_run_simulation_writes_log_and_manifest(config_file, tmp_path):
    out = tmp_path / "out"
    run_simulation(config_file, parse_input(["-c", str(config_file)]), str(out))
    log = (out / "cli.log").read_text()
    assert "Configuration settings:" in log
    assert "evaluate.scheme: random" in log
    assert (out / "manifest.json").exists()
    assert (out / "episodes_random.csv").exists()


def test_run_simulation_exits_on_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run_simulation(tmp_path / "missing.toml")
    assert e.value.code == 1
    assert "Error:" in capsys.readouterr().out
