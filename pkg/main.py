from src.Slicing.experiments import EXPERIMENTS, experiment_config_from_dict, resolved_config, run_experiment
from src.Slicing.slices import ConfigurationError
from dataclasses import replace
from pathlib import Path
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import logging
import argparse
import os
import re

OUTPUT_DIR_ENV = "SLICING_OUTPUT_DIR"
HEADER = re.compile(r"^\s*\[\[?\s*([^\[\]]+?)\s*\]\]?\s*(#.*)?$")


def locate_key(text, key, section=None):
    """
    Finds the line a key is assigned on.
    Args:
        text (str): the configuration file contents.
        key (str): the key, as written left of '='.
        section (str): table to search, "slices #2" for the second [[slices]] table.
            The whole file is searched when it is None or the table is not in the file.
    Returns:
        int | None: 1-based line number of the first assignment, None if the key is absent.
    """
    if not key:
        return None
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    lines = text.splitlines()
    if section:
        name, _, number = section.partition(" #")
        wanted = int(number) if number else 1
        seen, inside = 0, False
        for index, line in enumerate(lines, start=1):
            header = HEADER.match(line)
            if header:
                inside = header.group(1) == name
                seen += inside
                continue
            if inside and seen == wanted and pattern.match(line):
                return index
    for index, line in enumerate(lines, start=1):
        if pattern.match(line):
            return index
    return None


def read_config(filename):
    """
    Reads and validates a configuration file for an experiment.
    Args:
        filename (str): The path to the configuration file.
    Raises:
        FileNotFoundError: If the configuration file does not exist.
        ValueError: If the file is not valid TOML, a section is missing, or a value is rejected
            (ConfigurationError, with the line of the offending key when it is in the file).
    Returns:
        ExperimentConfig: the validated configuration.
    """
    if not Path(filename).exists():
        raise FileNotFoundError(f"Config file not found: {filename}")

    # Relative checkpoint and result paths resolve against the config file's directory
    config_dir = os.path.dirname(os.path.abspath(filename))
    text = Path(filename).read_text()

    try:
        config_dict = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ValueError(f"Invalid TOML in {filename}: {e}") from e

    required_sections = ['settings', 'slices']
    for section in required_sections:
        if section not in config_dict:
            raise ValueError(f"Missing required section: {section}")

    try:
        return experiment_config_from_dict(config_dict, base_dir=config_dir)
    except ConfigurationError as e:
        line = locate_key(text, e.key, e.section)
        where = f" ({filename}, line {line})" if line else f" ({filename})"
        raise ConfigurationError(f"{e}{where}", key=e.key, section=e.section) from e


def find_config_files(folder = None):
    """
    Find all .toml files in the specified folder
    Args:
        folder (str): Folder to search for .toml files
    Returns:
        List of Path objects for each .toml file found, sorted by name
    """
    search_path = Path(folder) if folder else Path.cwd()
    if not search_path.exists():
        raise FileNotFoundError(f"Folder not found: {search_path}")

    return sorted(search_path.glob("*.toml"))


def create_output_dir(logName, output_dir = None):
    """
    Creates the output directory with a subdirectory for checkpoints.
    Args:
        logName (str): The name to be used in the output directory's name.
        output_dir (str): Explicit directory; defaults to $SLICING_OUTPUT_DIR, then ./output_{logName}.
    Returns:
        Path: The path to output directory.
    """
    output_dir = output_dir or os.environ.get(OUTPUT_DIR_ENV)
    outputdir = Path(output_dir) if output_dir else Path(f"./output_{logName}")
    outputdir.mkdir(parents=True, exist_ok=True)
    (outputdir / 'checkpoints').mkdir(exist_ok=True)
    return outputdir


def parse_input(argv = None):
    """
    parse arguments with options:
    - `experiment`: Optional experiment name, overrides [settings] experiment.
    - `-c` or `--config_file`: Path to the config file (default "input.toml").
    - `-o` or `--output_dir`: Output directory (default $SLICING_OUTPUT_DIR, then ./output_{logName}).
    - `--seed`: Master seed, overrides [settings] seed.
    - `--workers`: Worker processes for the density sweep.
    - `--find_all`: Find and run all config files in the main folder.
    - `-f` or `--folder`: Specify the folder to search for config files (requires `--find_all`).
    Returns:
        argparse.Namespace: Parsed command-line arguments.
    Raises:
        ArgumentError: If `-f` is provided without `--find_all`.
    """
    parser = argparse.ArgumentParser("Run network slicing experiments")

    # Get the directory where this script is located
    script_dir = os.path.dirname(os.path.abspath(__file__))
    default_config = os.path.join(script_dir, "input.toml")

    parser.add_argument("experiment", nargs="?", choices=EXPERIMENTS, help="Experiment to run")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("-c", "--config_file", default=default_config, help="Path to config file")
    parser.add_argument("-o", "--output_dir", help="Output directory")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--workers", type=int, help="Worker processes for the density sweep")
    parser.add_argument("--find_all", action="store_true", help="Find and run all config files in main folder")
    parser.add_argument("-f", "--folder", help="Specify folder to search for config files")

    args = parser.parse_args(argv)
    if args.folder and not args.find_all:
        parser.error("-f requires --find_all")
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be >= 1")

    return args


def apply_overrides(config, args):
    """Replaces the experiment, seed and worker count with the ones given on the command line."""
    overrides = {}
    if getattr(args, "experiment", None):
        overrides["experiment"] = args.experiment
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return replace(config, **overrides) if overrides else config


def _flatten(prefix, value):
    if isinstance(value, dict):
        for key, item in value.items():
            yield from _flatten(f"{prefix}.{key}" if prefix else key, item)
    else:
        yield prefix, value


def run_simulation(config_file, args = None, output_dir = None):
    """
    Runs the experiment of one configuration file.
    Args:
        config_file (str): Path to the configuration file.
        args (argparse.Namespace): command-line overrides.
        output_dir (str): output directory, see create_output_dir.
    Raises:
        SystemExit: With status 1 if any error occurs.
    """
    try:
        config = apply_overrides(read_config(config_file), args)
        print(f"Creating output directory for {config.log_name}...")
        outputdir = create_output_dir(config.log_name, output_dir)

        logging.root.handlers.clear() # CLEAR HANDLER FOR NEW LOGGING FILE FOR NEXT CONFIG
        logger = logging.getLogger()
        handler = logging.FileHandler(outputdir / f"{config.log_name}.log", mode='w')
        formatter = logging.Formatter('%(asctime)s- %(levelname)s - %(message)s', datefmt="%H:%M:%S")
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)

        string = "Configuration settings:"
        for key, value in _flatten("", resolved_config(config)):
            if value is not None:
                string += (f"\n\t{key}: {value}")
        logging.info(string)

        print(f"Running {config.experiment} with seed {config.seed}...")
        files = run_experiment(config, outputdir)
        logging.info(f"Wrote {len(files)} file(s) to {outputdir}")
        print(f"Wrote {len(files)} file(s) to {outputdir}")

    except Exception as e:
        print(f"Error: {str(e)}")
        exit(1)


if __name__ == "__main__":
    args = parse_input()
    try:
        if args.find_all:
            config_files = find_config_files(args.folder)
            if not config_files:
                print(f"No config files found in {args.folder or 'current directory'}")

            print(f"Found {len(config_files)} config file(s)")
            base = args.output_dir or os.environ.get(OUTPUT_DIR_ENV)
            for config_file in config_files:
                print(f"\nProcessing {config_file.name}")
                run_simulation(config_file, args, str(Path(base) / config_file.stem) if base else None)
            print(f"\nCompleted {len(config_files)} experiments")

        else:
            config_path = Path(args.config_file)
            print(f"\nProcessing {args.config_file}")
            run_simulation(config_path, args, args.output_dir)
            print(f"\nCompleted experiment for {args.config_file}")

    except Exception as e:
        print(f"Error: {str(e)}")
        exit(1)
