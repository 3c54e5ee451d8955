"""Command-line entry point: ``python -m app.cli <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app import config
from app.models.scenario_config import ScenarioConfig
from app.services.network import generate_static_network, save_network_npz, save_network_text
from app.services.scenario_runner import ROC_FILE, roc_from_snapshots, run_scenario, simulate_world
from app.utils.exceptions import ConfigError, RiskNetError

logger = logging.getLogger("app.cli")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _load_config(args) -> ScenarioConfig:
    scenario = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
        update["network"] = scenario.network.model_copy(update={"seed": args.seed})
    if args.replicas is not None:
        update["replicas"] = args.replicas
    if args.workers is not None:
        update["workers"] = args.workers
    if getattr(args, "observations", None):
        if not Path(args.observations).is_file():
            raise ConfigError(f"Observation stream {args.observations} not found")
        update["observation_stream"] = str(args.observations)
    # revalidate so overrides pass the same checks as the file
    return ScenarioConfig.model_validate({**scenario.model_dump(), **update})


def _output_dir(args, scenario: ScenarioConfig) -> Path:
    return Path(args.output) if args.output else Path(config.OUTPUT_DIR) / scenario.name


def cmd_generate_network(args) -> int:
    scenario = _load_config(args)
    out = _output_dir(args, scenario)
    out.mkdir(parents=True, exist_ok=True)
    network = generate_static_network(scenario.network)
    save_network_text(network, out / "network.txt")
    save_network_npz(network, out / "network.npz")
    print(json.dumps(network.summary(), indent=2))
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = _load_config(args)
    daily = simulate_world(scenario, _output_dir(args, scenario))
    print(daily.tail(1).to_string(index=False))
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    scenario = _load_config(args)
    manifest = run_scenario(scenario, _output_dir(args, scenario))
    print(json.dumps({"status": manifest["status"], "config_hash": manifest["config_hash"], "replicas": manifest["replicas"]}, indent=2))
    return EXIT_OK


def cmd_assimilate(args) -> int:
    if not args.observations:
        raise ConfigError("assimilate requires --observations")
    return cmd_run_scenario(args)


def cmd_roc(args) -> int:
    run_dir = Path(args.output) if args.output else None
    if run_dir is None:
        raise ConfigError("roc requires --output pointing at a finished run")
    thresholds = sorted((float(x) for x in args.thresholds.split(",")), reverse=True) if args.thresholds else None
    frame = roc_from_snapshots(run_dir, thresholds)
    target = run_dir / f"recomputed_{ROC_FILE}"
    frame.to_csv(target, index=False)
    print(f"Wrote {len(frame)} ROC points to {target}")
    return EXIT_OK


COMMANDS = {
    "generate-network": (cmd_generate_network, "Generate a static contact network"),
    "simulate": (cmd_simulate, "Run a free-running surrogate world"),
    "assimilate": (cmd_assimilate, "Run a scenario on a recorded observation stream"),
    "run-scenario": (cmd_run_scenario, "Run the full simulation, assimilation and intervention loop"),
    "roc": (cmd_roc, "Recompute ROC points from the snapshots of a finished run"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risknet", description="Epidemic network simulation and risk assimilation")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="ScenarioConfig JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--output", help="Output directory")
        if name == "assimilate":
            p.add_argument("--observations", help="Recorded observation stream CSV")
        if name == "roc":
            p.add_argument("--thresholds", help="Comma-separated classification thresholds")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError, json.JSONDecodeError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except RiskNetError as e:
        logger.error(f"{type(e).__name__}: {e.message} {e.details or ''}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
