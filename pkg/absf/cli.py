import argparse
import logging
import os
import sys

from absf import __version__
from absf.errors import AbsfError
from absf.harness import analyze, load_scenario, optimize, run_suite, validate

logger = logging.getLogger("absf")


def configure_logging():
    level = os.environ.get("ABSF_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format='%(asctime)s - %(levelname)s - %(message)s')


def build_parser():
    parser = argparse.ArgumentParser(prog="absf", description="ABS orchestration lab with mmWave D2D relay groups")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "per-state throughput tables, per-cell figures and relay gain"),
        ("optimize", "state probabilities and ABS pattern for a policy"),
        ("simulate", "run every (policy, seed) pair of the scenario"),
        ("validate", "analytical vs simulated per-state throughput"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="scenario file (.toml or .json)")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, help="override the scenario seeds with a single seed")
        cmd.add_argument("--policy", action="append", help="override the scenario policies (repeatable)")
    return parser


def _apply_overrides(scenario, args):
    update = {}
    if args.seed is not None:
        update["seeds"] = [args.seed]
    if args.policy:
        update["policies"] = list(args.policy)
    if not update:
        return scenario
    return scenario.model_validate({**scenario.model_dump(), **update})


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        scenario = _apply_overrides(load_scenario(args.config), args)
        if args.command == "analyze":
            analyze(scenario, args.out)
        elif args.command == "optimize":
            for policy in scenario.policies:
                out = args.out if len(scenario.policies) == 1 else os.path.join(args.out, policy.replace(":", "_").replace("/", "-"))
                optimize(scenario, out, policy)
        elif args.command == "simulate":
            result = run_suite(scenario, args.out)
            print(result.pooled.to_string(index=False))
            if not result.ok:
                logger.error(f"{len(result.failures)} run(s) failed; see {os.path.join(args.out, 'manifest.json')}")
                return 1
        elif args.command == "validate":
            df = validate(scenario, args.out)
            print(df.to_string(index=False))
    except AbsfError as e:
        logger.error(str(e))
        return 2
    except ValueError as e:
        # pydantic re-validation of CLI overrides
        logger.error(f"Invalid override: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
