"""Command-line entry point: data generation, index building, recommendation and experiments."""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from app.config import ExperimentConfig, get_settings, load_experiment_config
from app.errors import ConfigError, GuardViolationError, OfferSetError
from app.log import configure_logging, get_logger
from app.models.embedding import (
    ItemUniverse,
    UserMixture,
    load_items,
    load_items_csv,
    load_mixture_csv,
    save_items,
    save_mixture_csv,
)
from app.models.enums import SyntheticLaw
from app.schemas import ExperimentReport, PruneConfig
from app.services.choice import TruncatedMnl
from app.services.experiments import (
    plan_for,
    reference_inner_product,
    run_benchmark,
    run_figure2,
    run_scaling,
    tmnl_params,
)
from app.services.index_store import load_index, persist_index
from app.services.lsh import derive_seed
from app.services.lss import build_lss
from app.services.optimizer import build_ensemble, recommend
from app.services.oracle import exhaustive_opt
from app.services.report_writer import write_gnuplot_script, write_report
from app.services.synthetic import gen_synthetic

logger = get_logger("cli")

EXIT_OK = 0
EXIT_FAILURE = 1


def _config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Dict[str, Any]] = {}
    if args.seed is not None:
        overrides["experiment"] = {"seed": args.seed}
    return load_experiment_config(args.config, **overrides)


def _read_items(path: str) -> ItemUniverse:
    if Path(path).suffix.lower() == ".csv":
        return load_items_csv(path)
    with open(path, "rb") as f:
        return load_items(f)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _write(report: ExperimentReport, out: Optional[str]) -> None:
    write_report(report.frame, report.header, out if out else sys.stdout)


# ============= Subcommands =============

def cmd_gen(args: argparse.Namespace) -> int:
    config = _config(args)
    section = config.universe
    universe, types = gen_synthetic(
        args.n or section.n,
        args.d or section.d,
        config.experiment.seed,
        SyntheticLaw(args.law or section.law),
        section.clusters,
        section.cluster_spread,
    )
    with open(args.out, "wb") as f:
        save_items(universe, f)
    types_out = args.types_out or str(Path(args.out).with_suffix(".types.csv"))
    save_mixture_csv(types, types_out)
    logger.info("generated", items=args.out, types=types_out, n=universe.n, d=universe.d)
    return EXIT_OK


def cmd_build_index(args: argparse.Namespace) -> int:
    config = _config(args)
    universe = _read_items(args.items)
    decay = TruncatedMnl(tmnl_params(config.model)).decay()
    plan = plan_for(config, decay, universe.n)
    index = build_lss(universe, plan, config.experiment.seed)
    persist_index(index, args.out)
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    index = load_index(args.index)
    mixture = load_mixture_csv(args.types)
    if not 0 <= args.row < mixture.m:
        raise ConfigError(f"--row {args.row} outside the {mixture.m} types of {args.types}")
    found = sorted(index.query(mixture.types[args.row], post_filter=args.post_filter))
    _emit("".join(f"{item}\n" for item in found), args.out)
    return EXIT_OK


def cmd_recommend(args: argparse.Namespace) -> int:
    config = _config(args)
    universe = _read_items(args.items)
    mixture = load_mixture_csv(args.types)
    seed = config.experiment.seed
    reference = reference_inner_product(universe, [mixture])
    model = TruncatedMnl(tmnl_params(config.model, reference_inner=reference))
    plan = plan_for(config, model.decay(), universe.n)

    prune = config.prune
    s = prune.s_override or prune.samples_per_k * prune.k
    ensemble = build_ensemble(universe, plan, s, seed)
    result = recommend(
        ensemble,
        mixture,
        prune.k,
        PruneConfig(
            epsilon1=prune.epsilon1,
            epsilon2=prune.epsilon2,
            sampling_floor=prune.sampling_floor,
            s_override=s,
        ),
        model,
        universe,
        rng=np.random.default_rng(derive_seed(seed, 1)),
        lazy=prune.lazy,
        post_filter=config.plan.post_filter,
    )
    _emit(result.model_dump_json(indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_exact(args: argparse.Namespace) -> int:
    config = _config(args)
    universe = _read_items(args.items)
    mixture: UserMixture = load_mixture_csv(args.types)
    model = TruncatedMnl(tmnl_params(config.model))
    offer, _ = exhaustive_opt(universe, args.k or config.prune.k, mixture, model)
    _emit(offer.model_dump_json(indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_sample_probs(args: argparse.Namespace) -> int:
    report = run_figure2(_config(args))
    _write(report, args.out)
    if args.plot:
        if not args.out:
            raise ConfigError("--plot needs --out so the script can reference the CSV")
        script = str(Path(args.out).with_suffix(".gp"))
        write_gnuplot_script(args.out, script)
        logger.info("plot_script_written", path=script)
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    _write(run_benchmark(_config(args)), args.out)
    return EXIT_OK


def cmd_scaling(args: argparse.Namespace) -> int:
    report = run_scaling(_config(args))
    _write(report, args.out)
    for name, fit in report.fits.items():
        logger.info("power_law_fit", series=name, exponent=fit.exponent, r=fit.r_value)
    return EXIT_OK


# ============= Parser =============

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--seed", type=int, help="Override experiment.seed")
    common.add_argument("--out", help="Output path (stdout when omitted, where applicable)")

    parser = argparse.ArgumentParser(
        prog="offerset", description="Sub-linear offer-set optimization with locality-sensitive sampling"
    )
    parser.add_argument("--log-level", help="Override OFFERSET_LOG_LEVEL")
    parser.add_argument("--json-logs", action="store_true", help="Render logs as JSON")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="Generate a synthetic universe")
    gen.add_argument("--n", type=int)
    gen.add_argument("--d", type=int)
    gen.add_argument("--law", choices=[law.value for law in SyntheticLaw])
    gen.add_argument("--types-out", help="CSV for the query point or cluster centers")
    gen.set_defaults(handler=cmd_gen, needs_out=True)

    build = commands.add_parser("build-index", parents=[common], help="Build and persist an index")
    build.add_argument("--items", required=True, help="OSV1 vector file or CSV")
    build.set_defaults(handler=cmd_build_index, needs_out=True)

    query = commands.add_parser("query", parents=[common], help="Sample items around a user type")
    query.add_argument("--index", required=True)
    query.add_argument("--types", required=True, help="CSV of user types")
    query.add_argument("--row", type=int, default=0, help="Type row to query at")
    query.add_argument("--post-filter", action="store_true")
    query.set_defaults(handler=cmd_query)

    rec = commands.add_parser("recommend", parents=[common], help="Prune and optimize an offer set")
    rec.add_argument("--items", required=True)
    rec.add_argument("--types", required=True, help="CSV of mixture types")
    rec.set_defaults(handler=cmd_recommend)

    exact = commands.add_parser("exact", parents=[common], help="Exhaustive optimum (small instances)")
    exact.add_argument("--items", required=True)
    exact.add_argument("--types", required=True)
    exact.add_argument("--k", type=int)
    exact.set_defaults(handler=cmd_exact)

    probs = commands.add_parser("sample-probs", parents=[common], help="Inclusion frequency by distance")
    probs.add_argument("--plot", action="store_true", help="Also write a gnuplot script")
    probs.set_defaults(handler=cmd_sample_probs)

    bench = commands.add_parser("benchmark", parents=[common], help="Compare against mean/last")
    bench.set_defaults(handler=cmd_benchmark)

    scaling = commands.add_parser("scaling", parents=[common], help="Query cost across universe sizes")
    scaling.set_defaults(handler=cmd_scaling)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.log_level, args.json_logs or settings.log_json)

    if getattr(args, "needs_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("config_error", error=str(e))
        return ConfigError.exit_code
    except GuardViolationError as e:
        logger.error("guard_violation", subsets=e.subsets, guard=e.guard)
        return GuardViolationError.exit_code
    except (OfferSetError, OSError) as e:
        logger.error("command_failed", command=args.command, error=str(e))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
