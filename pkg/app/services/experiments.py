"""Experiment replication: sampling-probability curves, benchmark against baselines, scaling."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, stats

from app.config import ExperimentConfig, ModelSection, get_settings
from app.log import get_logger
from app.models.embedding import ItemUniverse, UnitVector, UserMixture, unit_normalize
from app.models.enums import BaselineKind, ExperimentKind, SyntheticLaw
from app.schemas import (
    BenchmarkRow,
    ExperimentReport,
    Figure2Bin,
    LevelPlan,
    OfferSet,
    PowerLawFit,
    PruneConfig,
    ScalingRow,
    TruncatedMnlParams,
)
from app.services.choice import (
    ChoiceModel,
    DecayFunction,
    TruncatedMnl,
    calibrate_no_choice_weight,
    mixture_objective,
    measured_beta,
    p_from_tmnl,
    sublinear_budget,
)
from app.services.lsh import derive_seed
from app.services.lss import LssIndex, build_lss, candidate_budget, plan_levels
from app.services.optimizer import build_ensemble, recommend, required_samples
from app.services.oracle import estimate_inclusion
from app.services.report_writer import rows_to_frame
from app.services.synthetic import draw_user_mixtures, gen_synthetic

logger = get_logger("experiments")

# Independent random streams derived from the experiment seed
FIGURE2_STREAM = 10
MIXTURE_STREAM = 11
ENSEMBLE_STREAM = 12
QUERY_STREAM = 13
SCALING_STREAM = 14

BENCHMARK_METHODS = ("lss", BaselineKind.MEAN.value, BaselineKind.LAST.value)
ZERO_NORM = 1e-12


# ============= Shared helpers =============

def no_choice_weight(model: ModelSection, sigma: float, reference_inner: float = 1.0) -> float:
    """Configured w, or w calibrated so an item at `reference_inner` converts at the target."""
    if model.target_conversion is not None:
        return calibrate_no_choice_weight(sigma, reference_inner, model.target_conversion)
    assert model.w is not None
    return model.w


def tmnl_params(
    model: ModelSection, sigma: Optional[float] = None, reference_inner: float = 1.0
) -> TruncatedMnlParams:
    sigma = model.sigma if sigma is None else sigma
    return TruncatedMnlParams(
        sigma=sigma, w=no_choice_weight(model, sigma, reference_inner), theta=model.theta
    )


def plan_for(config: ExperimentConfig, p: DecayFunction, n: int) -> LevelPlan:
    plan = config.plan
    return plan_levels(
        p,
        n,
        plan.beta,
        plan.c,
        plan.effective_delta,
        plan.level_rule,
        plan.enforce_level_guarantee,
    )


def _header(
    config: ExperimentConfig, kind: ExperimentKind, extra: Sequence[Tuple[str, Any]]
) -> List[tuple[str, object]]:
    return [("experiment", kind.value), ("seed", config.experiment.seed), *config.flat_items(), *extra]


def _workers(workers: Optional[int]) -> int:
    return workers or get_settings().max_workers


# ============= Sampling probabilities =============

def bin_by_distance(
    distances: np.ndarray,
    frequency: np.ndarray,
    standard_error: np.ndarray,
    bin_size: int,
    decay: DecayFunction,
    inflation: float,
) -> List[Figure2Bin]:
    """Group items into bins of `bin_size` consecutive distances.

    The lower bound of each bin is half the planned curve, min(inflation * p, 1) / 2.
    """
    order = np.argsort(distances, kind="stable")
    bins: List[Figure2Bin] = []
    for start in range(0, len(order), bin_size):
        rows = order[start : start + bin_size]
        mid = float(np.mean(distances[rows]))
        target = float(decay(mid))
        bins.append(
            Figure2Bin(
                mid_distance=mid,
                target=target,
                lower_bound=min(inflation * target, 1.0) / 2.0,
                frequency=float(np.mean(frequency[rows])),
                standard_error=float(np.sqrt(np.sum(np.square(standard_error[rows]))) / rows.size),
                items=int(rows.size),
            )
        )
    return bins


def run_figure2(
    config: ExperimentConfig, decay: Optional[DecayFunction] = None, workers: Optional[int] = None
) -> ExperimentReport:
    """Measure per-item inclusion of repeated sampling builds, binned by distance to the query.

    The index is planned against the inflated curve min(inflation * p, 1), so that
    half of it reaches 0.95 p at the default inflation of 1.9.

    Args:
        config: Experiment configuration (universe, model, plan, experiment sections)
        decay: Curve to sample against; defaults to the truncated-MNL singleton conversion
        workers: Concurrent replications (defaults to settings.max_workers)

    Returns:
        One row per bin of `bin_size` items
    """
    seed = config.experiment.seed
    universe, query = gen_synthetic(
        config.universe.n, config.universe.d, seed, SyntheticLaw.DISTANCE_UNIFORM
    )
    assert isinstance(query, UnitVector)
    if decay is None:
        decay = p_from_tmnl(tmnl_params(config.model))
    inflation = config.plan.inflation
    plan = plan_for(config, decay.inflate(inflation), universe.n)
    post_filter = config.plan.post_filter

    def sample(rep: int) -> set:
        index = build_lss(universe, plan, derive_seed(seed, FIGURE2_STREAM, rep))
        return index.query(query, post_filter=post_filter)

    logger.info(
        "figure2_started", n=universe.n, replications=config.experiment.replications, levels=plan.R
    )
    estimate = estimate_inclusion(
        sample, universe, config.experiment.replications, workers=_workers(workers)
    )
    distances = universe.distances(query)
    bins = bin_by_distance(
        distances,
        np.asarray(estimate.frequency),
        np.asarray(estimate.standard_error),
        config.experiment.bin_size,
        decay,
        inflation,
    )
    header = _header(
        config,
        ExperimentKind.FIGURE2,
        [
            ("derived.decay", decay.name),
            ("derived.inflation", inflation),
            ("derived.rho_0", plan.rho_0),
            ("derived.levels", plan.R),
            ("derived.active_levels", len(plan.active_levels)),
            ("derived.measured_beta", measured_beta(decay, distances)),
        ],
    )
    return ExperimentReport(kind=ExperimentKind.FIGURE2.value, frame=rows_to_frame(bins), header=header)


# ============= Baselines and benchmark =============

def baseline_query_point(kind: BaselineKind, mixture: UserMixture) -> Tuple[UnitVector, bool]:
    """Query point of a single-point heuristic.

    Returns:
        The point and whether the zero-norm mean fell back to the first type
    """
    if BaselineKind(kind) == BaselineKind.LAST:
        return mixture.types[-1], False
    mean = mixture.matrix.mean(axis=0)
    if np.linalg.norm(mean) < ZERO_NORM:
        logger.warning("mean_query_zero_norm", m=mixture.m)
        return mixture.types[0], True
    return unit_normalize(mean), False


def baseline_recommend(
    kind: BaselineKind,
    mixture: UserMixture,
    k: int,
    universe: ItemUniverse,
    ann: Optional[LssIndex] = None,
    model: Optional[ChoiceModel] = None,
) -> OfferSet:
    """The k items nearest to the mean (or last) mixture type.

    Uses an exact scan, or the candidates of `ann` when given. The offer value
    is scored under `model` when one is passed and left at 0 otherwise.
    """
    point, _ = baseline_query_point(kind, mixture)
    if ann is None:
        rows = np.arange(universe.n)
    else:
        rows = np.sort(universe.positions(ann.query(point)))
    distances = universe.distances(point)[rows]
    ids = universe.ids[rows]
    nearest = ids[np.lexsort((ids, distances))[:k]]
    items = [int(i) for i in nearest.tolist()]
    value = mixture_objective(items, mixture, model, universe) if model is not None else 0.0
    return OfferSet(items=items, value=value, k=k)


def reference_inner_product(universe: ItemUniverse, mixtures: Sequence[UserMixture]) -> float:
    """Median over all test types of the best inner product any item reaches."""
    best = [np.max(universe.vectors @ mixture.matrix.T, axis=0) for mixture in mixtures]
    return float(np.median(np.concatenate(best)))


def win_shares(values: np.ndarray) -> np.ndarray:
    """Fraction of rows each column wins; ties split the row evenly."""
    best = values.max(axis=1, keepdims=True)
    tied = np.isclose(values, best, rtol=1e-12, atol=1e-15)
    return (tied / tied.sum(axis=1, keepdims=True)).mean(axis=0)


def run_benchmark(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Compare the sampling pipeline with the mean and last baselines across the sigma grid.

    Every method is scored by the true mixture objective of its offer set.
    """
    seed = config.experiment.seed
    section = config.universe
    universe, centers = gen_synthetic(
        section.n, section.d, seed, SyntheticLaw.CLUSTER_MIXTURE, section.clusters, section.cluster_spread
    )
    assert isinstance(centers, UserMixture)
    mixtures = draw_user_mixtures(
        centers,
        config.experiment.test_mixtures,
        config.experiment.types_per_mixture,
        np.random.default_rng(derive_seed(seed, MIXTURE_STREAM)),
        section.cluster_spread,
    )
    reference = reference_inner_product(universe, mixtures)

    prune = config.prune
    k = prune.k
    s = prune.s_override or prune.samples_per_k * k
    prune_config = PruneConfig(
        epsilon1=prune.epsilon1,
        epsilon2=prune.epsilon2,
        sampling_floor=prune.sampling_floor,
        s_override=s,
    )
    extra: List[Tuple[str, Any]] = [
        ("derived.samples", s),
        (
            "derived.required_samples",
            required_samples(k, prune.sampling_floor, prune.epsilon1, prune.epsilon2),
        ),
        ("derived.reference_inner", reference),
    ]

    rows: List[BenchmarkRow] = []
    with ThreadPoolExecutor(max_workers=_workers(workers)) as pool:
        for sigma_index, sigma in enumerate(config.experiment.sigma_grid):
            params = tmnl_params(config.model, sigma, reference)
            model = TruncatedMnl(params)
            plan = plan_for(config, model.decay(), universe.n)
            ensemble = build_ensemble(
                universe, plan, s, derive_seed(seed, ENSEMBLE_STREAM, sigma_index), workers
            )

            def evaluate(i: int) -> Tuple[float, float, float]:
                rng = np.random.default_rng(derive_seed(seed, QUERY_STREAM, sigma_index, i))
                mixture = mixtures[i]
                pipeline = recommend(
                    ensemble,
                    mixture,
                    k,
                    prune_config,
                    model,
                    universe,
                    rng=rng,
                    lazy=prune.lazy,
                    post_filter=config.plan.post_filter,
                )
                mean = baseline_recommend(BaselineKind.MEAN, mixture, k, universe, model=model)
                last = baseline_recommend(BaselineKind.LAST, mixture, k, universe, model=model)
                return pipeline.offer.value, mean.value, last.value

            values = np.array(list(pool.map(evaluate, range(len(mixtures)))))
            shares = win_shares(values)
            for column, method in enumerate(BENCHMARK_METHODS):
                rows.append(
                    BenchmarkRow(
                        sigma=sigma,
                        w=params.w,
                        method=method,
                        avg_conversion=float(values[:, column].mean()),
                        win_share=float(shares[column]),
                        mixtures=len(mixtures),
                    )
                )
            extra.append((f"derived.w.sigma_{sigma:g}", params.w))
            logger.info(
                "benchmark_sigma_done",
                sigma=sigma,
                w=params.w,
                lss=float(values[:, 0].mean()),
                mean=float(values[:, 1].mean()),
                last=float(values[:, 2].mean()),
            )

    header = _header(config, ExperimentKind.BENCHMARK, extra)
    return ExperimentReport(kind=ExperimentKind.BENCHMARK.value, frame=rows_to_frame(rows), header=header)


# ============= Scaling =============

def calibrate_cutoff(params: TruncatedMnlParams, distances: np.ndarray, beta: float, c: float) -> float:
    """Largest cutoff theta <= params.theta with sum_v p(d(v, u) / c) <= n^beta."""
    budget = len(distances) ** beta
    distances = np.asarray(distances, dtype=np.float64)

    def mass(theta: float) -> float:
        return sublinear_budget(p_from_tmnl(params.model_copy(update={"theta": theta})), distances, c)

    if mass(params.theta) <= budget:
        return params.theta
    xtol = 1e-9
    within = lambda theta: 1.0 if mass(theta) <= budget else -1.0  # noqa: E731
    root = optimize.bisect(within, xtol, params.theta, xtol=xtol)
    return max(xtol, float(root) - 2 * xtol)


def fit_power_law(ns: Sequence[float], values: Sequence[float]) -> PowerLawFit:
    """Fit value = e^intercept * n^exponent by least squares on log-log data."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.asarray(values, dtype=np.float64)
    if x.size < 2 or np.any(y <= 0):
        raise ValueError("power-law fit needs at least two positive values")
    result = stats.linregress(x, np.log(y))
    return PowerLawFit(
        exponent=float(result.slope),
        intercept=float(result.intercept),
        r_value=float(result.rvalue),
        points=int(x.size),
    )


def run_scaling(config: ExperimentConfig) -> ExperimentReport:
    """Mean query time and candidate count of one sampling index per universe size.

    The model cutoff is calibrated per n so that the singleton mass around the
    query stays within n^beta; the fits then measure the index, not the data.
    """
    seed = config.experiment.seed
    plan_section = config.plan
    rows: List[ScalingRow] = []
    for n in config.experiment.n_grid:
        universe, query = gen_synthetic(
            n, config.universe.d, derive_seed(seed, SCALING_STREAM, n), SyntheticLaw.DISTANCE_UNIFORM
        )
        assert isinstance(query, UnitVector)
        distances = universe.distances(query)
        base = tmnl_params(config.model)
        theta = calibrate_cutoff(base, distances, plan_section.beta, plan_section.c)
        p = p_from_tmnl(base.model_copy(update={"theta": theta}))
        plan = plan_for(config, p, n)
        index = build_lss(universe, plan, derive_seed(seed, SCALING_STREAM, n, 1))

        seconds: List[float] = []
        sizes: List[int] = []
        for _ in range(config.experiment.queries_per_n):
            started = time.perf_counter()
            found = index.query(query, post_filter=plan_section.post_filter)
            seconds.append(time.perf_counter() - started)
            sizes.append(len(found))
        rows.append(
            ScalingRow(
                n=n,
                theta=theta,
                mean_query_seconds=float(np.mean(seconds)),
                mean_candidates=float(np.mean(sizes)),
                candidate_budget=candidate_budget(plan, sublinear_budget(p, distances, plan_section.c)),
                measured_beta=measured_beta(p, distances),
                expected_slots=plan.expected_slots(),
                levels=len(plan.active_levels),
            )
        )
        logger.info("scaling_point_done", n=n, theta=theta, candidates=rows[-1].mean_candidates)

    fits = {}
    if len(rows) >= 2:
        ns = [row.n for row in rows]
        fits["query_seconds"] = fit_power_law(ns, [row.mean_query_seconds for row in rows])
        if all(row.mean_candidates > 0 for row in rows):
            fits["candidates"] = fit_power_law(ns, [row.mean_candidates for row in rows])
    extra: List[Tuple[str, Any]] = [(f"fit.{name}.exponent", fit.exponent) for name, fit in fits.items()]
    if rows:
        extra.append(("derived.measured_beta", max(row.measured_beta for row in rows)))
    header = _header(config, ExperimentKind.SCALING, extra)
    return ExperimentReport(
        kind=ExperimentKind.SCALING.value, frame=rows_to_frame(rows), header=header, fits=fits
    )


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Dispatch on `experiment.kind`."""
    kind = config.experiment.kind
    if kind == ExperimentKind.FIGURE2:
        return run_figure2(config, workers=workers)
    if kind == ExperimentKind.BENCHMARK:
        return run_benchmark(config, workers=workers)
    return run_scaling(config)


def bins_meeting_bound(
    frame: pd.DataFrame, min_target: float = 0.02, sigmas: float = 3.0
) -> float:
    """Share of bins with target above `min_target` whose frequency reaches the lower bound."""
    eligible = frame[frame["target"] > min_target]
    if eligible.empty:
        return math.nan
    met = eligible["frequency"] >= eligible["lower_bound"] - sigmas * eligible["standard_error"]
    return float(met.mean())
