"""
Experiment harness: unknown-program trials, beta grid search, behaviour
deviation, coarse/fine clustering reports, environment shift and the report
files each of them writes.
"""
import csv
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from counterlens.exceptions import (
    DataIOError,
    EmptyDataset,
    EmptyNormal,
    EmptyTrials,
    EmptyValidation,
    FormatError,
    MissingProgramData,
    ShapeMismatch,
    TooFewPrograms,
)
from counterlens.extensions import logger
from counterlens.models import (
    ClusteringReport,
    Dataset,
    DeviationReport,
    DistanceNorm,
    EnvironmentShiftReport,
    Granularity,
    GridSearchResult,
    HoldoutReport,
    ProgramSample,
    TrialOutcome,
    UnknownTrial,
    ValidationTrial,
    stack_vectors,
)
from counterlens.services.cluster_engine import (
    assign_members,
    cluster_program,
    get_nearest_cluster,
    inter_cluster_distances,
    intra_cluster_distances,
    lloyd,
    seeded_kmeans,
)
from counterlens.services.preprocess import fit_scaler, vectorize_dataset
from counterlens.utils import decode_meta, encode_meta, format_float
from counterlens.validators import validate_grid

DISTANCE_REPORT_HEADER = ("cluster", "label", "mean", "q1", "median", "q3", "min", "max")


def enumerate_unknown_trials(programs: Sequence[str], n_seed: int = 3) -> list[UnknownTrial]:
    """Every choice of ``n_seed`` seed programs paired with every remaining program as the unknown."""
    programs = list(dict.fromkeys(programs))
    if len(programs) <= n_seed:
        raise TooFewPrograms(f"need more than {n_seed} programs, got {len(programs)}")
    templates = []
    for seeds in combinations(programs, n_seed):
        for unknown in programs:
            if unknown not in seeds:
                templates.append(UnknownTrial(seed_programs=seeds, unknown_program=unknown))
    return templates


def sample_trials(templates: Sequence, n: int, rng: np.random.Generator) -> list:
    """Seeded sample without replacement, kept in template order."""
    if n >= len(templates):
        return list(templates)
    chosen = np.sort(rng.choice(len(templates), size=n, replace=False))
    return [templates[i] for i in chosen]


def _samples_of(dataset: Dataset, program: str) -> list[ProgramSample]:
    samples = [s for s in dataset if s.program == program]
    if not samples:
        raise MissingProgramData(f"dataset has no samples for program {program!r}")
    return samples


def _train(seed_samples, distance_norm, beta, max_iter, tol, granularity=Granularity.FINE):
    seeds = Dataset(tuple(seed_samples))
    scaler = fit_scaler(seeds)
    return seeded_kmeans(
        vectorize_dataset(seeds, scaler),
        seeds.labels(granularity),
        max_iter=max_iter,
        tol=tol,
        scaler=scaler,
        distance_norm=distance_norm,
        beta=beta,
    )


def _distances(model, samples) -> np.ndarray:
    matrix = vectorize_dataset(Dataset(tuple(samples)), model.scaler)
    return np.array([get_nearest_cluster(row, model).normalized_distance for row in matrix])


def _majority_new(distances: np.ndarray, beta: float) -> bool:
    return int(np.count_nonzero(distances >= beta)) * 2 > len(distances)


def run_unknown_trial(
    trial: UnknownTrial,
    dataset: Dataset,
    beta: float = 1.0,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> UnknownTrial:
    """
    Seed a model on the trial's seed programs and classify every unknown sample.

    The trial counts as detected when a strict majority of unknown samples
    raise a new cluster.
    """
    seed_samples = [s for program in trial.seed_programs for s in _samples_of(dataset, program)]
    unknown = _samples_of(dataset, trial.unknown_program)
    model = _train(seed_samples, distance_norm, beta, max_iter, tol)
    distances = _distances(model, unknown)
    outcome = TrialOutcome.DETECTED if _majority_new(distances, beta) else TrialOutcome.NOT_DETECTED
    return UnknownTrial(
        seed_programs=trial.seed_programs,
        unknown_program=trial.unknown_program,
        outcome=outcome,
        median_distance=float(np.median(distances)),
    )


def run_unknown_trials(
    templates: Sequence[UnknownTrial],
    dataset: Dataset,
    beta: float = 1.0,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    workers: int = 1,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> list[UnknownTrial]:
    def run(trial):
        return run_unknown_trial(trial, dataset, beta, distance_norm, max_iter, tol)

    if workers <= 1:
        return [run(trial) for trial in templates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, templates))


def detection_ratio(trials: Sequence[UnknownTrial]) -> float:
    if not trials:
        raise EmptyTrials("detection ratio of zero trials is undefined")
    return sum(trial.is_detected for trial in trials) / len(trials)


def make_validation_trials(templates: Sequence[UnknownTrial], rng: np.random.Generator) -> list[ValidationTrial]:
    """
    Two labeled trials per template: the true unknown (expected Detected) and
    one seed program tested with held-out samples (expected NotDetected).
    """
    validation = []
    for template in templates:
        seeds = template.seed_programs
        validation.append(ValidationTrial(seeds, template.unknown_program, TrialOutcome.DETECTED))
        target = seeds[int(rng.integers(len(seeds)))]
        validation.append(ValidationTrial(seeds, target, TrialOutcome.NOT_DETECTED))
    return validation


def _validation_distances(trial, dataset, distance_norm, holdout_fraction, rng, max_iter, tol):
    seed_samples = {program: _samples_of(dataset, program) for program in trial.seed_programs}
    if trial.expected is TrialOutcome.DETECTED:
        queried = _samples_of(dataset, trial.target_program)
    else:
        own = seed_samples[trial.target_program]
        if len(own) < 2:
            raise MissingProgramData(
                f"program {trial.target_program!r} needs at least two samples to hold some out"
            )
        order = rng.permutation(len(own))
        held = min(len(own) - 1, max(1, int(round(len(own) * holdout_fraction))))
        queried = [own[i] for i in order[:held]]
        seed_samples[trial.target_program] = [own[i] for i in sorted(order[held:])]
    model = _train(
        [s for samples in seed_samples.values() for s in samples],
        distance_norm, 1.0, max_iter, tol,
    )
    return _distances(model, queried)


def beta_grid(range_lo: float = 0.0, range_hi: float = 1.0, step: float = 0.1) -> list[float]:
    is_valid, error = validate_grid(range_lo, range_hi, step)
    if not is_valid:
        raise ValueError(error)
    count = int(math.floor((range_hi - range_lo) / step + 1e-9)) + 1
    return [round(range_lo + i * step, 12) for i in range(count)]


def best_beta_from_distances(
    distance_sets: Sequence[np.ndarray],
    expected: Sequence[TrialOutcome],
    grid: Sequence[float],
) -> GridSearchResult:
    """Accuracy of the majority verdict at every grid point; ties go to the smallest beta."""
    if not distance_sets:
        raise EmptyValidation("grid search needs at least one validation trial")
    scores = []
    best_beta, best_score = None, -1.0
    for beta in grid:
        correct = 0
        for distances, outcome in zip(distance_sets, expected):
            detected = _majority_new(np.asarray(distances), beta)
            correct += detected == (outcome is TrialOutcome.DETECTED)
        score = correct / len(distance_sets)
        scores.append((beta, score))
        if score > best_score:
            best_beta, best_score = beta, score
    return GridSearchResult(best_beta=best_beta, scores=tuple(scores))


def grid_search_beta(
    train: Dataset,
    validation: Sequence[ValidationTrial],
    range_lo: float = 0.0,
    range_hi: float = 1.0,
    step: float = 0.1,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    rng_seed: int = 7,
    holdout_fraction: float = 0.25,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> GridSearchResult:
    """
    Pick the beta that classifies the most validation trials correctly.

    Distances are computed once per trial; only the threshold varies across
    the grid.
    """
    if not validation:
        raise EmptyValidation("grid search needs at least one validation trial")
    grid = beta_grid(range_lo, range_hi, step)
    rng = np.random.default_rng(rng_seed)
    distance_sets = [
        _validation_distances(trial, train, distance_norm, holdout_fraction, rng, max_iter, tol)
        for trial in validation
    ]
    result = best_beta_from_distances(distance_sets, [t.expected for t in validation], grid)
    logger.info("Grid search over %d points picked beta=%s", len(grid), result.best_beta)
    return result


def deviation_experiment(
    normal: Sequence[ProgramSample],
    suspect: Sequence[ProgramSample],
    beta: float = 1.0,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> DeviationReport:
    """
    Classify suspect samples against a one-cluster model of the normal ones,
    then check whether plain 2-means over both sets separates them.
    """
    normal = list(normal)
    suspect = list(suspect)
    if not normal:
        raise EmptyNormal("deviation check needs normal samples")
    normal_set = Dataset(tuple(normal))
    scaler = fit_scaler(normal_set)
    normal_matrix = vectorize_dataset(normal_set, scaler)
    model = seeded_kmeans(
        normal_matrix,
        ["normal"] * len(normal),
        max_iter=max_iter,
        tol=tol,
        scaler=scaler,
        distance_norm=distance_norm,
        beta=beta,
    )
    if not suspect:
        return DeviationReport(verdicts=(), split_matches=None)

    suspect_matrix = vectorize_dataset(Dataset(tuple(suspect)), scaler)
    verdicts = tuple(cluster_program(row, model) for row in suspect_matrix)

    union = np.vstack([normal_matrix, suspect_matrix])
    ground = np.array([0] * len(normal) + [1] * len(suspect))
    result = lloyd(
        union,
        np.vstack([normal_matrix.mean(axis=0), suspect_matrix.mean(axis=0)]),
        max_iter,
        tol,
        initial_assignment=ground,
    )
    split = cdist(union, result.centroids).argmin(axis=1)
    return DeviationReport(
        verdicts=verdicts,
        split_matches=bool(np.array_equal(split, ground)),
        two_means_assignment=tuple(int(a) for a in split),
    )


def shift_counters(samples: Sequence[ProgramSample], counters: Sequence[int], amount) -> list[ProgramSample]:
    """Add ``amount`` (scalar or one value per listed counter) to the listed counters at every tick."""
    shifted = []
    for sample in samples:
        values = np.array(sample.values)
        values[:, list(counters)] += amount
        shifted.append(sample.with_values(values))
    return shifted


def cluster_purity(assignments: Sequence[int], labels: Sequence[str]) -> float:
    if len(assignments) != len(labels):
        raise ShapeMismatch(f"{len(assignments)} assignments but {len(labels)} labels")
    if not len(labels):
        raise EmptyDataset("purity of zero samples is undefined")
    by_cluster = {}
    for cluster_id, label in zip(assignments, labels):
        by_cluster.setdefault(int(cluster_id), Counter())[label] += 1
    majority = sum(counts.most_common(1)[0][1] for counts in by_cluster.values())
    return majority / len(labels)


def clustering_report(
    dataset: Dataset,
    granularity: Granularity = Granularity.FINE,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    beta: float = 1.0,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> ClusteringReport:
    if not len(dataset):
        raise EmptyDataset("cannot report on an empty dataset")
    scaler = fit_scaler(dataset)
    matrix = vectorize_dataset(dataset, scaler)
    labels = dataset.labels(granularity)
    model = seeded_kmeans(
        matrix, labels, max_iter=max_iter, tol=tol,
        scaler=scaler, distance_norm=distance_norm, beta=beta,
    )
    members = assign_members(model, matrix)
    assignments = cdist(matrix, model.centroids).argmin(axis=1)
    return ClusteringReport(
        granularity=granularity,
        model=model,
        intra=intra_cluster_distances(model, members),
        inter=inter_cluster_distances(model) if model.k > 1 else (),
        purity=cluster_purity(assignments, labels),
    )


def run_holdout_experiment(
    dataset: Dataset,
    granularity: Granularity,
    held_out: str,
    beta: float = 1.0,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> HoldoutReport:
    """Seed every label except ``held_out`` and classify the held-out label's samples."""
    grouped = dataset.by_label(granularity)
    if held_out not in grouped:
        raise MissingProgramData(f"dataset has no samples labeled {held_out!r}")
    if len(grouped) < 2:
        raise TooFewPrograms("holdout needs at least one seed label besides the held-out one")
    seeds = [s for label, samples in grouped.items() if label != held_out for s in samples]
    model = _train(seeds, distance_norm, beta, max_iter, tol, granularity)
    queried = vectorize_dataset(Dataset(tuple(grouped[held_out])), model.scaler)
    return HoldoutReport(
        held_out=held_out,
        granularity=granularity,
        verdicts=tuple(cluster_program(row, model) for row in queried),
    )


def scale_counters(samples: Sequence[ProgramSample], factors: Mapping[int, float]) -> list[ProgramSample]:
    scaled = []
    for sample in samples:
        values = np.array(sample.values)
        for counter, factor in factors.items():
            values[:, counter] *= factor
        scaled.append(sample.with_values(values))
    return scaled


def _accuracy(model, samples):
    matrix = vectorize_dataset(Dataset(tuple(samples)), model.scaler)
    verdicts = [cluster_program(row, model) for row in matrix]
    assigned = sum(not v.is_new_cluster for v in verdicts)
    correct = sum(
        not v.is_new_cluster and v.label == sample.program
        for v, sample in zip(verdicts, samples)
    )
    return assigned / len(samples), correct / len(samples)


def environment_shift_experiment(
    dataset: Dataset,
    factors: Mapping[int, float],
    beta: float = 1.0,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    rng_seed: int = 7,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> EnvironmentShiftReport:
    """
    Train in the original environment, then classify samples recorded in a
    shifted one (counters scaled by ``factors``) with the stale model and
    with a model retrained on shifted data.
    """
    if any(not factor > 0 for factor in factors.values()):
        raise ValueError("environment factors must be positive")
    rng = np.random.default_rng(rng_seed)
    train, test = [], []
    for program, samples in dataset.by_label(Granularity.FINE).items():
        if len(samples) < 2:
            raise MissingProgramData(f"program {program!r} needs at least two samples to split")
        order = rng.permutation(len(samples))
        half = len(samples) // 2
        train += [samples[i] for i in sorted(order[:half])]
        test += [samples[i] for i in sorted(order[half:])]

    shifted_test = scale_counters(test, factors)
    stale = _train(train, distance_norm, beta, max_iter, tol)
    retrained = _train(scale_counters(train, factors), distance_norm, beta, max_iter, tol)
    stale_assigned, stale_accuracy = _accuracy(stale, shifted_test)
    fresh_assigned, fresh_accuracy = _accuracy(retrained, shifted_test)
    logger.info(
        "Environment shift: stale model assigns %.3f, retrained assigns %.3f",
        stale_assigned, fresh_assigned,
    )
    return EnvironmentShiftReport(
        factors=tuple(sorted(factors.items())),
        stale_assigned_fraction=stale_assigned,
        stale_accuracy=stale_accuracy,
        retrained_assigned_fraction=fresh_assigned,
        retrained_accuracy=fresh_accuracy,
    )


def _open_for_write(path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataIOError(f"could not write {path}: {exc}") from exc


def write_distance_report(summaries, path) -> None:
    with _open_for_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DISTANCE_REPORT_HEADER)
        for s in summaries:
            writer.writerow([
                s.cluster_id, s.label,
                format_float(s.mean), format_float(s.q1), format_float(s.median),
                format_float(s.q3), format_float(s.minimum), format_float(s.maximum),
            ])


def write_trial_log(trials: Sequence[UnknownTrial], path) -> float:
    ratio = detection_ratio(trials)
    with _open_for_write(path) as handle:
        for trial in trials:
            median = "-" if trial.median_distance is None else format_float(trial.median_distance)
            handle.write(
                f"{';'.join(trial.seed_programs)}\t{trial.unknown_program}\t"
                f"{trial.outcome.value if trial.outcome else '-'}\t{median}\n"
            )
        handle.write(f"# detection_ratio {format_float(ratio)}\n")
    return ratio


def write_embedding_input(vectors: Sequence, labels: Sequence[str], path) -> int:
    """Tab-separated matrix, one row per vector, label in the last column."""
    if not len(vectors):
        raise EmptyDataset("nothing to export")
    if len(vectors) != len(labels):
        raise ShapeMismatch(f"{len(vectors)} vectors but {len(labels)} labels")
    matrix = stack_vectors(vectors)
    with _open_for_write(path) as handle:
        for row, label in zip(matrix, labels):
            handle.write("\t".join(format_float(v) for v in row) + f"\t{encode_meta(label)}\n")
    return matrix.shape[0]


def read_embedding_input(path) -> tuple[np.ndarray, list[str]]:
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            lines = handle.read().split("\n")
    except OSError as exc:
        raise DataIOError(f"could not read {path}: {exc}") from exc
    rows, labels = [], []
    for line_no, line in enumerate(lines, start=1):
        if not line:
            continue
        *cells, label = line.split("\t")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise FormatError(f"line {line_no}: {exc}") from exc
        labels.append(decode_meta(label))
    if not rows:
        raise EmptyDataset(f"{path} holds no vectors")
    try:
        return stack_vectors(rows), labels
    except ShapeMismatch as exc:
        raise FormatError(f"{path}: {exc}") from exc
