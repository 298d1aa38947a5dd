"""
Seeded k-means training, nearest-cluster queries and the assign-or-new-cluster decision.

Distances are Euclidean throughout and computed with ``scipy.spatial.distance.cdist``.
Ties in every argmin resolve to the lowest cluster id.
"""
import math
import warnings
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from counterlens.exceptions import (
    DataIOError,
    DegenerateClusterWarning,
    EmptyCluster,
    EmptyDataset,
    EmptyLabel,
    FormatError,
    ShapeMismatch,
    SingleCluster,
)
from counterlens.extensions import logger
from counterlens.models import (
    CATALOG_NAMES,
    Cluster,
    ClusterModel,
    DetectionVerdict,
    DistanceNorm,
    DistanceSummary,
    FeatureVector,
    NearestClusterResult,
    ScalerParams,
    TrainingMeta,
    stack_vectors,
)
from counterlens.utils import decode_meta, encode_meta, format_float

MODEL_HEADER = "counterlens-model v1"


class LloydResult(NamedTuple):
    centroids: np.ndarray
    assignment: np.ndarray
    iterations: int
    history: tuple
    reseeded: int


def _objective(matrix, centroids, assignment):
    return float(((matrix - centroids[assignment]) ** 2).sum())


def _reseed_empty(matrix, centroids, assignment, k):
    """Move the point farthest from each emptied centroid into that cluster."""
    reseeded = 0
    counts = np.bincount(assignment, minlength=k)
    for cluster_id in np.flatnonzero(counts == 0):
        distances = cdist(matrix, centroids[cluster_id:cluster_id + 1]).ravel()
        for candidate in np.argsort(-distances, kind="stable"):
            donor = assignment[candidate]
            if counts[donor] > 1:
                assignment[candidate] = cluster_id
                counts[donor] -= 1
                counts[cluster_id] += 1
                reseeded += 1
                message = f"cluster {cluster_id} lost all members; re-seeded with point {candidate}"
                logger.warning("Degenerate cluster: %s", message)
                warnings.warn(message, DegenerateClusterWarning, stacklevel=3)
                break
    return reseeded


def lloyd(matrix, initial_centroids, max_iter=100, tol=1e-6, initial_assignment=None) -> LloydResult:
    """
    Lloyd iterations from the given centroids.

    The history starts with the objective of the initial partition and gains
    one entry per iteration; it stops once the decrease falls below ``tol``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")

    matrix = np.asarray(matrix, dtype=np.float64)
    centroids = np.array(initial_centroids, dtype=np.float64)
    k = centroids.shape[0]
    if initial_assignment is None:
        assignment = cdist(matrix, centroids).argmin(axis=1)
    else:
        assignment = np.asarray(initial_assignment, dtype=np.intp)
    history = [_objective(matrix, centroids, assignment)]
    reseeded = 0
    iterations = 0

    for iterations in range(1, max_iter + 1):
        assignment = cdist(matrix, centroids).argmin(axis=1)
        reseeded += _reseed_empty(matrix, centroids, assignment, k)
        for cluster_id in range(k):
            members = matrix[assignment == cluster_id]
            if len(members):
                centroids[cluster_id] = members.mean(axis=0)
        history.append(_objective(matrix, centroids, assignment))
        if history[-2] - history[-1] < tol:
            break

    return LloydResult(centroids, assignment, iterations, tuple(history), reseeded)


def _radius_stats(members, centroid):
    if not len(members):
        return 0.0, 0.0, 0.0
    distances = cdist(members, centroid[None, :]).ravel()
    radius_max = float(distances.max())
    # the mean of equal floats can round above their max
    radius_mean = min(float(distances.mean()), radius_max)
    return radius_max, radius_mean, float(distances.std())


def seeded_kmeans(
    vectors: Sequence,
    seed_labels: Sequence[str],
    max_iter: int = 100,
    tol: float = 1e-6,
    label_set: Optional[Sequence[str]] = None,
    scaler: Optional[ScalerParams] = None,
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX,
    beta: float = 1.0,
) -> ClusterModel:
    """
    Train a k-means model whose initial centroids are the per-label seed means.

    Args:
        vectors: FeatureVectors (or raw arrays) to cluster
        seed_labels: Label of each vector; k is the number of distinct labels
        label_set: Labels the model must contain; a label without vectors raises EmptyLabel

    Returns:
        ClusterModel with clusters in sorted label order
    """
    seed_labels = list(seed_labels)
    if len(vectors) != len(seed_labels):
        raise ShapeMismatch(f"{len(vectors)} vectors but {len(seed_labels)} labels")
    if not len(vectors):
        raise EmptyDataset("cannot train on zero vectors")
    matrix = stack_vectors(vectors)

    labels = sorted(set(seed_labels))
    if label_set is not None:
        absent = sorted(set(label_set) - set(labels))
        if absent:
            raise EmptyLabel(f"no seed vectors for label(s): {', '.join(absent)}")
        labels = sorted(set(label_set))
    if len(labels) == 1:
        logger.warning("Training on a single label %r yields a one-cluster model", labels[0])

    label_ids = {label: cluster_id for cluster_id, label in enumerate(labels)}
    seed_assignment = np.array([label_ids[label] for label in seed_labels], dtype=np.intp)
    seeds = np.vstack([matrix[seed_assignment == cluster_id].mean(axis=0) for cluster_id in range(len(labels))])

    result = lloyd(matrix, seeds, max_iter, tol, initial_assignment=seed_assignment)
    final = cdist(matrix, result.centroids).argmin(axis=1)

    clusters = []
    for cluster_id, label in enumerate(labels):
        members = matrix[final == cluster_id]
        if not len(members):
            raise EmptyCluster(
                f"cluster {cluster_id} ({label}) has no members after {result.iterations} iteration(s); "
                "raise max_iter or check the seed labels"
            )
        radius_max, radius_mean, radius_std = _radius_stats(members, result.centroids[cluster_id])
        clusters.append(Cluster(
            id=cluster_id,
            label=label,
            centroid=result.centroids[cluster_id],
            member_count=int(len(members)),
            radius_max=radius_max,
            radius_mean=radius_mean,
            radius_std=radius_std,
        ))

    logger.info(
        "Trained %d clusters in %d iteration(s), objective %s",
        len(clusters), result.iterations, result.history[-1],
    )
    return ClusterModel(
        clusters=tuple(clusters),
        scaler=scaler,
        distance_norm=distance_norm,
        beta=beta,
        training_meta=TrainingMeta(
            iterations=result.iterations,
            objective=result.history[-1],
            objective_history=result.history,
            reseeded=result.reseeded,
        ),
    )


def _as_vector(x, model: ClusterModel) -> np.ndarray:
    vector = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64).reshape(-1)
    if vector.shape[0] != model.dimension:
        raise ShapeMismatch(f"vector length {vector.shape[0]} does not match model dimension {model.dimension}")
    return vector


def _normalize(raw: float, cluster: Cluster, distance_norm: DistanceNorm) -> float:
    if distance_norm is DistanceNorm.RADIUS_MAX:
        if cluster.radius_max == 0:
            return 0.0 if raw == 0 else math.inf
        return raw / cluster.radius_max
    if cluster.radius_std == 0:
        return 0.0 if raw <= cluster.radius_mean else math.inf
    return max(0.0, (raw - cluster.radius_mean) / cluster.radius_std)


def get_nearest_cluster(x, model: ClusterModel) -> NearestClusterResult:
    vector = _as_vector(x, model)
    distances = cdist(vector[None, :], model.centroids)[0]
    cluster_id = int(distances.argmin())
    raw = float(distances[cluster_id])
    return NearestClusterResult(
        cluster_id=cluster_id,
        raw_distance=raw,
        normalized_distance=_normalize(raw, model.clusters[cluster_id], model.distance_norm),
    )


def cluster_program(x, model: ClusterModel, beta: Optional[float] = None) -> DetectionVerdict:
    """Assigned when the normalized distance is below beta, otherwise a new-cluster signal."""
    beta = model.beta if beta is None else beta
    nearest = get_nearest_cluster(x, model)
    if nearest.normalized_distance < beta:
        return DetectionVerdict.assigned(model.clusters[nearest.cluster_id], nearest.normalized_distance)
    return DetectionVerdict.new_cluster(nearest.normalized_distance)


def assign_members(model: ClusterModel, vectors: Sequence) -> list[np.ndarray]:
    """Group vectors by nearest cluster; entry i is an (n_i, d) matrix."""
    if not len(vectors):
        return [np.empty((0, model.dimension)) for _ in model.clusters]
    matrix = stack_vectors(vectors)
    if matrix.shape[1] != model.dimension:
        raise ShapeMismatch(f"vector length {matrix.shape[1]} does not match model dimension {model.dimension}")
    nearest = cdist(matrix, model.centroids).argmin(axis=1)
    return [matrix[nearest == cluster.id] for cluster in model.clusters]


def _summary(cluster: Cluster, distances: np.ndarray) -> DistanceSummary:
    q1, median, q3 = np.percentile(distances, [25, 50, 75])
    return DistanceSummary(
        cluster_id=cluster.id,
        label=cluster.label,
        mean=float(distances.mean()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        minimum=float(distances.min()),
        maximum=float(distances.max()),
        count=int(distances.shape[0]),
    )


def intra_cluster_distances(model: ClusterModel, members: Sequence) -> tuple[DistanceSummary, ...]:
    """Member-to-centroid distance statistics per cluster; clusters without members are left out."""
    if len(members) != model.k:
        raise ShapeMismatch(f"{len(members)} member groups for a {model.k}-cluster model")
    summaries = []
    for cluster, group in zip(model.clusters, members):
        if not len(group):
            logger.info("Cluster %d (%s) has no members to summarise", cluster.id, cluster.label)
            continue
        matrix = stack_vectors(group)
        if matrix.shape[1] != model.dimension:
            raise ShapeMismatch(f"member length {matrix.shape[1]} does not match model dimension {model.dimension}")
        summaries.append(_summary(cluster, cdist(matrix, cluster.centroid[None, :]).ravel()))
    return tuple(summaries)


def inter_cluster_distances(model: ClusterModel) -> tuple[DistanceSummary, ...]:
    if model.k < 2:
        raise SingleCluster("inter-cluster distances need at least two clusters")
    pairwise = cdist(model.centroids, model.centroids)
    return tuple(
        _summary(cluster, np.delete(pairwise[cluster.id], cluster.id))
        for cluster in model.clusters
    )


def _floats(values) -> str:
    return " ".join(format_float(v) for v in values)


def _scaler_name(index):
    return CATALOG_NAMES[index] if index < len(CATALOG_NAMES) else f"counter-{index}"


def save_model(model: ClusterModel, path) -> None:
    meta = model.training_meta
    scaler = model.scaler
    lines = [
        MODEL_HEADER,
        f"distance_norm\t{model.distance_norm.value}",
        f"beta\t{format_float(model.beta)}",
        f"k\t{model.k}",
        f"iterations\t{meta.iterations}",
        f"objective\t{format_float(meta.objective)}",
        f"objective_history\t{_floats(meta.objective_history)}",
        f"reseeded\t{meta.reseeded}",
        f"timesteps\t{scaler.timesteps if scaler else 0}",
        f"fitted_on\t{scaler.fitted_on if scaler else ''}",
        f"scaler\t{scaler.counters if scaler else 0}",
    ]
    if scaler:
        for index, (mean, std) in enumerate(zip(scaler.means, scaler.stds)):
            lines.append(f"{_scaler_name(index)}\t{format_float(mean)}\t{format_float(std)}")
    for cluster in model.clusters:
        lines += [
            f"cluster\t{cluster.id}",
            f"label\t{encode_meta(cluster.label)}",
            f"member_count\t{cluster.member_count}",
            f"radius_max\t{format_float(cluster.radius_max)}",
            f"radius_mean\t{format_float(cluster.radius_mean)}",
            f"radius_std\t{format_float(cluster.radius_std)}",
            f"centroid\t{_floats(cluster.centroid)}",
        ]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"could not write {path}: {exc}") from exc
    logger.info("Saved %d-cluster model to %s", model.k, path)


class _ModelReader:
    def __init__(self, lines):
        self.lines = lines
        self.position = 0

    def field(self, key):
        if self.position >= len(self.lines):
            raise FormatError(f"unexpected end of model file, expected {key!r}")
        line_no = self.position + 1
        name, sep, value = self.lines[self.position].partition("\t")
        self.position += 1
        if not sep or name != key:
            raise FormatError(f"line {line_no}: expected {key!r} field")
        return value


def _parse_floats(text):
    return [float(v) for v in text.split()] if text.strip() else []


def load_model(path) -> ClusterModel:
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            text = handle.read()
    except OSError as exc:
        raise DataIOError(f"could not read {path}: {exc}") from exc
    lines = [line.rstrip("\r") for line in text.split("\n")]
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path} is empty")
    if lines[0] != MODEL_HEADER:
        raise FormatError(f"{path}: unsupported model header {lines[0]!r}, expected {MODEL_HEADER!r}")

    reader = _ModelReader(lines)
    reader.position = 1
    try:
        distance_norm = DistanceNorm(reader.field("distance_norm"))
        beta = float(reader.field("beta"))
        k = int(reader.field("k"))
        meta = TrainingMeta(
            iterations=int(reader.field("iterations")),
            objective=float(reader.field("objective")),
            objective_history=tuple(_parse_floats(reader.field("objective_history"))),
            reseeded=int(reader.field("reseeded")),
        )
        timesteps = int(reader.field("timesteps"))
        fitted_on = reader.field("fitted_on")
        counters = int(reader.field("scaler"))
        scaler = None
        if counters:
            means, stds = [], []
            for index in range(counters):
                if reader.position >= len(lines):
                    raise FormatError("unexpected end of model file inside the scaler block")
                name, mean, std = lines[reader.position].split("\t")
                if name != _scaler_name(index):
                    raise FormatError(f"line {reader.position + 1}: scaler row {name!r} out of catalog order")
                reader.position += 1
                means.append(float(mean))
                stds.append(float(std))
            scaler = ScalerParams(means=np.array(means), stds=np.array(stds), timesteps=timesteps, fitted_on=fitted_on)

        clusters = []
        for _ in range(k):
            clusters.append(Cluster(
                id=int(reader.field("cluster")),
                label=decode_meta(reader.field("label")),
                member_count=int(reader.field("member_count")),
                radius_max=float(reader.field("radius_max")),
                radius_mean=float(reader.field("radius_mean")),
                radius_std=float(reader.field("radius_std")),
                centroid=np.array(_parse_floats(reader.field("centroid"))),
            ))
        if reader.position != len(lines):
            raise FormatError(f"line {reader.position + 1}: trailing content after {k} clusters")
        model = ClusterModel(
            clusters=tuple(clusters),
            scaler=scaler,
            distance_norm=distance_norm,
            beta=beta,
            training_meta=meta,
        )
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc

    if scaler is not None and scaler.timesteps * scaler.counters != model.dimension:
        raise FormatError(f"{path}: centroid length {model.dimension} does not match the scaler shape")
    logger.info("Loaded %d-cluster model from %s", model.k, path)
    return model
