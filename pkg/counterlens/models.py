from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import ShapeMismatch


class CounterKind(Enum):
    RATE = "rate-per-second"
    COUNT = "instantaneous-count"
    BYTES = "byte-count"
    PERCENTAGE = "percentage"

    @property
    def non_negative(self) -> bool:
        return self is not CounterKind.PERCENTAGE


@dataclass(frozen=True)
class CounterSpec:
    index: int
    name: str
    kind: CounterKind
    description: str = ""


# Per-program counters in catalog order; names double as CSV column headers.
COUNTER_CATALOG: tuple[CounterSpec, ...] = (
    CounterSpec(0, "%Privileged Time", CounterKind.PERCENTAGE,
                "Percentage of elapsed time spent executing code in privileged mode"),
    CounterSpec(1, "Handle Count", CounterKind.COUNT, "Total number of handles currently opened"),
    CounterSpec(2, "IO Read Operations/sec", CounterKind.RATE, "Rate of read operations"),
    CounterSpec(3, "IO Write Operations/sec", CounterKind.RATE, "Rate of write operations"),
    CounterSpec(4, "IO Data Operations/sec", CounterKind.RATE, "Rate of read and write operations"),
    CounterSpec(5, "IO Other Operations/sec", CounterKind.RATE,
                "Rate of IO operations other than read and write"),
    CounterSpec(6, "IO Read Bytes/sec", CounterKind.RATE, "Byte rate of read operations"),
    CounterSpec(7, "IO Write Bytes/sec", CounterKind.RATE, "Byte rate of write operations"),
    CounterSpec(8, "IO Data Bytes/sec", CounterKind.RATE, "Byte rate of read and write operations"),
    CounterSpec(9, "IO Other Bytes/sec", CounterKind.RATE,
                "Byte rate of IO operations other than read and write"),
    CounterSpec(10, "Page Faults/sec", CounterKind.RATE, "Rate of page faults"),
    CounterSpec(11, "Page File Bytes Peak", CounterKind.BYTES, "Maximum bytes used in the paging files"),
    CounterSpec(12, "Page File Bytes", CounterKind.BYTES, "Current bytes used in the paging files"),
    CounterSpec(13, "Pool Paged Bytes", CounterKind.BYTES, "Current bytes in the paged pool"),
    CounterSpec(14, "Pool Non-paged Bytes", CounterKind.BYTES, "Current bytes in the non-paged pool"),
    CounterSpec(15, "Private Bytes", CounterKind.BYTES, "Current bytes not shared with other processes"),
    CounterSpec(16, "Priority Base", CounterKind.COUNT, "Current base priority"),
    CounterSpec(17, "Thread Count", CounterKind.COUNT, "Number of active threads"),
    CounterSpec(18, "Virtual Bytes Peak", CounterKind.BYTES, "Maximum virtual address space used"),
    CounterSpec(19, "Virtual Bytes", CounterKind.BYTES, "Current virtual address space used"),
    CounterSpec(20, "Working Set Peak", CounterKind.BYTES, "Maximum working set size"),
    CounterSpec(21, "Working Set", CounterKind.BYTES, "Current working set size"),
    CounterSpec(22, "Working Set - Private", CounterKind.BYTES,
                "Current working set pages touched exclusively by the process"),
)

CATALOG_NAMES: tuple[str, ...] = tuple(spec.name for spec in COUNTER_CATALOG)
COUNTER_COUNT = len(COUNTER_CATALOG)

_BY_NAME = {spec.name: spec for spec in COUNTER_CATALOG}


def counter_by_name(name: str) -> CounterSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown counter: {name!r}") from None


def counter_index(name: str) -> int:
    return counter_by_name(name).index


def catalog_fingerprint() -> str:
    return hashlib.sha256("\n".join(CATALOG_NAMES).encode("utf-8")).hexdigest()


class Granularity(Enum):
    COARSE = "coarse"
    FINE = "fine"


class StartTrigger(Enum):
    MANUAL = "manual"
    ON_PROCESS_START = "on-process-start"


@dataclass(frozen=True)
class CollectionConfig:
    interval: float = 1.0
    window: float = 30.0
    counters: tuple[int, ...] = tuple(range(COUNTER_COUNT))
    start_trigger: StartTrigger = StartTrigger.MANUAL
    max_retries: int = 3
    include_children: bool = True
    start_timeout: float = 30.0

    def __post_init__(self):
        if not self.interval > 0:
            raise ValueError("interval must be positive")
        if self.window < self.interval:
            raise ValueError("window must be at least one interval")
        ratio = self.window / self.interval
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("window must be a whole number of intervals")
        if any(not 0 <= c < COUNTER_COUNT for c in self.counters):
            raise ValueError("counters must be catalog indices")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")

    @property
    def timesteps(self) -> int:
        return int(round(self.window / self.interval))


def _frozen_matrix(values) -> np.ndarray:
    matrix = np.array(values, dtype=np.float64)
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class ProgramSample:
    program: str
    group: str
    input_id: int
    run_id: int
    interval: float
    values: np.ndarray
    observed_rows: int
    start_time: Optional[datetime] = None
    missing_counters: tuple[int, ...] = ()

    def __post_init__(self):
        matrix = _frozen_matrix(self.values)
        if matrix.ndim != 2:
            raise ValueError("sample values must be a T x C matrix")
        object.__setattr__(self, "values", matrix)
        object.__setattr__(self, "missing_counters", tuple(sorted(set(self.missing_counters))))

    @property
    def timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def counters(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, observed_rows: Optional[int] = None) -> "ProgramSample":
        return replace(
            self,
            values=values,
            observed_rows=self.observed_rows if observed_rows is None else observed_rows,
        )

    def __eq__(self, other):
        if not isinstance(other, ProgramSample):
            return NotImplemented
        return (
            self.program == other.program
            and self.group == other.group
            and self.input_id == other.input_id
            and self.run_id == other.run_id
            and self.interval == other.interval
            and self.observed_rows == other.observed_rows
            and self.start_time == other.start_time
            and self.missing_counters == other.missing_counters
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[ProgramSample, ...] = ()

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            return
        first = samples[0]
        for position, sample in enumerate(samples[1:], start=1):
            if sample.values.shape != first.values.shape:
                raise ShapeMismatch(
                    f"sample {position} has shape {sample.values.shape}, expected {first.values.shape}"
                )
            if sample.interval != first.interval:
                raise ShapeMismatch(
                    f"sample {position} has interval {sample.interval}, expected {first.interval}"
                )

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, item):
        return self.samples[item]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self.samples) == len(other.samples) and all(
            a == b for a, b in zip(self.samples, other.samples)
        )

    __hash__ = None

    @property
    def timesteps(self) -> Optional[int]:
        return self.samples[0].timesteps if self.samples else None

    @property
    def interval(self) -> Optional[float]:
        return self.samples[0].interval if self.samples else None

    @staticmethod
    def label_of(sample: ProgramSample, granularity: Granularity = Granularity.FINE) -> str:
        return sample.program if granularity is Granularity.FINE else sample.group

    def labels(self, granularity: Granularity = Granularity.FINE) -> list[str]:
        return [self.label_of(sample, granularity) for sample in self.samples]

    def programs(self) -> list[str]:
        return list(dict.fromkeys(sample.program for sample in self.samples))

    def groups(self) -> list[str]:
        return list(dict.fromkeys(sample.group for sample in self.samples))

    def by_label(self, granularity: Granularity = Granularity.FINE) -> dict[str, list[ProgramSample]]:
        grouped: dict[str, list[ProgramSample]] = {}
        for sample in self.samples:
            grouped.setdefault(self.label_of(sample, granularity), []).append(sample)
        return grouped

    def select(self, labels: Iterable[str], granularity: Granularity = Granularity.FINE) -> "Dataset":
        wanted = set(labels)
        return Dataset(tuple(s for s in self.samples if self.label_of(s, granularity) in wanted))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for sample in self.samples:
            digest.update(
                f"{sample.program}|{sample.group}|{sample.input_id}|{sample.run_id}|"
                f"{sample.interval!r}|{sample.observed_rows}".encode("utf-8")
            )
            digest.update(np.ascontiguousarray(sample.values).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class ScalerParams:
    means: np.ndarray
    stds: np.ndarray
    timesteps: int
    fitted_on: str = ""

    def __post_init__(self):
        means = _frozen_matrix(self.means)
        stds = _frozen_matrix(self.stds)
        if means.shape != stds.shape or means.ndim != 1:
            raise ValueError("means and stds must be vectors of equal length")
        if np.any(stds <= 0):
            raise ValueError("every std must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def counters(self) -> int:
        return self.means.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return (
            self.timesteps == other.timesteps
            and self.fitted_on == other.fitted_on
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.stds, other.stds)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    origin: Optional[ProgramSample] = None

    def __post_init__(self):
        vector = _frozen_matrix(self.values).reshape(-1)
        if not np.all(np.isfinite(vector)):
            raise ValueError("feature vectors must be finite")
        object.__setattr__(self, "values", vector)

    def __len__(self):
        return self.values.shape[0]


class DistanceNorm(Enum):
    RADIUS_MAX = "radius-max"
    Z_SCORE = "z-score"


@dataclass(frozen=True, eq=False)
class Cluster:
    id: int
    label: str
    centroid: np.ndarray
    member_count: int
    radius_max: float
    radius_mean: float
    radius_std: float

    def __post_init__(self):
        object.__setattr__(self, "centroid", _frozen_matrix(self.centroid).reshape(-1))
        if not self.radius_max >= self.radius_mean >= 0:
            raise ValueError("cluster radii must satisfy radius_max >= radius_mean >= 0")
        if self.radius_std < 0:
            raise ValueError("radius_std must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.member_count == other.member_count
            and self.radius_max == other.radius_max
            and self.radius_mean == other.radius_mean
            and self.radius_std == other.radius_std
            and np.array_equal(self.centroid, other.centroid)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainingMeta:
    iterations: int = 0
    objective: float = 0.0
    objective_history: tuple[float, ...] = ()
    reseeded: int = 0


@dataclass(frozen=True, eq=False)
class ClusterModel:
    clusters: tuple[Cluster, ...]
    scaler: Optional[ScalerParams] = None
    distance_norm: DistanceNorm = DistanceNorm.RADIUS_MAX
    beta: float = 1.0
    training_meta: TrainingMeta = field(default_factory=TrainingMeta)

    def __post_init__(self):
        clusters = tuple(self.clusters)
        object.__setattr__(self, "clusters", clusters)
        if not clusters:
            raise ValueError("a model needs at least one cluster")
        if [c.id for c in clusters] != list(range(len(clusters))):
            raise ValueError("cluster ids must be 0..k-1 in order")
        widths = {c.centroid.shape[0] for c in clusters}
        if len(widths) != 1:
            raise ValueError("all centroids must have the same length")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def dimension(self) -> int:
        return self.clusters[0].centroid.shape[0]

    @cached_property
    def centroids(self) -> np.ndarray:
        return np.vstack([c.centroid for c in self.clusters])

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.clusters]

    def cluster_by_label(self, label: str) -> Cluster:
        for cluster in self.clusters:
            if cluster.label == label:
                return cluster
        raise KeyError(label)

    def with_beta(self, beta: float) -> "ClusterModel":
        return replace(self, beta=beta)

    def with_distance_norm(self, distance_norm: DistanceNorm) -> "ClusterModel":
        return replace(self, distance_norm=distance_norm)

    def __eq__(self, other):
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (
            self.clusters == other.clusters
            and self.scaler == other.scaler
            and self.distance_norm is other.distance_norm
            and self.beta == other.beta
            and self.training_meta == other.training_meta
        )

    __hash__ = None


@dataclass(frozen=True)
class NearestClusterResult:
    cluster_id: int
    raw_distance: float
    normalized_distance: float


class VerdictKind(Enum):
    ASSIGNED = "ASSIGNED"
    NEW_CLUSTER = "NEW_CLUSTER"


@dataclass(frozen=True)
class DetectionVerdict:
    kind: VerdictKind
    distance: float
    cluster_id: Optional[int] = None
    label: Optional[str] = None

    @classmethod
    def assigned(cls, cluster: Cluster, distance: float) -> "DetectionVerdict":
        return cls(VerdictKind.ASSIGNED, distance, cluster.id, cluster.label)

    @classmethod
    def new_cluster(cls, distance: float) -> "DetectionVerdict":
        return cls(VerdictKind.NEW_CLUSTER, distance)

    @property
    def is_new_cluster(self) -> bool:
        return self.kind is VerdictKind.NEW_CLUSTER


@dataclass(frozen=True)
class DistanceSummary:
    cluster_id: int
    label: str
    mean: float
    q1: float
    median: float
    q3: float
    minimum: float
    maximum: float
    count: int


class TrialOutcome(Enum):
    DETECTED = "Detected"
    NOT_DETECTED = "NotDetected"


@dataclass(frozen=True)
class UnknownTrial:
    seed_programs: tuple[str, ...]
    unknown_program: str
    outcome: Optional[TrialOutcome] = None
    median_distance: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "seed_programs", tuple(self.seed_programs))
        names = self.seed_programs + (self.unknown_program,)
        if len(set(names)) != len(names):
            raise ValueError("seed and unknown programs must all be distinct")

    @property
    def is_detected(self) -> bool:
        return self.outcome is TrialOutcome.DETECTED


@dataclass(frozen=True)
class ValidationTrial:
    seed_programs: tuple[str, ...]
    target_program: str
    expected: TrialOutcome

    def __post_init__(self):
        object.__setattr__(self, "seed_programs", tuple(self.seed_programs))
        if len(set(self.seed_programs)) != len(self.seed_programs):
            raise ValueError("seed programs must be distinct")
        known = self.target_program in self.seed_programs
        if known != (self.expected is TrialOutcome.NOT_DETECTED):
            raise ValueError("the target is expected undetected exactly when it is a seed program")


@dataclass(frozen=True)
class GridSearchResult:
    best_beta: float
    scores: tuple[tuple[float, float], ...]


class TrendKind(Enum):
    CONSTANT = "constant"
    LINEAR_RAMP = "linear-ramp"
    SATURATING_RAMP = "saturating-ramp"
    BURST = "burst"


@dataclass(frozen=True)
class CounterTrend:
    kind: TrendKind
    base: float
    slope: float = 0.0
    amplitude: float = 0.0
    tau: float = 5.0
    burst_ticks: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base < 0:
            raise ValueError("trend base level must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def evaluate(self, ticks: np.ndarray) -> np.ndarray:
        ticks = np.asarray(ticks, dtype=np.float64)
        if self.kind is TrendKind.CONSTANT:
            return np.full(ticks.shape, self.base)
        if self.kind is TrendKind.LINEAR_RAMP:
            return self.base + self.slope * ticks
        if self.kind is TrendKind.SATURATING_RAMP:
            return self.base + self.amplitude * (1.0 - np.exp(-ticks / self.tau))
        bursts = np.isin(ticks.astype(int), self.burst_ticks)
        return np.where(bursts, self.base + self.amplitude, self.base)


@dataclass(frozen=True)
class Archetype:
    name: str
    group: str
    trends: tuple[CounterTrend, ...]
    noise_std: tuple[float, ...]
    input_spread: tuple[float, ...] = (0.0,) * COUNTER_COUNT

    def __post_init__(self):
        for attr in ("trends", "noise_std", "input_spread"):
            value = tuple(getattr(self, attr))
            object.__setattr__(self, attr, value)
            if len(value) != COUNTER_COUNT:
                raise ValueError(f"{attr} needs one entry per counter")
        if any(s < 0 for s in self.noise_std) or any(s < 0 for s in self.input_spread):
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class DeviationReport:
    verdicts: tuple[DetectionVerdict, ...]
    split_matches: Optional[bool]
    two_means_assignment: tuple[int, ...] = ()

    @property
    def new_cluster_fraction(self) -> float:
        if not self.verdicts:
            return 0.0
        return sum(v.is_new_cluster for v in self.verdicts) / len(self.verdicts)


@dataclass(frozen=True)
class HoldoutReport:
    held_out: str
    granularity: Granularity
    verdicts: tuple[DetectionVerdict, ...]

    @property
    def new_cluster_fraction(self) -> float:
        return sum(v.is_new_cluster for v in self.verdicts) / len(self.verdicts)

    @property
    def detected(self) -> bool:
        return self.new_cluster_fraction > 0.5


@dataclass(frozen=True)
class ClusteringReport:
    granularity: Granularity
    model: ClusterModel
    intra: tuple[DistanceSummary, ...]
    inter: tuple[DistanceSummary, ...]
    purity: float

    @property
    def separated_fraction(self) -> float:
        """Fraction of clusters whose intra-cluster mean is below their inter-cluster mean."""
        inter = {s.cluster_id: s.mean for s in self.inter}
        checked = [s for s in self.intra if s.cluster_id in inter]
        if not checked:
            return 0.0
        return sum(s.mean < inter[s.cluster_id] for s in checked) / len(checked)


@dataclass(frozen=True)
class EnvironmentShiftReport:
    factors: tuple[tuple[int, float], ...]
    stale_assigned_fraction: float
    stale_accuracy: float
    retrained_assigned_fraction: float
    retrained_accuracy: float


def stack_vectors(vectors: Sequence) -> np.ndarray:
    """Stack FeatureVectors or raw arrays into an (n, d) float matrix."""
    rows = [v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64).reshape(-1)
            for v in vectors]
    if not rows:
        return np.empty((0, 0))
    widths = {row.shape[0] for row in rows}
    if len(widths) != 1:
        raise ShapeMismatch(f"vectors have differing lengths: {sorted(widths)}")
    return np.vstack(rows)
