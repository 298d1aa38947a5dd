import numpy as np
from sklearn.preprocessing import StandardScaler

from counterlens.exceptions import EmptyDataset, ShapeMismatch
from counterlens.models import Dataset, FeatureVector, ProgramSample, ScalerParams


def fit_scaler(train: Dataset) -> ScalerParams:
    """
    Per-counter z-score parameters pooled over every tick of every training sample.

    Counters with (numerically) zero variance get scale 1 from StandardScaler,
    so they only center.
    """
    if not len(train):
        raise EmptyDataset("cannot fit a scaler on an empty dataset")
    scaler = StandardScaler().fit(np.vstack([sample.values for sample in train]))
    return ScalerParams(
        means=scaler.mean_, stds=scaler.scale_, timesteps=train.timesteps, fitted_on=train.fingerprint()
    )


def _scaled_matrix(sample: ProgramSample, scaler: ScalerParams) -> np.ndarray:
    if sample.values.shape != (scaler.timesteps, scaler.counters):
        raise ShapeMismatch(
            f"sample {sample.program!r} has shape {sample.values.shape}, "
            f"scaler expects {(scaler.timesteps, scaler.counters)}"
        )
    return (sample.values - scaler.means) / scaler.stds


def vectorize(sample: ProgramSample, scaler: ScalerParams) -> FeatureVector:
    # counter-major: element c*T + t holds tick t of counter c
    return FeatureVector(_scaled_matrix(sample, scaler).T.reshape(-1), origin=sample)


def vectorize_dataset(dataset: Dataset, scaler: ScalerParams) -> np.ndarray:
    """(N, T*C) matrix of the vectorized samples, in dataset order."""
    if not len(dataset):
        return np.empty((0, scaler.timesteps * scaler.counters))
    return np.vstack([_scaled_matrix(sample, scaler).T.reshape(-1) for sample in dataset])


def align(sample: ProgramSample, expected_T: int) -> ProgramSample:
    rows = sample.timesteps
    if rows == expected_T:
        return sample
    if rows > expected_T:
        return sample.with_values(
            sample.values[:expected_T],
            observed_rows=min(sample.observed_rows, expected_T),
        )
    padding = np.repeat(sample.values[-1:], expected_T - rows, axis=0)
    return sample.with_values(np.vstack([sample.values, padding]))
