import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from counterlens.exceptions import (
    DegenerateClusterWarning,
    EmptyNormal,
    EmptyTrials,
    EmptyValidation,
    MissingProgramData,
    TooFewPrograms,
)
from counterlens.models import COUNTER_COUNT, Dataset, Granularity, TrialOutcome, UnknownTrial, counter_index
from counterlens.services.evaluation import (
    DISTANCE_REPORT_HEADER,
    beta_grid,
    best_beta_from_distances,
    cluster_purity,
    clustering_report,
    detection_ratio,
    deviation_experiment,
    enumerate_unknown_trials,
    environment_shift_experiment,
    grid_search_beta,
    make_validation_trials,
    read_embedding_input,
    run_holdout_experiment,
    run_unknown_trial,
    run_unknown_trials,
    sample_trials,
    shift_counters,
    write_distance_report,
    write_embedding_input,
    write_trial_log,
)
from counterlens.services.preprocess import fit_scaler

DEVIATED = [counter_index(name) for name in
            ("Page File Bytes", "IO Data Operations/sec", "Handle Count", "Pool Paged Bytes")]
SEEDS = ("texteditor-a", "browser-a", "imageviewer-a")


def _names(n):
    return [f"p{i:02d}" for i in range(n)]


def _finished(outcomes):
    return [
        UnknownTrial(("a", "b", "c"), f"u{i}", outcome=outcome)
        for i, outcome in enumerate(outcomes)
    ]


def _program(dataset, program):
    return [s for s in dataset if s.program == program]


def test_eighteen_programs_give_12240_trials():
    assert len(enumerate_unknown_trials(_names(18))) == 12240


@pytest.mark.parametrize("n", range(4, 19))
def test_trial_count_closed_form(n):
    assert len(enumerate_unknown_trials(_names(n))) == math.comb(n, 3) * (n - 3)


def test_small_enumerations_are_deterministic():
    assert len(enumerate_unknown_trials(_names(4))) == 4
    trials = enumerate_unknown_trials(_names(5))
    assert len(trials) == 20
    assert trials == enumerate_unknown_trials(_names(5))
    assert trials[0] == UnknownTrial(("p00", "p01", "p02"), "p03")


def test_too_few_programs():
    with pytest.raises(TooFewPrograms):
        enumerate_unknown_trials(_names(3))


def test_detection_ratio():
    assert detection_ratio(_finished([TrialOutcome.DETECTED] * 3)) == 1.0
    assert detection_ratio(_finished([TrialOutcome.DETECTED, TrialOutcome.NOT_DETECTED] * 2)) == 0.5
    table = [TrialOutcome.DETECTED] * 15
    table[5] = table[8] = TrialOutcome.NOT_DETECTED
    assert detection_ratio(_finished(table)) == pytest.approx(13 / 15)
    with pytest.raises(EmptyTrials):
        detection_ratio([])


def test_sample_trials_is_seeded_and_ordered():
    templates = enumerate_unknown_trials(_names(8))
    first = sample_trials(templates, 10, np.random.default_rng(7))
    second = sample_trials(templates, 10, np.random.default_rng(7))
    assert first == second
    assert len(first) == 10
    assert [templates.index(t) for t in first] == sorted(templates.index(t) for t in first)
    assert sample_trials(templates, 10_000, np.random.default_rng(7)) == templates


def test_distinct_program_is_detected(small_corpus):
    trial = run_unknown_trial(UnknownTrial(SEEDS, "audioplayer-a"), small_corpus)
    assert trial.outcome is TrialOutcome.DETECTED
    assert trial.median_distance > 1.0
    assert trial.seed_programs == SEEDS


def test_copy_of_a_seed_program_is_not_detected(small_corpus):
    twins = [replace(s, program="twin") for s in _program(small_corpus, "browser-a")]
    dataset = Dataset(tuple(small_corpus) + tuple(twins))
    trial = run_unknown_trial(UnknownTrial(SEEDS, "twin"), dataset)
    assert trial.outcome is TrialOutcome.NOT_DETECTED
    assert trial.median_distance <= 1.0


def test_trial_needs_data_for_every_program(small_corpus):
    with pytest.raises(MissingProgramData, match="ghost"):
        run_unknown_trial(UnknownTrial(SEEDS, "ghost"), small_corpus)


def test_trials_are_reproducible_and_order_independent(small_corpus):
    templates = enumerate_unknown_trials(small_corpus.programs())[:6]
    serial = run_unknown_trials(templates, small_corpus)
    parallel = run_unknown_trials(templates, small_corpus, workers=3)
    assert serial == parallel
    assert serial == run_unknown_trials(templates, small_corpus)


def test_validation_trials_pair_each_template():
    templates = enumerate_unknown_trials(_names(5))[:3]
    validation = make_validation_trials(templates, np.random.default_rng(1))
    assert len(validation) == 6
    assert [v.expected for v in validation[:2]] == [TrialOutcome.DETECTED, TrialOutcome.NOT_DETECTED]
    assert validation[0].target_program == templates[0].unknown_program
    assert validation[1].target_program in templates[0].seed_programs


def test_beta_grid():
    grid = beta_grid(0.0, 1.0, 0.1)
    assert len(grid) == 11
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert grid[6] == 0.6
    with pytest.raises(ValueError):
        beta_grid(0.0, 1.0, 0.0)


def test_best_beta_is_the_smallest_perfect_threshold():
    result = best_beta_from_distances(
        [np.array([2.0]), np.array([0.5])],
        [TrialOutcome.DETECTED, TrialOutcome.NOT_DETECTED],
        beta_grid(0.0, 1.0, 0.1),
    )
    assert result.best_beta == 0.6
    assert len(result.scores) == 11
    assert dict(result.scores)[0.5] == 0.5
    assert dict(result.scores)[1.0] == 1.0


def test_best_beta_matches_exhaustive_search():
    rng = np.random.default_rng(9)
    sets = [rng.uniform(0.0, 2.0, size=5) for _ in range(12)]
    expected = [TrialOutcome.DETECTED if i % 2 else TrialOutcome.NOT_DETECTED for i in range(12)]
    grid = beta_grid(0.0, 2.0, 0.05)
    result = best_beta_from_distances(sets, expected, grid)

    def accuracy(beta):
        hits = [(np.sum(d >= beta) * 2 > len(d)) == (e is TrialOutcome.DETECTED) for d, e in zip(sets, expected)]
        return sum(hits) / len(hits)

    best = max(accuracy(b) for b in grid)
    assert result.best_beta == min(b for b in grid if accuracy(b) == best)


def test_grid_search_needs_validation(small_corpus):
    with pytest.raises(EmptyValidation):
        grid_search_beta(small_corpus, [])
    with pytest.raises(EmptyValidation):
        best_beta_from_distances([], [], [0.5])


def test_grid_search_on_the_small_corpus(small_corpus):
    templates = enumerate_unknown_trials(small_corpus.programs())[:4]
    validation = make_validation_trials(templates, np.random.default_rng(3))
    result = grid_search_beta(small_corpus, validation, step=0.1)
    grid = beta_grid(0.0, 1.0, 0.1)
    assert result.best_beta in grid
    assert 0.0 <= result.best_beta <= 1.0
    assert dict(result.scores)[result.best_beta] == max(score for _, score in result.scores)
    assert grid_search_beta(small_corpus, validation, step=0.1) == result


def test_copies_of_normal_are_assigned_and_not_split(small_corpus):
    normal = _program(small_corpus, "texteditor-a")
    with pytest.warns(DegenerateClusterWarning):
        report = deviation_experiment(normal, list(normal), beta=1.5)
    assert len(report.verdicts) == len(normal)
    assert all(v.label == "normal" for v in report.verdicts)
    assert report.new_cluster_fraction == 0.0
    assert report.split_matches is False


def test_shifted_counters_are_flagged_and_split(small_corpus):
    normal = _program(small_corpus, "texteditor-a")
    stds = fit_scaler(Dataset(tuple(normal))).stds
    suspect = shift_counters(normal, DEVIATED, 10.0 * stds[DEVIATED])
    report = deviation_experiment(normal, suspect)
    assert report.new_cluster_fraction == 1.0
    assert report.split_matches is True
    assert report.two_means_assignment == (0,) * len(normal) + (1,) * len(suspect)


def test_suspect_at_the_normal_mean_has_zero_distance(small_corpus, make_sample):
    normal = _program(small_corpus, "texteditor-a")
    centre = make_sample(values=np.mean([s.values for s in normal], axis=0))
    report = deviation_experiment(normal, [centre])
    (verdict,) = report.verdicts
    assert not verdict.is_new_cluster
    assert verdict.distance == pytest.approx(0.0, abs=1e-9)


def test_deviation_without_suspects(small_corpus):
    report = deviation_experiment(_program(small_corpus, "browser-a"), [])
    assert report.verdicts == ()
    assert report.split_matches is None
    with pytest.raises(EmptyNormal):
        deviation_experiment([], _program(small_corpus, "browser-a"))


def test_shift_counters_only_touches_listed_counters(make_sample):
    (shifted,) = shift_counters([make_sample(fill=1.0)], [2, 5], 4.0)
    assert np.all(shifted.values[:, [2, 5]] == 5.0)
    assert np.all(np.delete(shifted.values, [2, 5], axis=1) == 1.0)


def test_cluster_purity():
    assert cluster_purity([0, 0, 1, 1], ["a", "a", "a", "b"]) == 0.75
    assert cluster_purity([0, 1, 2], ["a", "b", "c"]) == 1.0


@pytest.mark.parametrize("granularity,k", [(Granularity.FINE, 5), (Granularity.COARSE, 4)])
def test_clustering_report(small_corpus, granularity, k):
    report = clustering_report(small_corpus, granularity)
    assert report.model.k == k
    assert report.purity == 1.0
    assert len(report.intra) == k
    assert len(report.inter) == k
    assert report.separated_fraction == 1.0


def test_single_label_report_has_no_inter_distances(small_corpus):
    report = clustering_report(Dataset(tuple(_program(small_corpus, "browser-a"))))
    assert report.model.k == 1
    assert report.inter == ()
    assert report.separated_fraction == 0.0


def test_held_out_group_is_detected(small_corpus):
    report = run_holdout_experiment(small_corpus, Granularity.COARSE, "audio-player")
    assert len(report.verdicts) == 8
    assert report.detected
    with pytest.raises(MissingProgramData):
        run_holdout_experiment(small_corpus, Granularity.COARSE, "spreadsheet")


def test_environment_shift_needs_retraining(small_corpus):
    handles = counter_index("Handle Count")
    report = environment_shift_experiment(small_corpus, {handles: 1000.0}, beta=3.0)
    assert report.factors == ((handles, 1000.0),)
    assert report.stale_assigned_fraction == 0.0
    assert report.retrained_accuracy > 0.9
    with pytest.raises(ValueError):
        environment_shift_experiment(small_corpus, {handles: 0.0})


def test_distance_report_file(tmp_path, small_corpus):
    report = clustering_report(small_corpus, Granularity.COARSE)
    path = tmp_path / "intra.csv"
    write_distance_report(report.intra, path)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == DISTANCE_REPORT_HEADER
    assert len(rows) == 5
    assert rows[1][1] == report.model.labels[0]
    assert float(rows[1][2]) == report.intra[0].mean


def test_trial_log(tmp_path):
    trials = [
        UnknownTrial(("a", "b", "c"), "d", outcome=TrialOutcome.DETECTED, median_distance=2.5),
        UnknownTrial(("a", "b", "d"), "c", outcome=TrialOutcome.NOT_DETECTED, median_distance=0.25),
    ]
    path = tmp_path / "trials.log"
    assert write_trial_log(trials, path) == 0.5
    assert path.read_text().splitlines() == [
        "a;b;c\td\tDetected\t2.5",
        "a;b;d\tc\tNotDetected\t0.25",
        "# detection_ratio 0.5",
    ]


def test_embedding_export_round_trips(tmp_path):
    rng = np.random.default_rng(2)
    vectors = rng.normal(size=(4, 30 * COUNTER_COUNT))
    labels = ["a", "b", "with\ttab", "a"]
    path = tmp_path / "embed.tsv"
    assert write_embedding_input(vectors, labels, path) == 4
    matrix, read_labels = read_embedding_input(path)
    assert np.array_equal(matrix, vectors)
    assert read_labels == labels
    assert len(path.read_text().splitlines()[0].split("\t")) == 691


def test_single_vector_export(tmp_path):
    path = tmp_path / "one.tsv"
    assert write_embedding_input([np.ones(3)], ["x"], path) == 1
    assert path.read_text() == "1.0\t1.0\t1.0\tx\n"
