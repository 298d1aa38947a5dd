import click
import numpy as np
from flask import current_app

from counterlens.exceptions import FormatError
from counterlens.models import Granularity, counter_index
from counterlens.services import evaluation
from counterlens.services.cluster_engine import (
    assign_members,
    inter_cluster_distances,
    intra_cluster_distances,
    load_model,
)
from counterlens.services.dataset_io import export_csv, import_csv
from counterlens.services.preprocess import fit_scaler, vectorize_dataset
from counterlens.services.synthetic import default_archetypes, generate_synthetic
from counterlens.utils import format_distance, format_float
from counterlens.validators import validate_counter_factor

from . import GRANULARITY_CHOICE, NORM_CHOICE, config_value, handle_errors, resolve_beta, resolve_norm

data_option = click.option("--data", required=True, type=click.Path(dir_okay=False), help="Sample CSV.")
norm_option = click.option("--distance-norm", type=NORM_CHOICE, default=None)
beta_option = click.option("--beta", type=float, default=None)
seed_option = click.option("--rng-seed", type=int, default=None)
granularity_option = click.option(
    "--granularity", type=GRANULARITY_CHOICE, default=Granularity.FINE.value, show_default=True
)


@click.group("evaluate")
def evaluate():
    """Experiments and report exports."""


@evaluate.command("distances")
@data_option
@granularity_option
@click.option("--model", "model_path", type=click.Path(dir_okay=False), help="Use a trained model instead of training.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Intra-cluster CSV.")
@click.option("--inter-out", type=click.Path(dir_okay=False), help="Inter-cluster CSV.")
@norm_option
@handle_errors
def distances(data, granularity, model_path, out, inter_out, distance_norm):
    """Box-plot summaries of intra- and inter-cluster distances."""
    dataset = import_csv(data)
    if model_path:
        model = load_model(model_path)
        if model.scaler is None:
            raise FormatError(f"{model_path} carries no scaler")
        matrix = vectorize_dataset(dataset, model.scaler)
        intra = intra_cluster_distances(model, assign_members(model, matrix))
        inter = inter_cluster_distances(model) if model.k > 1 else ()
    else:
        report = evaluation.clustering_report(
            dataset,
            Granularity(granularity),
            distance_norm=resolve_norm(distance_norm),
            max_iter=current_app.config["MAX_ITER"],
            tol=current_app.config["TOL"],
        )
        intra, inter = report.intra, report.inter
        click.echo(f"purity={format_float(report.purity)} separated={format_float(report.separated_fraction)}")

    evaluation.write_distance_report(intra, out)
    if inter_out:
        evaluation.write_distance_report(inter, inter_out)
    inter_means = {s.cluster_id: s.mean for s in inter}
    for s in intra:
        click.echo(
            f"cluster {s.cluster_id} {s.label}: intra_mean={format_distance(s.mean)} "
            f"inter_mean={format_distance(inter_means.get(s.cluster_id))}"
        )


@evaluate.command("unknown")
@data_option
@click.option("--n-trials", type=click.IntRange(min=1), default=5000, show_default=True)
@click.option("--n-seed", type=click.IntRange(min=1), default=3, show_default=True)
@seed_option
@beta_option
@norm_option
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Trial log to write.")
@handle_errors
def unknown(data, n_trials, n_seed, rng_seed, beta, distance_norm, workers, out):
    """Unknown-program detection over sampled seed/unknown combinations."""
    dataset = import_csv(data)
    rng = np.random.default_rng(config_value("RNG_SEED", rng_seed))
    templates = evaluation.enumerate_unknown_trials(dataset.programs(), n_seed)
    trials = evaluation.run_unknown_trials(
        evaluation.sample_trials(templates, n_trials, rng),
        dataset,
        beta=resolve_beta(beta),
        distance_norm=resolve_norm(distance_norm),
        workers=workers,
        max_iter=current_app.config["MAX_ITER"],
        tol=current_app.config["TOL"],
    )
    ratio = evaluation.write_trial_log(trials, out)
    click.echo(f"trials={len(trials)} of {len(templates)}")
    click.echo(f"detection_ratio {format_float(ratio)}")


@evaluate.command("grid-search")
@data_option
@click.option("--n-trials", type=click.IntRange(min=1), default=100, show_default=True,
              help="Unknown-trial templates turned into validation trials.")
@click.option("--lo", "range_lo", type=float, default=0.0, show_default=True)
@click.option("--hi", "range_hi", type=float, default=1.0, show_default=True)
@click.option("--step", type=float, default=0.1, show_default=True)
@seed_option
@norm_option
@handle_errors
def grid_search(data, n_trials, range_lo, range_hi, step, rng_seed, distance_norm):
    """Pick beta by validation accuracy over a grid."""
    dataset = import_csv(data)
    seed = config_value("RNG_SEED", rng_seed)
    rng = np.random.default_rng(seed)
    try:
        evaluation.beta_grid(range_lo, range_hi, step)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--lo/--hi/--step") from None
    templates = evaluation.sample_trials(evaluation.enumerate_unknown_trials(dataset.programs()), n_trials, rng)
    result = evaluation.grid_search_beta(
        dataset,
        evaluation.make_validation_trials(templates, rng),
        range_lo,
        range_hi,
        step,
        distance_norm=resolve_norm(distance_norm),
        rng_seed=seed,
        max_iter=current_app.config["MAX_ITER"],
        tol=current_app.config["TOL"],
    )
    for beta, score in result.scores:
        click.echo(f"beta={format_float(beta)} accuracy={format_float(score)}")
    click.echo(f"best_beta {format_float(result.best_beta)}")


@evaluate.command("deviation")
@click.option("--normal", "normal_path", required=True, type=click.Path(dir_okay=False))
@click.option("--suspect", "suspect_path", required=True, type=click.Path(dir_okay=False))
@click.option("--program", help="Use only this program's samples from both files.")
@beta_option
@norm_option
@click.pass_context
@handle_errors
def deviation(ctx, normal_path, suspect_path, program, beta, distance_norm):
    """Check whether fresh samples deviate from a program's normal behaviour."""
    normal = list(import_csv(normal_path))
    suspect = list(import_csv(suspect_path))
    if program:
        normal = [s for s in normal if s.program == program]
        suspect = [s for s in suspect if s.program == program]
    report = evaluation.deviation_experiment(
        normal,
        suspect,
        beta=resolve_beta(beta),
        distance_norm=resolve_norm(distance_norm),
        max_iter=current_app.config["MAX_ITER"],
        tol=current_app.config["TOL"],
    )
    for verdict in report.verdicts:
        if verdict.is_new_cluster:
            click.echo(f"NEW_CLUSTER d={format_distance(verdict.distance)}")
        else:
            click.echo(f"ASSIGNED {verdict.label} d={format_distance(verdict.distance)}")
    if report.split_matches is not None:
        click.echo(f"two_means_split_matches {str(report.split_matches).lower()}")
    if any(v.is_new_cluster for v in report.verdicts):
        ctx.exit(1)


@evaluate.command("synth")
@click.option("--programs", type=click.IntRange(1, 18), default=18, show_default=True)
@click.option("--per", type=click.IntRange(min=1), default=20, show_default=True, help="Samples per program.")
@click.option("--timesteps", type=click.IntRange(min=1), default=None)
@click.option("--runs-per-input", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--confusable/--separable", default=True, show_default=True,
              help="Ship the two near-duplicate browser archetypes.")
@seed_option
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def synth(programs, per, timesteps, runs_per_input, confusable, rng_seed, out):
    """Write a synthetic corpus from the shipped archetype library."""
    interval = current_app.config["INTERVAL"]
    if timesteps is None:
        timesteps = max(1, int(round(current_app.config["WINDOW"] / interval)))
    dataset = generate_synthetic(
        default_archetypes(confusable)[:programs],
        per,
        T=timesteps,
        rng_seed=config_value("RNG_SEED", rng_seed),
        runs_per_input=runs_per_input,
        interval=interval,
    )
    export_csv(dataset, out)
    click.echo(f"samples={len(dataset)} programs={len(dataset.programs())} timesteps={timesteps}")


@evaluate.command("embed-export")
@data_option
@granularity_option
@click.option("--model", "model_path", type=click.Path(dir_okay=False), help="Scale with a trained model's scaler.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def embed_export(data, granularity, model_path, out):
    """Export scaled feature vectors for external 2-D embedding tools."""
    dataset = import_csv(data)
    scaler = load_model(model_path).scaler if model_path else fit_scaler(dataset)
    if scaler is None:
        raise FormatError(f"{model_path} carries no scaler")
    rows = evaluation.write_embedding_input(
        vectorize_dataset(dataset, scaler), dataset.labels(Granularity(granularity)), out
    )
    click.echo(f"rows={rows} columns={scaler.timesteps * scaler.counters + 1}")


@evaluate.command("holdout")
@data_option
@granularity_option
@click.option("--label", required=True, help="Program or group left out of the seeds.")
@beta_option
@norm_option
@handle_errors
def holdout(data, granularity, label, beta, distance_norm):
    """Seed every other label and test whether the held-out one forms a new cluster."""
    report = evaluation.run_holdout_experiment(
        import_csv(data),
        Granularity(granularity),
        label,
        beta=resolve_beta(beta),
        distance_norm=resolve_norm(distance_norm),
        max_iter=current_app.config["MAX_ITER"],
        tol=current_app.config["TOL"],
    )
    click.echo(f"new_cluster_fraction={format_float(report.new_cluster_fraction)}")
    click.echo("DETECTED" if report.detected else "NOT_DETECTED")


def _parse_factors(texts):
    factors = {}
    for text in texts:
        is_valid, error = validate_counter_factor(text)
        if not is_valid:
            raise click.BadParameter(error, param_hint="--factor")
        name, _, factor = text.rpartition("=")
        factors[counter_index(name.strip())] = float(factor)
    return factors


@evaluate.command("env-shift")
@data_option
@click.option("--factor", "factor_texts", multiple=True, required=True,
              help="'<counter name>=<factor>'; repeat for several counters.")
@beta_option
@norm_option
@seed_option
@handle_errors
def env_shift(data, factor_texts, beta, distance_norm, rng_seed):
    """Compare a stale model with a retrained one after an environment change."""
    report = evaluation.environment_shift_experiment(
        import_csv(data),
        _parse_factors(factor_texts),
        beta=resolve_beta(beta),
        distance_norm=resolve_norm(distance_norm),
        rng_seed=config_value("RNG_SEED", rng_seed),
        max_iter=current_app.config["MAX_ITER"],
        tol=current_app.config["TOL"],
    )
    click.echo(
        f"stale assigned={format_float(report.stale_assigned_fraction)} "
        f"accuracy={format_float(report.stale_accuracy)}"
    )
    click.echo(
        f"retrained assigned={format_float(report.retrained_assigned_fraction)} "
        f"accuracy={format_float(report.retrained_accuracy)}"
    )
