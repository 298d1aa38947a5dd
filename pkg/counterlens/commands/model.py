import click

from counterlens.exceptions import FormatError
from counterlens.models import DistanceNorm, Granularity
from counterlens.services.cluster_engine import cluster_program, load_model, save_model, seeded_kmeans
from counterlens.services.dataset_io import import_csv
from counterlens.services.preprocess import fit_scaler, vectorize_dataset
from counterlens.utils import format_distance, format_float

from . import GRANULARITY_CHOICE, NORM_CHOICE, config_value, handle_errors, resolve_beta, resolve_norm


@click.command("train")
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="Labeled sample CSV.")
@click.option("--granularity", type=GRANULARITY_CHOICE, default=Granularity.FINE.value, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model file to write.")
@click.option("--distance-norm", type=NORM_CHOICE, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--max-iter", type=click.IntRange(min=1), default=None)
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=None)
@handle_errors
def train(data, granularity, out, distance_norm, beta, max_iter, tol):
    """Train a seeded k-means model with one cluster per label."""
    beta = resolve_beta(beta)
    distance_norm = resolve_norm(distance_norm)
    granularity = Granularity(granularity)

    dataset = import_csv(data)
    scaler = fit_scaler(dataset)
    labels = dataset.labels(granularity)
    if len(set(labels)) == 1:
        click.echo(f"warning: only one {granularity.value} label ({labels[0]}); model has a single cluster", err=True)
    model = seeded_kmeans(
        vectorize_dataset(dataset, scaler),
        labels,
        max_iter=config_value("MAX_ITER", max_iter),
        tol=config_value("TOL", tol),
        scaler=scaler,
        distance_norm=distance_norm,
        beta=beta,
    )
    save_model(model, out)

    meta = model.training_meta
    click.echo(f"k={model.k} iterations={meta.iterations} objective={format_float(meta.objective)}")
    for cluster in model.clusters:
        click.echo(
            f"cluster {cluster.id} {cluster.label}: members={cluster.member_count} "
            f"radius_max={format_distance(cluster.radius_max)} "
            f"radius_mean={format_distance(cluster.radius_mean)} "
            f"radius_std={format_distance(cluster.radius_std)}"
        )


@click.command("classify")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--beta", type=float, default=None, help="Override the model's threshold.")
@click.pass_context
@handle_errors
def classify(ctx, model_path, data, beta):
    """Assign each sample to its nearest cluster or flag it as a new cluster."""
    model = load_model(model_path)
    if beta is not None:
        model = model.with_beta(resolve_beta(beta))
    if model.scaler is None:
        raise FormatError(f"{model_path} carries no scaler")
    matrix = vectorize_dataset(import_csv(data), model.scaler)

    new_clusters = 0
    for row in matrix:
        verdict = cluster_program(row, model)
        if verdict.is_new_cluster:
            new_clusters += 1
            click.echo(f"NEW_CLUSTER d={format_distance(verdict.distance)}")
        else:
            click.echo(f"ASSIGNED {verdict.label} d={format_distance(verdict.distance)}")
    if new_clusters:
        if model.beta == 1.0 and model.distance_norm is DistanceNorm.RADIUS_MAX:
            click.echo(
                "note: with beta 1.0 the farthest training member of each cluster sits at d=1 "
                "and is reported as NEW_CLUSTER; pass a beta above 1 to accept it",
                err=True,
            )
        ctx.exit(1)
