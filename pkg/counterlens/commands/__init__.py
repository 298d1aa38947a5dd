import functools

import click
from flask import current_app

from counterlens.exceptions import CounterLensError
from counterlens.models import DistanceNorm, Granularity
from counterlens.validators import validate_beta

GRANULARITY_CHOICE = click.Choice([g.value for g in Granularity])
NORM_CHOICE = click.Choice([n.value for n in DistanceNorm])


def handle_errors(command):
    """Report domain errors as ``error: <message>`` and exit with their code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except CounterLensError as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(exc.exit_code)

    return wrapper


def config_value(key, value):
    """Flag value when given, otherwise the app config default."""
    if value is not None:
        return value
    return current_app.config[key]


def resolve_beta(beta):
    beta = config_value("BETA", beta)
    is_valid, error = validate_beta(beta)
    if not is_valid:
        raise click.BadParameter(error, param_hint="--beta")
    return float(beta)


def resolve_norm(distance_norm):
    return DistanceNorm(config_value("DISTANCE_NORM", distance_norm))


def register_commands(app):
    from .collect import collect
    from .evaluate import evaluate
    from .model import classify, train

    app.cli.add_command(collect)
    app.cli.add_command(train)
    app.cli.add_command(classify)
    app.cli.add_command(evaluate)
