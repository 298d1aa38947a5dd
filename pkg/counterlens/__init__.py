import logging
from pathlib import Path

import click
from flask import Flask
from flask.cli import FlaskGroup, ScriptInfo

from counterlens.extensions import adapters
from counterlens.models import DistanceNorm

ENV_PREFIX = "COUNTERLENS"

DEFAULT_CONFIG = {
    "ADAPTER": "psutil",
    "LOG_LEVEL": "WARNING",
    "RNG_SEED": 7,
    "BETA": 1.0,
    "DISTANCE_NORM": DistanceNorm.RADIUS_MAX.value,
    "MAX_ITER": 100,
    "TOL": 1e-6,
    "INTERVAL": 1.0,
    "WINDOW": 30.0,
    "MAX_RETRIES": 3,
}

# from_prefixed_env parses values as JSON; these keys must end up with these types
CONFIG_TYPES = {
    "ADAPTER": str,
    "LOG_LEVEL": str,
    "RNG_SEED": int,
    "BETA": float,
    "DISTANCE_NORM": str,
    "MAX_ITER": int,
    "TOL": float,
    "INTERVAL": float,
    "WINDOW": float,
    "MAX_RETRIES": int,
    "DATA_DIR": str,
}


def _coerce(value, kind):
    if kind is str:
        return str(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(value)
    if kind is int and value != int(value):
        raise ValueError(value)
    return kind(value)


def _check_config(app):
    for key, kind in CONFIG_TYPES.items():
        default = DEFAULT_CONFIG.get(key)
        try:
            app.config[key] = _coerce(app.config[key], kind)
        except (ValueError, OverflowError):
            app.logger.warning("Ignoring malformed %s_%s=%r, using %s", ENV_PREFIX, key, app.config[key], default)
            app.config[key] = default

    valid_norms = {norm.value for norm in DistanceNorm}
    if app.config["DISTANCE_NORM"] not in valid_norms:
        app.logger.warning(
            "Ignoring unknown distance norm %r, using %s",
            app.config["DISTANCE_NORM"], DistanceNorm.RADIUS_MAX.value,
        )
        app.config["DISTANCE_NORM"] = DistanceNorm.RADIUS_MAX.value


def set_log_level(app, level):
    level = str(level).upper()
    if not isinstance(logging.getLevelName(level), int):
        app.logger.warning("Unknown log level %r, using WARNING", level)
        level = "WARNING"
    app.config["LOG_LEVEL"] = level
    app.logger.setLevel(level)


def create_app(overrides=None):
    from dotenv import load_dotenv

    load_dotenv()

    base_dir = Path(__file__).resolve().parent.parent

    app = Flask(__name__)
    app.config.from_mapping(DEFAULT_CONFIG, DATA_DIR=str(base_dir / "instance"))
    app.config.from_prefixed_env(ENV_PREFIX)
    if overrides:
        app.config.update(overrides)
    _check_config(app)
    set_log_level(app, app.config["LOG_LEVEL"])

    from counterlens.services.collector import PsutilAdapter, ReplayAdapter

    adapters.register("psutil", PsutilAdapter)
    adapters.register("replay", ReplayAdapter.from_file)
    adapters.init_app(app)

    from counterlens.commands import register_commands

    register_commands(app)
    return app


def create_cli(app=None):
    """Root command group; without ``app`` one is created on first use so .env and flags apply per run."""

    @click.group(
        cls=FlaskGroup,
        create_app=(lambda: app) if app is not None else create_app,
        add_default_commands=False,
        add_version_option=False,
        load_dotenv=False,
        set_debug_flag=False,
        context_settings={"help_option_names": ["-h", "--help"]},
    )
    @click.option("--log-level", default=None, help="Override COUNTERLENS_LOG_LEVEL for this run.")
    @click.pass_context
    def cli(ctx, log_level):
        """Per-program performance counter clustering and unknown-program detection."""
        if log_level:
            set_log_level(ctx.ensure_object(ScriptInfo).load_app(), log_level)

    return cli


def main(argv=None, app=None):
    """Run the command line and return its exit code (64 for usage errors)."""
    from colorama import just_fix_windows_console

    from counterlens.exceptions import USAGE_EXIT_CODE, CounterLensError

    just_fix_windows_console()
    cli = create_cli(app)
    try:
        result = cli.main(args=argv, prog_name="counterlens", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return USAGE_EXIT_CODE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except CounterLensError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return result if isinstance(result, int) else 0
