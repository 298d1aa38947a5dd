import click
from flask import current_app

from counterlens.models import COUNTER_COUNT, CollectionConfig, Dataset, StartTrigger
from counterlens.services.collector import ReplayAdapter, collector_service
from counterlens.services.dataset_io import export_csv
from counterlens.validators import validate_adapter_spec, validate_interval_window, validate_label

from . import config_value, handle_errors


@click.command("collect")
@click.option("--pid", type=int, help="Process id to monitor.")
@click.option("--program", help="Program label; the process name to wait for with --trigger on-process-start.")
@click.option("--trigger", type=click.Choice([t.value for t in StartTrigger]), default=StartTrigger.MANUAL.value,
              show_default=True)
@click.option("--window", type=float, help="Seconds of data per sample.")
@click.option("--interval", type=float, help="Seconds between ticks.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Sample CSV to write.")
@click.option("--adapter", "adapter_spec", help="Counter source, e.g. psutil or replay:<path>.")
@click.option("--group", default=None, help="Application group label.")
@click.option("--input-id", type=int, default=None)
@click.option("--run-id", type=int, default=None)
@click.option("--append", is_flag=True, help="Append the block to an existing file.")
@handle_errors
def collect(pid, program, trigger, window, interval, out, adapter_spec, group, input_id, run_id, append):
    """Record one sample block of per-process counters."""
    adapter_spec = adapter_spec or current_app.config["ADAPTER"]
    is_valid, error = validate_adapter_spec(adapter_spec)
    if not is_valid:
        raise click.BadParameter(error, param_hint="--adapter")
    try:
        adapter = current_app.extensions["adapters"].create(adapter_spec)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--adapter") from None

    trigger = StartTrigger(trigger)
    recorded = adapter.sample if isinstance(adapter, ReplayAdapter) else None
    if trigger is StartTrigger.ON_PROCESS_START:
        if not program:
            raise click.UsageError("--program is required with --trigger on-process-start")
        process_ref = program
    elif pid is not None:
        process_ref = pid
    elif recorded is not None:
        process_ref = recorded.program
    else:
        raise click.UsageError("--pid is required with --trigger manual")

    if recorded is not None:
        interval = interval if interval is not None else recorded.interval
        window = window if window is not None else recorded.interval * recorded.observed_rows
    interval = config_value("INTERVAL", interval)
    window = config_value("WINDOW", window)
    is_valid, error = validate_interval_window(interval, window)
    if not is_valid:
        raise click.BadParameter(error, param_hint="--window/--interval")

    program = program or (recorded.program if recorded else str(process_ref))
    if group is None:
        group = recorded.group if recorded else ""
    for label, hint in ((program, "--program"), (group, "--group")):
        if label:
            is_valid, error = validate_label(label)
            if not is_valid:
                raise click.BadParameter(error, param_hint=hint)

    config = CollectionConfig(
        interval=interval,
        window=window,
        start_trigger=trigger,
        max_retries=current_app.config["MAX_RETRIES"],
    )
    sample = collector_service.collect(
        process_ref,
        adapter,
        config,
        program=program,
        group=group,
        input_id=input_id if input_id is not None else (recorded.input_id if recorded else 0),
        run_id=run_id if run_id is not None else (recorded.run_id if recorded else 0),
    )
    export_csv(Dataset((sample,)), out, append=append)

    click.echo(
        f"collected {sample.program}: {sample.observed_rows}/{sample.timesteps} rows observed, "
        f"{COUNTER_COUNT - len(sample.missing_counters)}/{COUNTER_COUNT} counters filled"
    )
    if sample.missing_counters:
        click.echo(f"missing counters: {', '.join(str(i) for i in sample.missing_counters)}")
