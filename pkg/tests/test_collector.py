import logging
import os

import numpy as np
import pytest

from counterlens.exceptions import AdapterFailure, ProcessNotFound
from counterlens.models import COUNTER_COUNT, CollectionConfig, Dataset
from counterlens.services.collector import CollectorService, PsutilAdapter, ReplayAdapter
from counterlens.services.dataset_io import export_csv


def _service(clock=None):
    if clock is None:
        return CollectorService(clock=lambda: 0.0, sleep=lambda s: None)
    return CollectorService(clock=clock.clock, sleep=clock.sleep)


def test_full_window_of_constant_values(constant_adapter):
    sample = _service().collect(1234, constant_adapter(value=2.0), CollectionConfig(), program="p")
    assert sample.values.shape == (30, COUNTER_COUNT)
    assert sample.observed_rows == 30
    assert np.all(sample.values == 2.0)
    assert sample.missing_counters == ()
    assert sample.program == "p"
    assert sample.interval == 1.0


def test_early_exit_holds_last_row(constant_adapter):
    adapter = constant_adapter(value=lambda tick, counter: tick, lifetime=28)
    sample = _service().collect(1, adapter, CollectionConfig())
    assert sample.observed_rows == 28
    assert sample.timesteps == 30
    assert np.array_equal(sample.values[28], sample.values[27])
    assert np.array_equal(sample.values[29], sample.values[27])
    assert sample.values[27, 0] == 27.0


def test_missing_process(constant_adapter):
    with pytest.raises(ProcessNotFound):
        _service().collect(1, constant_adapter(exists=False), CollectionConfig())


def test_process_exiting_before_first_tick(constant_adapter):
    with pytest.raises(ProcessNotFound):
        _service().collect(1, constant_adapter(lifetime=0), CollectionConfig())


def test_unserved_counters_are_zero_filled(constant_adapter, caplog):
    adapter = constant_adapter(value=3.0, capabilities=[c for c in range(COUNTER_COUNT) if c not in (11, 13)])
    with caplog.at_level(logging.WARNING, logger="counterlens"):
        sample = _service().collect(1, adapter, CollectionConfig())
    assert sample.missing_counters == (11, 13)
    assert np.all(sample.values[:, 11] == 0.0)
    assert np.all(sample.values[:, 13] == 0.0)
    assert np.all(sample.values[:, 12] == 3.0)
    assert "does not serve 2 counter(s)" in caplog.text


def test_unselected_counters_are_recorded_missing(constant_adapter):
    config = CollectionConfig(counters=(0, 1))
    sample = _service().collect(1, constant_adapter(), config)
    assert sample.missing_counters == tuple(range(2, COUNTER_COUNT))


def test_transient_failures_reuse_last_value(constant_adapter):
    adapter = constant_adapter(value=lambda tick, counter: 10.0 + tick, failures={4: 2})
    sample = _service().collect(1, adapter, CollectionConfig(window=5.0))
    # ticks 0 and 1 failed before any good value existed
    assert sample.values[:, 4].tolist() == [0.0, 0.0, 12.0, 13.0, 14.0]


def test_persistent_failure_raises(constant_adapter):
    adapter = constant_adapter(failures={4: 3})
    with pytest.raises(AdapterFailure):
        _service().collect(1, adapter, CollectionConfig())


def test_children_are_summed_and_vanished_children_skipped(constant_adapter):
    adapter = constant_adapter(value=1.0, children=[11, 12, 13], child_value=0.5, gone_children=[13])
    sample = _service().collect(1, adapter, CollectionConfig(window=3.0))
    assert np.all(sample.values == 2.0)


def test_children_can_be_excluded(constant_adapter):
    adapter = constant_adapter(value=1.0, children=[11], child_value=0.5)
    sample = _service().collect(1, adapter, CollectionConfig(window=3.0, include_children=False))
    assert np.all(sample.values == 1.0)


def test_realtime_ticks_follow_the_grid(constant_adapter, fake_clock):
    adapter = constant_adapter(realtime=True)
    _service(fake_clock).collect(1, adapter, CollectionConfig(interval=0.5, window=5.0))
    assert fake_clock.now == pytest.approx(100.0 + 9 * 0.5)
    assert fake_clock.sleeps == pytest.approx([0.5] * 9)


def test_late_ticks_are_logged(constant_adapter, fake_clock, caplog):
    fake_clock.lag = 0.2
    with caplog.at_level(logging.WARNING, logger="counterlens"):
        _service(fake_clock).collect(1, constant_adapter(realtime=True), CollectionConfig(window=3.0))
    assert "late" in caplog.text
    # lag does not accumulate: the next sleep shortens to stay on the grid
    assert fake_clock.sleeps == pytest.approx([1.0, 0.8])


def test_replay_reproduces_recording(tmp_path, make_sample):
    rng = np.random.default_rng(5)
    recorded = make_sample(values=rng.random((30, COUNTER_COUNT)), program="notepad")
    path = tmp_path / "script.csv"
    export_csv(Dataset((recorded,)), path)

    adapter = ReplayAdapter.from_file(path)
    assert not adapter.realtime
    sample = _service().collect("notepad", adapter, CollectionConfig(), program="notepad")
    assert np.array_equal(sample.values, recorded.values)
    assert sample.observed_rows == 30


def test_replay_of_short_recording_pads(tmp_path, make_sample):
    recorded = make_sample(values=np.arange(10 * COUNTER_COUNT, dtype=float).reshape(10, COUNTER_COUNT))
    sample = _service().collect("x", ReplayAdapter(recorded), CollectionConfig())
    assert sample.observed_rows == 10
    assert np.array_equal(sample.values[29], recorded.values[9])


def test_replay_unknown_program(tmp_path, make_sample):
    path = tmp_path / "script.csv"
    export_csv(Dataset((make_sample(program="a"),)), path)
    with pytest.raises(ProcessNotFound):
        ReplayAdapter.from_file(path, program="b")


def test_psutil_adapter_reads_own_process():
    pytest.importorskip("psutil")
    adapter = PsutilAdapter()
    config = CollectionConfig(interval=0.05, window=0.1, include_children=False)
    sample = CollectorService().collect(os.getpid(), adapter, config, program="pytest")
    assert sample.values.shape == (2, COUNTER_COUNT)
    assert sample.observed_rows == 2
    assert np.all(np.isfinite(sample.values))
    assert set(sample.missing_counters) == set(range(COUNTER_COUNT)) - set(adapter.capabilities())
    assert sample.values[0, 17] >= 1


def test_adapter_serves_one_session_unless_concurrency_safe(constant_adapter):
    service = _service()
    config = CollectionConfig(interval=1.0, window=2.0)
    adapter = constant_adapter()
    errors = []

    def start_second_session(count, counter_index):
        if count == 0 and counter_index == 0:
            try:
                service.collect(2, adapter, config)
            except AdapterFailure as exc:
                errors.append(str(exc))
        return 1.0

    adapter.value = start_second_session
    service.collect(1, adapter, config)
    assert len(errors) == 1
    assert "not concurrency-safe" in errors[0]

    # released once the first session returns
    assert service.collect(1, adapter, config).observed_rows == 2

    adapter.queries.clear()
    adapter.concurrency_safe = True
    errors.clear()
    service.collect(1, adapter, config)
    assert errors == []
