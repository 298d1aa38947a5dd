import abc
import threading
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Callable, Optional

import numpy as np

from counterlens.exceptions import AdapterFailure, AdapterQueryError, ProcessGone, ProcessNotFound
from counterlens.extensions import logger
from counterlens.models import (
    CATALOG_NAMES,
    COUNTER_COUNT,
    CollectionConfig,
    ProgramSample,
    StartTrigger,
)

# Late ticks beyond this fraction of the interval are logged; the grid itself never drifts.
JITTER_TOLERANCE = 0.10


class SourceAdapter(abc.ABC):
    """Contract every counter source implements."""

    # Collection sleeps on the wall clock only for realtime adapters.
    realtime = True
    # Adapters that keep per-session state serve one collection at a time.
    concurrency_safe = False

    @abc.abstractmethod
    def capabilities(self) -> frozenset:
        """Catalog indices this adapter can serve."""

    @abc.abstractmethod
    def exists(self, process_ref) -> bool:
        ...

    @abc.abstractmethod
    def query(self, process_ref, counter_index: int) -> float:
        """Current value of one counter; must not disturb the monitored process."""

    def children(self, process_ref) -> list:
        return []

    def resolve(self, process_ref, trigger: StartTrigger, timeout: float):
        """Turn a user-facing reference into the handle passed to ``query``."""
        return process_ref


class ReplayAdapter(SourceAdapter):
    """Serves a recorded sample back tick by tick, exactly as recorded."""

    realtime = False

    def __init__(self, sample: ProgramSample):
        self.sample = sample
        self._cursor = [0] * COUNTER_COUNT

    @classmethod
    def from_file(cls, path, program: Optional[str] = None):
        from counterlens.services.dataset_io import import_csv

        dataset = import_csv(path)
        for sample in dataset:
            if program is None or sample.program == program:
                return cls(sample)
        raise ProcessNotFound(f"{path} holds no recording for program {program!r}")

    def capabilities(self):
        return frozenset(range(self.sample.counters))

    def exists(self, process_ref):
        return min(self._cursor) < self.sample.observed_rows

    def query(self, process_ref, counter_index):
        row = self._cursor[counter_index]
        if row >= self.sample.observed_rows:
            raise ProcessGone(process_ref)
        self._cursor[counter_index] += 1
        return float(self.sample.values[row, counter_index])


class PsutilAdapter(SourceAdapter):
    """
    Native per-process counters through psutil.

    Windows exposes every catalog counter. Elsewhere the adapter serves what
    psutil can see (file descriptors stand in for handles, USS for private
    bytes) and declares the rest missing. ``/sec`` counters are deltas between
    consecutive queries of the same counter; peaks the OS does not track are
    session maxima.
    """

    _WINDOWS_PRIORITY = {
        "IDLE_PRIORITY_CLASS": 4,
        "BELOW_NORMAL_PRIORITY_CLASS": 6,
        "NORMAL_PRIORITY_CLASS": 8,
        "ABOVE_NORMAL_PRIORITY_CLASS": 10,
        "HIGH_PRIORITY_CLASS": 13,
        "REALTIME_PRIORITY_CLASS": 24,
    }

    def __init__(self, poll_interval: float = 0.05):
        import psutil

        self.psutil = psutil
        self.poll_interval = poll_interval
        self._processes = {}
        self._previous = {}
        self._peaks = {}
        self._capabilities = self._detect_capabilities()

    def _detect_capabilities(self):
        psutil = self.psutil
        served = {0, 1, 16, 17, 19, 21, 22}
        if hasattr(psutil.Process, "io_counters"):
            served |= {2, 3, 4, 6, 7, 8}
        if psutil.WINDOWS:
            return frozenset(range(COUNTER_COUNT))
        if hasattr(psutil.Process, "page_faults"):
            served.add(10)
        if psutil.LINUX:
            served |= {12, 15}
        served |= {18, 20}
        return frozenset(served)

    def capabilities(self):
        return self._capabilities

    def _process(self, pid):
        process = self._processes.get(pid)
        if process is None:
            try:
                process = self.psutil.Process(pid)
            except self.psutil.NoSuchProcess:
                raise ProcessGone(pid) from None
            self._processes[pid] = process
        return process

    def exists(self, process_ref):
        try:
            process = self._process(int(process_ref))
            return process.is_running() and process.status() != self.psutil.STATUS_ZOMBIE
        except (ProcessGone, self.psutil.NoSuchProcess):
            return False

    def children(self, process_ref):
        try:
            return [child.pid for child in self._process(int(process_ref)).children(recursive=True)]
        except (ProcessGone, self.psutil.NoSuchProcess):
            return []

    def resolve(self, process_ref, trigger, timeout):
        if trigger is StartTrigger.MANUAL:
            return int(process_ref)
        name = str(process_ref)
        existing = {p.pid for p in self.psutil.process_iter()}
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            for process in self.psutil.process_iter(attrs=["pid", "name"]):
                if process.info["name"] == name and process.pid not in existing:
                    logger.info("Detected start of %s as pid %s", name, process.pid)
                    return process.pid
            time.sleep(self.poll_interval)
        raise ProcessNotFound(f"no new process named {name!r} started within {timeout}s")

    def _rate(self, pid, counter_index, cumulative):
        now = time.monotonic()
        key = (pid, counter_index)
        previous = self._previous.get(key)
        self._previous[key] = (cumulative, now)
        if previous is None or now <= previous[1]:
            return 0.0
        return max(0.0, (cumulative - previous[0]) / (now - previous[1]))

    def _peak(self, pid, counter_index, value):
        key = (pid, counter_index)
        peak = max(self._peaks.get(key, 0.0), value)
        self._peaks[key] = peak
        return peak

    def _priority_base(self, process):
        nice = process.nice()
        if self.psutil.WINDOWS:
            for name, base in self._WINDOWS_PRIORITY.items():
                if nice == getattr(self.psutil, name, None):
                    return float(base)
            return 8.0
        # POSIX nice runs -20..19; map onto a non-negative base priority
        return float(20 - nice)

    def _read(self, process, counter_index):
        psutil = self.psutil
        pid = process.pid
        if counter_index == 0:
            return self._rate(pid, 0, process.cpu_times().system) * 100.0
        if counter_index == 1:
            return float(process.num_handles() if psutil.WINDOWS else process.num_fds())
        if 2 <= counter_index <= 9:
            io = process.io_counters()
            cumulative = {
                2: io.read_count,
                3: io.write_count,
                4: io.read_count + io.write_count,
                5: getattr(io, "other_count", 0),
                6: io.read_bytes,
                7: io.write_bytes,
                8: io.read_bytes + io.write_bytes,
                9: getattr(io, "other_bytes", 0),
            }[counter_index]
            return self._rate(pid, counter_index, cumulative)
        if counter_index == 10:
            if psutil.WINDOWS:
                return self._rate(pid, 10, process.memory_info().num_page_faults)
            faults = process.page_faults()
            return self._rate(pid, 10, faults.minor + faults.major)
        if counter_index == 16:
            return self._priority_base(process)
        if counter_index == 17:
            return float(process.num_threads())

        memory = process.memory_info()
        if psutil.WINDOWS:
            return float({
                11: memory.peak_pagefile,
                12: memory.pagefile,
                13: memory.paged_pool,
                14: memory.nonpaged_pool,
                15: memory.private,
                18: self._peak(pid, 18, memory.vms),
                19: memory.vms,
                20: memory.peak_wset,
                21: memory.wset,
                22: process.memory_full_info().uss,
            }[counter_index])
        if counter_index == 12:
            return float(process.memory_full_info().swap)
        if counter_index in (15, 22):
            return float(process.memory_full_info().uss)
        if counter_index == 18:
            return self._peak(pid, 18, memory.vms)
        if counter_index == 19:
            return float(memory.vms)
        if counter_index == 20:
            return self._peak(pid, 20, memory.rss)
        if counter_index == 21:
            return float(memory.rss)
        raise AdapterQueryError(f"{CATALOG_NAMES[counter_index]} is not served on this platform")

    def query(self, process_ref, counter_index):
        if counter_index not in self._capabilities:
            raise AdapterQueryError(f"{CATALOG_NAMES[counter_index]} is not served on this platform")
        process = self._process(int(process_ref))
        try:
            return float(self._read(process, counter_index))
        except (self.psutil.NoSuchProcess, self.psutil.ZombieProcess):
            raise ProcessGone(process_ref) from None
        except (self.psutil.AccessDenied, AttributeError, OSError) as exc:
            raise AdapterQueryError(str(exc)) from exc


class CollectorService:
    def __init__(
        self,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        now: Callable[[], datetime] = lambda: datetime.now(timezone.utc).replace(tzinfo=None),
    ):
        self.clock = clock
        self.sleep = sleep
        self.now = now
        self._busy = set()
        self._lock = threading.Lock()

    @contextmanager
    def _session(self, adapter):
        if adapter.concurrency_safe:
            yield
            return
        with self._lock:
            if id(adapter) in self._busy:
                raise AdapterFailure(
                    f"{type(adapter).__name__} is already collecting another session and is not concurrency-safe"
                )
            self._busy.add(id(adapter))
        try:
            yield
        finally:
            with self._lock:
                self._busy.discard(id(adapter))

    def _wait_for_tick(self, adapter, origin, tick, interval):
        if not adapter.realtime:
            return
        target = origin + tick * interval
        delay = target - self.clock()
        if delay > 0:
            self.sleep(delay)
        late = self.clock() - target
        if late > JITTER_TOLERANCE * interval:
            logger.warning("Tick %d fired %.3fs late (interval %.3fs)", tick, late, interval)

    def _query_counter(self, adapter, refs, counter_index):
        """Sum one counter over the process tree; the root disappearing ends collection."""
        total = 0.0
        for position, ref in enumerate(refs):
            try:
                total += adapter.query(ref, counter_index)
            except ProcessGone:
                if position == 0:
                    raise
        return total

    def collect(
        self,
        process_ref,
        adapter: SourceAdapter,
        config: CollectionConfig = CollectionConfig(),
        program: Optional[str] = None,
        group: str = "",
        input_id: int = 0,
        run_id: int = 0,
    ) -> ProgramSample:
        with self._session(adapter):
            return self._collect(process_ref, adapter, config, program, group, input_id, run_id)

    def _collect(self, process_ref, adapter, config, program, group, input_id, run_id):
        process_ref = adapter.resolve(process_ref, config.start_trigger, config.start_timeout)
        if not adapter.exists(process_ref):
            raise ProcessNotFound(f"process {process_ref} does not exist")

        served = sorted(set(config.counters) & set(adapter.capabilities()))
        missing = tuple(i for i in range(COUNTER_COUNT) if i not in served)
        if missing:
            logger.warning(
                "Adapter does not serve %d counter(s), filling with 0.0: %s",
                len(missing),
                ", ".join(CATALOG_NAMES[i] for i in missing),
            )

        timesteps = config.timesteps
        values = np.zeros((timesteps, COUNTER_COUNT))
        last_good = np.zeros(COUNTER_COUNT)
        failures = dict.fromkeys(served, 0)
        observed = 0
        start_time = self.now()
        origin = self.clock()

        for tick in range(timesteps):
            self._wait_for_tick(adapter, origin, tick, config.interval)
            if not adapter.exists(process_ref):
                break
            refs = [process_ref]
            if config.include_children:
                refs += adapter.children(process_ref)
            exited = False
            for counter_index in served:
                try:
                    value = self._query_counter(adapter, refs, counter_index)
                except ProcessGone:
                    exited = True
                    break
                except Exception as exc:
                    failures[counter_index] += 1
                    logger.warning(
                        "Query of %s failed (%d consecutive): %s",
                        CATALOG_NAMES[counter_index], failures[counter_index], exc,
                    )
                    if failures[counter_index] >= config.max_retries:
                        raise AdapterFailure(
                            f"{CATALOG_NAMES[counter_index]} failed on "
                            f"{failures[counter_index]} consecutive ticks"
                        ) from exc
                    value = last_good[counter_index]
                else:
                    failures[counter_index] = 0
                    last_good[counter_index] = value
                values[tick, counter_index] = value
            if exited:
                break
            observed = tick + 1

        if observed == 0:
            raise ProcessNotFound(f"process {process_ref} exited before the first tick")
        if observed < timesteps:
            logger.info("Process exited after %d of %d ticks; holding last row", observed, timesteps)
            values[observed:] = values[observed - 1]

        return ProgramSample(
            program=program if program is not None else str(process_ref),
            group=group,
            input_id=input_id,
            run_id=run_id,
            interval=config.interval,
            values=values,
            observed_rows=observed,
            start_time=start_time,
            missing_counters=missing,
        )


def collect(process_ref, adapter, config=CollectionConfig(), **metadata) -> ProgramSample:
    return collector_service.collect(process_ref, adapter, config, **metadata)


# Global collector instance
collector_service = CollectorService()
