import numpy as np
import pytest

from counterlens import create_app
from counterlens.exceptions import AdapterQueryError, ProcessGone
from counterlens.models import COUNTER_COUNT, ProgramSample
from counterlens.services.collector import SourceAdapter
from counterlens.services.synthetic import default_archetypes, generate_synthetic

SMALL_CORPUS_PROGRAMS = ("texteditor-a", "texteditor-b", "browser-a", "imageviewer-a", "audioplayer-a")


class ConstantAdapter(SourceAdapter):
    """Serves a fixed value per process; the root process can be made to exit or fail."""

    def __init__(
        self,
        value=1.0,
        capabilities=range(COUNTER_COUNT),
        lifetime=None,
        failures=None,
        children=(),
        child_value=0.5,
        gone_children=(),
        exists=True,
        realtime=False,
    ):
        self.value = value
        self._capabilities = frozenset(capabilities)
        self.lifetime = lifetime
        self.failures = dict(failures or {})
        self._children = list(children)
        self.child_value = child_value
        self.gone_children = set(gone_children)
        self._exists = exists
        self.realtime = realtime
        self.queries = {}

    def capabilities(self):
        return self._capabilities

    def exists(self, process_ref):
        return self._exists

    def children(self, process_ref):
        return list(self._children)

    def query(self, process_ref, counter_index):
        if process_ref in self.gone_children:
            raise ProcessGone(process_ref)
        if process_ref in self._children:
            return self.child_value
        count = self.queries.get(counter_index, 0)
        self.queries[counter_index] = count + 1
        if self.lifetime is not None and count >= self.lifetime:
            raise ProcessGone(process_ref)
        if self.failures.get(counter_index, 0) > 0:
            self.failures[counter_index] -= 1
            raise AdapterQueryError(f"counter {counter_index} unavailable")
        if callable(self.value):
            return float(self.value(count, counter_index))
        return float(self.value)


class FakeClock:
    def __init__(self, start=100.0, lag=0.0):
        self.now = start
        self.lag = lag
        self.sleeps = []

    def clock(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds + self.lag


@pytest.fixture
def make_sample():
    def _make(values=None, T=30, program="prog", group="grp", input_id=0, run_id=0,
              interval=1.0, observed_rows=None, fill=1.0, **extra):
        if values is None:
            values = np.full((T, COUNTER_COUNT), fill)
        values = np.asarray(values, dtype=np.float64)
        return ProgramSample(
            program=program,
            group=group,
            input_id=input_id,
            run_id=run_id,
            interval=interval,
            values=values,
            observed_rows=values.shape[0] if observed_rows is None else observed_rows,
            **extra,
        )

    return _make


@pytest.fixture
def constant_adapter():
    return ConstantAdapter


@pytest.fixture
def fake_clock():
    return FakeClock()


@pytest.fixture(scope="session")
def archetypes():
    return {a.name: a for a in default_archetypes(confusable=False)}


@pytest.fixture(scope="session")
def small_corpus(archetypes):
    """Five well separated programs in four groups, 8 samples of 10 ticks each."""
    return generate_synthetic([archetypes[name] for name in SMALL_CORPUS_PROGRAMS], 8, T=10, rng_seed=11)


@pytest.fixture(scope="session")
def full_corpus():
    """The shipped 18-archetype corpus with the confusable browsers, 20 samples each."""
    return generate_synthetic(default_archetypes(confusable=True), 20, T=30, rng_seed=7)


@pytest.fixture
def app(tmp_path):
    return create_app({"DATA_DIR": str(tmp_path), "LOG_LEVEL": "WARNING", "ADAPTER": "psutil"})
