"""
Synthetic counter corpora for experiments that cannot use real recordings.

The shipped library has 18 program archetypes in four groups. Every counter
level is a base magnitude scaled by a group band and a within-group position,
both permuted per counter, so groups sit far apart and programs within a group
differ on every counter.
"""
from typing import Optional, Sequence

import numpy as np

from counterlens.models import (
    COUNTER_CATALOG,
    COUNTER_COUNT,
    Archetype,
    CounterTrend,
    Dataset,
    ProgramSample,
    TrendKind,
)

LIBRARY_SEED = 2016

GROUPS = (
    ("text-editor", ("texteditor-a", "texteditor-b", "texteditor-c", "texteditor-d", "texteditor-e")),
    ("web-browser", ("browser-a", "browser-b", "browser-c", "browser-d", "browser-e")),
    ("image-viewer", ("imageviewer-a", "imageviewer-b", "imageviewer-c", "imageviewer-d", "imageviewer-e")),
    ("audio-player", ("audioplayer-a", "audioplayer-b", "audioplayer-c")),
)

# narrow twin -> wide original it copies
CONFUSABLE_PAIRS = {"browser-b": "browser-d", "browser-c": "browser-e"}

BASE_LEVELS = (
    2.0,      # %Privileged Time
    150.0,    # Handle Count
    40.0, 15.0, 55.0, 120.0,          # IO operations/sec
    2.0e5, 5.0e4, 2.5e5, 4.0e3,       # IO bytes/sec
    300.0,    # Page Faults/sec
    6.0e7, 5.0e7,                     # page file
    3.0e5, 2.0e4,                     # pools
    5.0e7,    # Private Bytes
    8.0,      # Priority Base
    20.0,     # Thread Count
    6.0e8, 5.5e8,                     # virtual bytes
    9.0e7, 8.0e7, 3.0e7,              # working set
)

PRIORITY_BASE = 16
BAND_STEP = 1.0
POSITION_STEP = 0.15
NOISE_FRACTION = 0.0045
SPREAD_FRACTION = 0.02
NARROW_SPREAD_FRACTION = 0.008
WIDE_SPREAD_FRACTION = 0.05

IO_COUNTERS = range(2, 11)
MEMORY_COUNTERS = (12, 13, 15, 19, 21, 22)
BURST_TICKS = (5, 12, 20, 27)


def _trend(group: str, counter: int, level: float) -> CounterTrend:
    if counter == PRIORITY_BASE:
        return CounterTrend(TrendKind.CONSTANT, level)
    if group == "web-browser":
        if counter in MEMORY_COUNTERS:
            return CounterTrend(TrendKind.LINEAR_RAMP, level, slope=0.01 * level)
        if counter in IO_COUNTERS:
            return CounterTrend(TrendKind.BURST, level, amplitude=0.5 * level, burst_ticks=BURST_TICKS)
    if group == "image-viewer" and counter in MEMORY_COUNTERS:
        return CounterTrend(TrendKind.SATURATING_RAMP, level, amplitude=0.4 * level, tau=5.0)
    if group == "text-editor" and counter in (15, 22):
        return CounterTrend(TrendKind.SATURATING_RAMP, level, amplitude=0.1 * level, tau=8.0)
    if group == "audio-player" and (counter == 0 or counter in IO_COUNTERS):
        return CounterTrend(TrendKind.LINEAR_RAMP, level, slope=0.005 * level)
    return CounterTrend(TrendKind.CONSTANT, level)


def default_archetypes(confusable: bool = True) -> list[Archetype]:
    """
    The shipped 18-archetype library.

    With ``confusable`` set, browser-b and browser-c become narrow copies of
    the wider browser-d and browser-e; an unknown narrow twin falls inside its
    seeded wide original and goes undetected.
    """
    rng = np.random.default_rng(LIBRARY_SEED)
    bands = np.array([rng.permutation(len(GROUPS)) for _ in range(COUNTER_COUNT)])
    levels = {}
    for group_index, (group, names) in enumerate(GROUPS):
        positions = np.array([rng.permutation(len(names)) for _ in range(COUNTER_COUNT)])
        for program_index, name in enumerate(names):
            levels[name] = tuple(
                BASE_LEVELS[c] if c == PRIORITY_BASE else
                BASE_LEVELS[c] * (1.0 + BAND_STEP * bands[c, group_index]
                                  + POSITION_STEP * positions[c, program_index])
                for c in range(COUNTER_COUNT)
            )

    spreads = dict.fromkeys(levels, SPREAD_FRACTION)
    if confusable:
        for narrow, wide in CONFUSABLE_PAIRS.items():
            levels[narrow] = levels[wide]
            spreads[narrow] = NARROW_SPREAD_FRACTION
            spreads[wide] = WIDE_SPREAD_FRACTION

    archetypes = []
    for group, names in GROUPS:
        for name in names:
            level = levels[name]
            quiet = [c == PRIORITY_BASE for c in range(COUNTER_COUNT)]
            archetypes.append(Archetype(
                name=name,
                group=group,
                trends=tuple(_trend(group, c, level[c]) for c in range(COUNTER_COUNT)),
                noise_std=tuple(0.0 if quiet[c] else NOISE_FRACTION * level[c] for c in range(COUNTER_COUNT)),
                input_spread=tuple(0.0 if quiet[c] else spreads[name] * level[c] for c in range(COUNTER_COUNT)),
            ))
    return archetypes


def generate_synthetic(
    archetypes: Sequence[Archetype],
    samples_per_program: int,
    T: int = 30,
    rng_seed: int = 7,
    runs_per_input: int = 1,
    interval: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """
    Draw ``samples_per_program`` samples from each archetype.

    Each (program, input_id) gets one level offset from ``input_spread``;
    every tick adds Gaussian noise from ``noise_std``. Non-negative counters
    are clipped at 0.
    """
    if samples_per_program < 1:
        raise ValueError("samples_per_program must be at least 1")
    if runs_per_input < 1:
        raise ValueError("runs_per_input must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(rng_seed)
    ticks = np.arange(T)
    clipped = np.array([spec.kind.non_negative for spec in COUNTER_CATALOG])

    samples = []
    for archetype in archetypes:
        trend = np.column_stack([t.evaluate(ticks) for t in archetype.trends])
        noise_std = np.array(archetype.noise_std)
        spread = np.array(archetype.input_spread)
        offset = np.zeros(COUNTER_COUNT)
        for i in range(samples_per_program):
            input_id, run_id = divmod(i, runs_per_input)
            if run_id == 0:
                offset = rng.normal(0.0, spread)
            values = trend + offset + rng.normal(0.0, noise_std, size=(T, COUNTER_COUNT))
            values[:, clipped] = np.maximum(values[:, clipped], 0.0)
            samples.append(ProgramSample(
                program=archetype.name,
                group=archetype.group,
                input_id=input_id,
                run_id=run_id,
                interval=interval,
                values=values,
                observed_rows=T,
            ))
    return Dataset(tuple(samples))
