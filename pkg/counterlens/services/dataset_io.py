"""
Sample-block CSV reader and writer.

One file holds one or more blocks. Each block is a ``#sample`` metadata line,
a header line with the catalog counter names, then one data row per tick.
"""
import math
from pathlib import Path

import numpy as np

from counterlens.exceptions import DataIOError, EmptyDataset, EmptyFile, FormatError, ShapeMismatch
from counterlens.extensions import logger
from counterlens.models import CATALOG_NAMES, COUNTER_COUNT, Dataset, ProgramSample
from counterlens.utils import decode_meta, encode_meta, format_float, format_timestamp, parse_timestamp
from counterlens.validators import validate_sample

SAMPLE_MARKER = "#sample"
HEADER_LINE = ",".join(CATALOG_NAMES)
REQUIRED_KEYS = ("program", "group", "input_id", "run_id", "interval", "observed_rows")
OPTIONAL_KEYS = ("start_time", "missing")


def _metadata_line(sample: ProgramSample) -> str:
    fields = [
        SAMPLE_MARKER,
        f"program={encode_meta(sample.program)}",
        f"group={encode_meta(sample.group)}",
        f"input_id={sample.input_id}",
        f"run_id={sample.run_id}",
        f"interval={format_float(sample.interval)}",
        f"observed_rows={sample.observed_rows}",
    ]
    if sample.start_time is not None:
        fields.append(f"start_time={format_timestamp(sample.start_time)}")
    if sample.missing_counters:
        fields.append("missing=" + ";".join(str(i) for i in sample.missing_counters))
    return ",".join(fields)


def export_csv(dataset: Dataset, path, append: bool = False) -> int:
    """Write every sample of ``dataset`` as a block; returns the number of data rows written."""
    if not len(dataset):
        raise EmptyDataset("cannot export an empty dataset")

    lines = []
    for position, sample in enumerate(dataset):
        violations = validate_sample(sample, sample.timesteps)
        if violations:
            raise FormatError(f"sample {position} is not invariant-clean: {violations[0]}")
        lines.append(_metadata_line(sample))
        lines.append(HEADER_LINE)
        for row in sample.values:
            lines.append(",".join(format_float(v) for v in row))

    try:
        with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"could not write {path}: {exc}") from exc

    rows = sum(sample.timesteps for sample in dataset)
    logger.info("Wrote %d sample block(s), %d data rows to %s", len(dataset), rows, path)
    return rows


def _parse_metadata(line: str, line_no: int) -> dict:
    parts = line.split(",")
    if parts[0] != SAMPLE_MARKER:
        raise FormatError(f"line {line_no}: expected '{SAMPLE_MARKER}' metadata line")
    meta = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise FormatError(f"line {line_no}: malformed metadata field {part!r}")
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise FormatError(f"line {line_no}: unknown metadata key {key!r}")
        meta[key] = value
    missing = [key for key in REQUIRED_KEYS if key not in meta]
    if missing:
        raise FormatError(f"line {line_no}: metadata lacks {', '.join(missing)}")
    try:
        parsed = {
            "program": decode_meta(meta["program"]),
            "group": decode_meta(meta["group"]),
            "input_id": int(meta["input_id"]),
            "run_id": int(meta["run_id"]),
            "interval": float(meta["interval"]),
            "observed_rows": int(meta["observed_rows"]),
            "start_time": None,
            "missing_counters": (),
        }
        if meta.get("start_time"):
            parsed["start_time"] = parse_timestamp(meta["start_time"])
            if parsed["start_time"] is None:
                raise ValueError(f"bad start_time {meta['start_time']!r}")
        if meta.get("missing"):
            parsed["missing_counters"] = tuple(int(i) for i in meta["missing"].split(";"))
    except ValueError as exc:
        raise FormatError(f"line {line_no}: {exc}") from exc
    return parsed


def _check_header(line: str, line_no: int) -> None:
    names = line.split(",")
    if names == list(CATALOG_NAMES):
        return
    missing = [name for name in CATALOG_NAMES if name not in names]
    if missing:
        raise FormatError(f"line {line_no}: missing column(s): {', '.join(missing)}")
    unexpected = [name for name in names if name not in CATALOG_NAMES]
    if unexpected:
        raise FormatError(f"line {line_no}: unexpected column(s): {', '.join(unexpected)}")
    raise FormatError(f"line {line_no}: columns are not in catalog order")


def _parse_row(line: str, line_no: int) -> list[float]:
    cells = line.split(",")
    if len(cells) != COUNTER_COUNT:
        raise FormatError(f"line {line_no}: ragged row with {len(cells)} cells, expected {COUNTER_COUNT}")
    row = []
    for column, cell in enumerate(cells):
        try:
            value = float(cell)
        except ValueError:
            raise FormatError(f"line {line_no}, column {column}: non-numeric cell {cell!r}") from None
        if not math.isfinite(value):
            raise FormatError(f"line {line_no}, column {column}: non-finite cell {cell!r}")
        row.append(value)
    return row


def import_csv(path) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"could not read {path}: {exc}") from exc
    if not text.strip():
        raise EmptyFile(f"{path} is empty")

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    samples = []
    meta = None
    rows = []
    header_seen = False

    def close_block(line_no):
        if meta is None:
            return
        if not header_seen:
            raise FormatError(f"line {line_no}: sample block has no header line")
        if not rows:
            raise FormatError(f"line {line_no}: sample block has no data rows")
        samples.append(ProgramSample(values=np.array(rows), **meta))

    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith(SAMPLE_MARKER):
            close_block(line_no)
            meta, rows, header_seen = _parse_metadata(line, line_no), [], False
        elif meta is None:
            raise FormatError(f"line {line_no}: data before the first '{SAMPLE_MARKER}' line")
        elif not header_seen:
            _check_header(line, line_no)
            header_seen = True
        else:
            rows.append(_parse_row(line, line_no))
    close_block(len(lines) + 1)

    try:
        dataset = Dataset(tuple(samples))
    except ShapeMismatch as exc:
        raise FormatError(f"{path}: {exc}") from exc
    logger.info("Read %d sample block(s) from %s", len(dataset), path)
    return dataset
