#!/usr/bin/env python3
"""
Helper script to bootstrap a local synthetic corpus without collecting real counters.

Usage:
    python scripts/generate_corpus.py [samples_per_program]

The script will:
  * ensure the data directory (COUNTERLENS_DATA_DIR) exists
  * write the shipped 18-archetype corpus to <data dir>/synthetic.csv
  * write a fully separable variant to <data dir>/synthetic-separable.csv
"""

from __future__ import annotations

import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent

if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from counterlens import create_app  # noqa: E402
from counterlens.exceptions import CounterLensError  # noqa: E402
from counterlens.services.dataset_io import export_csv  # noqa: E402
from counterlens.services.synthetic import default_archetypes, generate_synthetic  # noqa: E402


def _prepare_data_dir(app) -> Path:
    """Create the data directory, relative paths resolved against the repository root."""
    data_dir = Path(app.config["DATA_DIR"])
    if not data_dir.is_absolute():
        data_dir = (REPO_ROOT / data_dir).resolve()
    data_dir.mkdir(parents=True, exist_ok=True)
    return data_dir


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        per_program = int(argv[0]) if argv else 20
    except ValueError:
        print(f"Warning: could not parse samples per program {argv[0]!r}; using 20.")
        per_program = 20

    app = create_app()
    data_dir = _prepare_data_dir(app)
    timesteps = int(round(app.config["WINDOW"] / app.config["INTERVAL"]))

    for name, confusable in (("synthetic.csv", True), ("synthetic-separable.csv", False)):
        dataset = generate_synthetic(
            default_archetypes(confusable),
            per_program,
            T=timesteps,
            rng_seed=app.config["RNG_SEED"],
            interval=app.config["INTERVAL"],
        )
        try:
            export_csv(dataset, data_dir / name)
        except CounterLensError as exc:
            print("Failed to write corpus:", exc, file=sys.stderr)
            return exc.exit_code
        print(f"Corpus with {len(dataset)} samples written to: {data_dir / name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
