"""File output shared by the command-line tools.

Every CSV starts with one ``#`` comment line naming the tool version, the
configuration hash and the master seed; JSON documents carry the same three
fields at top level.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__


def config_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(chash: str, seed: int | None) -> str:
    return f"# sinaiwalk {__version__} config={chash} seed={seed}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], chash: str,
              seed: int | None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(provenance(chash, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv` (comment lines skipped)."""
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_json(path: Path, doc: dict, chash: str | None = None, seed: int | None = None) -> Path:
    path = Path(path)
    if chash is not None:
        doc = {"tool": "sinaiwalk", "version": __version__, "config_hash": chash, "seed": seed, **doc}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_environment(path: Path, law=None):
    """Fixture environment from a CSV with columns ``x, omega, V``."""
    from .environment import Environment

    header, rows = read_csv(path)
    if header[:3] != ["x", "omega", "V"]:
        raise ValueError(f"unexpected header {header}")
    xs = [int(r[0]) for r in rows]
    return Environment.from_table(xs, [float(r[1]) for r in rows], [float(r[2]) for r in rows], law)
