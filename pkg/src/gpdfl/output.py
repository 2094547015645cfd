"""CSV and JSONL emitters sharing one column schema."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

COLUMNS = (
    "seed", "round", "defense", "attack", "distribution", "topology",
    "test_acc", "attack_acc", "tracking_residual", "consensus_error", "n_excluded", "wall_time_ms",
)
OUTPUT_DIR_ENV = "GPDFL_OUTPUT_DIR"


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def sort_rows(rows, keys=("seed", "defense", "attack", "distribution", "topology", "round")) -> list[dict]:
    return sorted(rows, key=lambda r: tuple(r.get(k, "") for k in keys))


def render_csv(rows, columns=COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r[c]) for c in columns])
    return buf.getvalue()


def render_jsonl(rows, columns=COLUMNS) -> str:
    return "".join(json.dumps({c: _json_value(r[c]) for c in columns}) + "\n" for r in rows)


def resolve_path(path) -> Path:
    """Relative paths land in $GPDFL_OUTPUT_DIR when it is set."""
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def write_rows(rows, path, fmt: str = "csv", columns=COLUMNS) -> Path:
    p = resolve_path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    text = render_jsonl(rows, columns) if fmt == "jsonl" else render_csv(rows, columns)
    p.write_text(text)
    return p
