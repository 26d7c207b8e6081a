"""Turn sink files into round-wise F1 and per-stage latency tables.

Works on a single run directory (holding checkpoints.jsonl + summary.json)
or on a parent directory of such runs (one table row per sub-run). Output
is csv or markdown text; byte-deterministic for a given input.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import MissingFiles
from .metrics import ALL_STAGES


def _is_run_dir(path: Path) -> bool:
    return (path / "checkpoints.jsonl").exists() and (path / "summary.json").exists()


def gather_runs(results_dir: str | Path) -> list[tuple[str, dict, list[dict]]]:
    """(run_name, summary, checkpoint rows) per run found under results_dir."""
    root = Path(results_dir)
    if not root.is_dir():
        raise MissingFiles(f"{root} is not a directory")
    if _is_run_dir(root):
        dirs = [root]
    else:
        dirs = sorted(p for p in root.iterdir() if p.is_dir() and _is_run_dir(p))
    if not dirs:
        raise MissingFiles(
            f"{root} holds no run results (checkpoints.jsonl + summary.json)")
    runs = []
    for directory in dirs:
        with open(directory / "summary.json", "r", encoding="utf-8") as handle:
            summary = json.load(handle)
        checkpoints = []
        with open(directory / "checkpoints.jsonl", "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    checkpoints.append(json.loads(line))
        name = "run" if directory == root else directory.name
        runs.append((name, summary, checkpoints))
    return runs


def _fmt(value, digits=3) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def _table(headers: list[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "csv":
        lines = [",".join(headers)]
        lines.extend(",".join(row) for row in rows)
        return "\n".join(lines)
    lines = ["| " + " | ".join(headers) + " |",
             "|" + "|".join(" --- " for _ in headers) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines)


def f1_table(runs: list[tuple[str, dict, list[dict]]], fmt: str) -> str:
    """One row per run: R1..Rn round means, across-round mean, degradation."""
    max_rounds = max((len(s.get("round_mean_f1", [])) for _, s, _ in runs),
                     default=0)
    headers = ["run"] + [f"R{i}" for i in range(1, max_rounds + 1)]
    headers += ["Mean", "Degradation"]
    rows = []
    for name, summary, _ in runs:
        means = summary.get("round_mean_f1", [])
        row = [name]
        row.extend(_fmt(means[i]) if i < len(means) else "-"
                   for i in range(max_rounds))
        row.append(_fmt(summary.get("mean_f1")))
        deg = summary.get("degradation_pct")
        row.append("-" if deg is None else f"{deg:.1f}%")
        rows.append(row)
    return _table(headers, rows, fmt)


def latency_table(runs: list[tuple[str, dict, list[dict]]], fmt: str) -> str:
    """One row per (run, stage): count, mean, p50, p95 in microseconds."""
    headers = ["run", "stage", "count", "mean_us", "p50_us", "p95_us"]
    rows = []
    for name, summary, _ in runs:
        stages = summary.get("latency", {}).get("stages", {})
        ordered = [s for s in ALL_STAGES if s in stages]
        ordered += sorted(s for s in stages if s not in ALL_STAGES)
        for stage in ordered:
            agg = stages[stage]
            rows.append([
                name, stage, str(agg.get("count", 0)),
                _fmt(agg.get("mean_us"), 1),
                _fmt(agg.get("p50_us"), 1),
                _fmt(agg.get("p95_us"), 1),
            ])
    return _table(headers, rows, fmt)


def render_report(results_dir: str | Path, fmt: str = "md") -> str:
    if fmt not in ("csv", "md"):
        raise ValueError(f"format must be csv or md, got {fmt!r}")
    runs = gather_runs(results_dir)
    parts = []
    if fmt == "md":
        parts.append("## Token F1 by round")
        parts.append(f1_table(runs, fmt))
        parts.append("")
        parts.append("## Stage latency")
        parts.append(latency_table(runs, fmt))
    else:
        parts.append(f1_table(runs, fmt))
        parts.append("")
        parts.append(latency_table(runs, fmt))
    return "\n".join(parts) + "\n"
