"""Output files for a simulation run.

CSV and JSON are always written.  A PNG of the state-of-charge curves is
added when matplotlib is installed (``pip install artifact[plot]``); the CSV
carries the same data for any other plotting tool.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .mpc import MpcTrace, trace_json


def write_trace(trace: MpcTrace, out: Path) -> list[str]:
    """Write trace.csv, trace.json, soc.csv, summary.json and
    diagnostics.jsonl; returns the file names written."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "trace.json").write_text(trace_json(trace))
    (out / "soc.csv").write_text(trace.soc_csv())
    (out / "summary.json").write_text(json.dumps(trace.summary(), indent=2, sort_keys=True) + "\n")
    lines = []
    for r in trace.records:
        for d in r.stage1_diagnostics:
            lines.append(json.dumps({"slot": r.t, "stage": 1, **d}, sort_keys=True))
        for d in r.stage2_diagnostics:
            lines.append(json.dumps({"slot": r.t, "stage": 2, **d}, sort_keys=True))
    (out / "diagnostics.jsonl").write_text("".join(line + "\n" for line in lines))
    files = ["trace.csv", "trace.json", "soc.csv", "summary.json", "diagnostics.jsonl"]
    if plot_soc(trace, out / "soc.png"):
        files.append("soc.png")
    return files


def plot_soc(trace: MpcTrace, path: Path) -> bool:
    """State of charge of every PEV against the slot index; False when
    matplotlib is unavailable."""
    try:
        import matplotlib
    except ImportError:
        return False
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(csv.reader(io.StringIO(trace.soc_csv())))
    header, body = rows[0], rows[1:]
    slots = [int(r[0]) for r in body]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j, pid in enumerate(header[1:], start=1):
        ax.step(slots, [float(r[j]) for r in body], where="post", label=pid)
    ax.set_xlabel("slot")
    ax.set_ylabel("state of charge")
    ax.set_ylim(0, 1.05)
    if len(header) <= 11:
        ax.legend(fontsize="small")
    fig.tight_layout()
    # fixed metadata keeps the file stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return True


def write_manifest(out: Path, mode: str, files: list[str], extra: dict | None = None) -> Path:
    doc = {"mode": mode, "files": sorted(files)}
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
