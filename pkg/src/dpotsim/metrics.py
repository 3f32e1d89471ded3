"""Run summaries and CSV logs.

Everything written here uses 6 decimal places and ``.`` as decimal mark, and
the summary is always recomputed from the rounded per-round values so that
``summary.csv`` can be re-derived from ``rounds.csv`` exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

ROUNDS_HEADER = ["round", "ma", "asr", "defense", "excluded_ids"]
SUMMARY_HEADER = ["final_asr", "avg_asr", "final_ma", "baseline_ma", "stealth_pass"]
STEALTH_TOLERANCE = 0.02


def _r6(x: float) -> float:
    return float(f"{x:.6f}")


def _asr_values(records):
    vals = [r.asr if hasattr(r, "asr") else r for r in records]
    if not vals:
        raise ConfigError("no round records")
    return vals


def final_asr(records) -> float:
    """Mean ASR over the last five rounds (or all of them, if fewer)."""
    vals = _asr_values(records)
    return float(np.mean(vals[-5:]))


def avg_asr(records) -> float:
    return float(np.mean(_asr_values(records)))


@dataclass
class ExperimentSummary:
    final_asr: float
    avg_asr: float
    final_ma: float
    baseline_ma: float | None = None

    @property
    def stealth_pass(self) -> bool | None:
        if self.baseline_ma is None:
            return None
        return abs(self.final_ma - self.baseline_ma) <= STEALTH_TOLERANCE + 1e-12

    def row(self) -> list[str]:
        base = "" if self.baseline_ma is None else f"{self.baseline_ma:.6f}"
        sp = "" if self.stealth_pass is None else ("PASS" if self.stealth_pass else "FAIL")
        return [f"{self.final_asr:.6f}", f"{self.avg_asr:.6f}", f"{self.final_ma:.6f}", base, sp]

    def format(self) -> str:
        rows = [("Final ASR", f"{self.final_asr:.6f}"), ("Avg ASR", f"{self.avg_asr:.6f}"),
                ("Final MA", f"{self.final_ma:.6f}")]
        if self.baseline_ma is not None:
            rows.append(("Baseline MA", f"{self.baseline_ma:.6f}"))
            rows.append(("Stealth (|dMA| <= 0.02)", "PASS" if self.stealth_pass else "FAIL"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def summarize(records, baseline_ma: float | None = None) -> ExperimentSummary:
    """Summary over the 6-decimal values that ``rounds.csv`` stores."""
    if not records:
        raise ConfigError("no round records")
    asr = [_r6(r.asr) for r in records]
    return ExperimentSummary(final_asr(asr), avg_asr(asr), _r6(records[-1].ma),
                             None if baseline_ma is None else _r6(baseline_ma))


def rounds_csv_text(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUNDS_HEADER)
    for r in records:
        w.writerow([r.round, f"{r.ma:.6f}", f"{r.asr:.6f}", r.defense, ";".join(str(i) for i in r.excluded_ids)])
    return buf.getvalue()


def write_rounds_csv(records, path) -> None:
    Path(path).write_text(rounds_csv_text(records))


def read_rounds_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ROUNDS_HEADER:
            raise ConfigError(f"unexpected rounds.csv header {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append({
                "round": int(row["round"]),
                "ma": float(row["ma"]),
                "asr": float(row["asr"]),
                "defense": row["defense"],
                "excluded_ids": [int(x) for x in row["excluded_ids"].split(";") if x],
            })
    return rows


@dataclass
class _Row:
    ma: float
    asr: float


def summary_from_rounds_csv(path, baseline_ma: float | None = None) -> ExperimentSummary:
    rows = [_Row(r["ma"], r["asr"]) for r in read_rounds_csv(path)]
    return summarize(rows, baseline_ma)


def write_summary_csv(summary: ExperimentSummary, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerow(summary.row())
    Path(path).write_text(buf.getvalue())


def write_telemetry_csv(records, path) -> None:
    """Per-round extras that do not belong in ``rounds.csv``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "malicious_cosine", "weights"])
    for r in records:
        weights = "" if r.weights is None else ";".join(f"{x:.6f}" for x in r.weights)
        w.writerow([r.round, f"{r.malicious_cosine:.6f}", weights])
    Path(path).write_text(buf.getvalue())
