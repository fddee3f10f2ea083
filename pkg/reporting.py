"""
Report Files

This module:
1. Collects checked properties as (property, verdict, witness) lines
2. Writes the text report, one "property: verdict [key=value ...]" line per property
3. Writes the results workbook (Runs / Properties / Summary sheets) with pandas + openpyxl
"""

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import InvalidParameter

# ============== CONFIGURATION ==============
VERDICTS = ("pass", "fail", "certified-by-construction", "inconclusive")
# ===========================================


@dataclass(frozen=True)
class PropertyLine:
    property: str
    verdict: str
    witness: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise InvalidParameter(f"Verdict '{self.verdict}' for {self.property} is not one of {VERDICTS}")


def _value(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, np.ndarray):
        return "[" + ", ".join(_value(v) for v in value.tolist()) + "]"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_value(v) for v in value) + "]"
    return str(value)


def format_line(line):
    text = f"{line.property}: {line.verdict}"
    if line.witness:
        text += " [" + ", ".join(f"{key}={_value(value)}" for key, value in line.witness.items()) + "]"
    return text


def format_report(lines, header=()):
    body = [f"# {item}" for item in header] + [format_line(line) for line in lines]
    return "\n".join(body) + "\n"


def write_report(path, lines, header=()):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(format_report(lines, header))
    return path


def run_row(outcome, verdict=None, diagnostic=None):
    """One Runs-sheet row for a batch outcome."""
    row = {"Rule": outcome.rule_name, "Run": outcome.label, "Status": "ok" if outcome.ok else "failed",
           "Error": outcome.error or ""}
    if outcome.record is not None:
        record = outcome.record
        row.update({
            "Samples": len(record),
            "Final time": float(record.times[-1]),
            "Final state": _value(record.final_state),
            "Stopped early": "Yes" if record.stopped_early else "No",
            "Max projection": record.max_projection,
            "CCW min": float(record.ccw_mins[-1]),
        })
    if verdict is not None:
        row.update({
            "Final speed": verdict.final_speed,
            "NE distance": verdict.final_ne_distance,
            "Correlation tail": verdict.correlation_tail,
            "Converged": "Yes" if verdict.converged else "No",
        })
    if diagnostic is not None:
        row["Correlation integral"] = diagnostic.integral_of_correlation
    return row


def write_results_workbook(path, run_rows, lines, summary):
    """
    Save the results workbook.

    Args:
        path: .xlsx output path
        run_rows: dicts from run_row()
        lines: PropertyLines
        summary: ordered mapping metric -> value
    """
    folder = os.path.dirname(path)
    os.makedirs(folder if folder else ".", exist_ok=True)

    properties = [{
        "Property": line.property,
        "Verdict": line.verdict,
        "Witness": ", ".join(f"{key}={_value(value)}" for key, value in line.witness.items()),
    } for line in lines]

    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        pd.DataFrame(run_rows).to_excel(writer, sheet_name="Runs", index=False)
        pd.DataFrame(properties, columns=["Property", "Verdict", "Witness"]).to_excel(
            writer, sheet_name="Properties", index=False
        )
        pd.DataFrame({
            "Metric": list(summary.keys()),
            "Value": [_value(value) for value in summary.values()],
        }).to_excel(writer, sheet_name="Summary", index=False)
    return path
