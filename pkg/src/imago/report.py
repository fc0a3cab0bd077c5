"""Report serialization: versioned JSON plus a markdown table mirroring the
per-approach comparison layout (per-class metric blocks, MCAE,
conservativeness ratio, total accuracy, per-class metric score)."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping, Sequence

from imago.errors import DataFormatError, ValidationError
from imago.metrics import SCORED_METRICS, EvalReport, per_class_score

REPORT_SCHEMA_VERSION = 1


def reports_to_jsonable(reports: Sequence[EvalReport], include_running: bool = True) -> dict:
    if not reports:
        raise ValidationError("no approaches to report")
    names = [r.approach for r in reports]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate approach names in report: {names}")
    out = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "approaches": {r.approach: r.to_jsonable(include_running) for r in reports},
    }
    if len(reports) >= 2:
        out["per_class_score"] = per_class_score({r.approach: r.per_class for r in reports})
    return out


def reports_to_json(reports: Sequence[EvalReport], include_running: bool = True) -> str:
    return json.dumps(reports_to_jsonable(reports, include_running), indent=2, sort_keys=True) + "\n"


def save_report(reports: Sequence[EvalReport], path: Path | str, include_running: bool = True) -> None:
    Path(path).write_text(reports_to_json(reports, include_running), encoding="utf-8")


def load_report(path: Path | str) -> list[EvalReport]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid report JSON: {exc}", path=path) from None
    if not isinstance(obj, dict) or "approaches" not in obj:
        raise DataFormatError("report JSON missing 'approaches'", path=path)
    if obj.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise DataFormatError(
            f"unsupported report schema version {obj.get('schema_version')!r}", path=path
        )
    reports = [EvalReport.from_jsonable(entry) for entry in obj["approaches"].values()]
    reports.sort(key=lambda r: list(obj["approaches"]).index(r.approach))
    return reports


def _band_label(i: int, size: int) -> str:
    lo = (i - 1) / size
    hi = i / size
    closer = "<=" if i == size else "<"
    return f"{lo:.1f} <= x' {closer} {hi:.1f}"


def _fmt(value: float | None, digits: int = 3) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def _fmt_pct(value: float) -> str:
    return f"{value * 100:.2f}%"


def _fmt_ratio(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def render_markdown(reports: Sequence[EvalReport]) -> str:
    """Comparison table: one Acc/Pre/Rec/F1 column block per approach,
    then the summary rows.  Undefined metrics render as "-"."""
    if not reports:
        raise ValidationError("no approaches to report")
    names = [r.approach for r in reports]
    n_classes = {len(r.per_class) for r in reports}
    if len(n_classes) != 1:
        raise ValidationError("approaches disagree on the number of classes")
    (size,) = n_classes

    lines = ["# Detector comparison", ""]
    header = ["Estimated level"]
    for name in names:
        header += [f"{name} Acc", f"{name} Pre", f"{name} Rec", f"{name} F1"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for i in range(1, size + 1):
        row = [_band_label(i, size)]
        for r in reports:
            m = r.per_class[i - 1]
            row += [_fmt(m.accuracy), _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")

    lines.append("| Metric | " + " | ".join(names) + " |")
    lines.append("|" + "---|" * (len(names) + 1))
    if len(reports) >= 2:
        scores = per_class_score({r.approach: r.per_class for r in reports})
        score_cells = [
            "/".join(str(scores[name][m]) for m in SCORED_METRICS) for name in names
        ]
        lines.append(
            "| Per class metric score (Acc/Pre/Rec/F1) | " + " | ".join(score_cells) + " |"
        )
    lines.append("| MCAE | " + " | ".join(_fmt_pct(r.mcae) for r in reports) + " |")
    lines.append(
        "| Conservativeness ratio | "
        + " | ".join(_fmt_ratio(r.conservativeness) for r in reports)
        + " |"
    )
    lines.append(
        "| Total accuracy | " + " | ".join(_fmt_pct(r.total_accuracy) for r in reports) + " |"
    )
    lines.append(
        "| Evaluated samples | " + " | ".join(str(r.n) for r in reports) + " |"
    )
    lines.append("")
    return "\n".join(lines)


def emit_report(reports: Sequence[EvalReport], format: str) -> str:
    """Deterministic document in the requested format ("json" or "markdown")."""
    if format == "json":
        return reports_to_json(reports)
    if format == "markdown":
        return render_markdown(reports)
    raise ValidationError(f"unknown report format {format!r} (expected json or markdown)")
