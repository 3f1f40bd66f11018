"""Consensus accuracy and mean-per-type statistics, plus CSV/SVG reports."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError, ParseError, QAAError
from .synth import N_CONSENSUS, QTYPES

__all__ = [
    "normalize_answer",
    "vqa_accuracy",
    "RecordResult",
    "EvalResult",
    "evaluate",
    "per_type_accuracy",
    "mpt",
    "normalized_mpt",
    "write_report",
    "bar_chart_svg",
    "read_eval",
]

MEANS = ("arithmetic", "harmonic")


def normalize_answer(text: str) -> str:
    return text.strip().lower()


def vqa_accuracy(prediction: str, human_answers: Sequence[str]) -> float:
    """``min(matches / 3, 1)`` over exactly ten human answers."""
    if len(human_answers) != N_CONSENSUS:
        raise DomainError(f"expected {N_CONSENSUS} human answers, got {len(human_answers)}")
    p = normalize_answer(prediction)
    matches = sum(normalize_answer(a) == p for a in human_answers)
    return min(matches / 3.0, 1.0)


@dataclass(frozen=True)
class RecordResult:
    id: str
    qtype: str
    prediction: str
    answer: str
    accuracy: float


def _check_qtypes(results: Sequence[RecordResult], qtypes: Sequence[str] | None) -> None:
    for r in results:
        if not r.qtype or (qtypes is not None and r.qtype not in qtypes):
            raise DomainError(f"record {r.id}: unknown qtype {r.qtype!r}")


def _type_order(results: Sequence[RecordResult], qtypes: Sequence[str] | None) -> list[str]:
    present = {r.qtype for r in results}
    if qtypes is not None:
        return [t for t in qtypes if t in present]
    return sorted(present)


def per_type_accuracy(results: Sequence[RecordResult], qtypes: Sequence[str] | None = QTYPES) -> dict[str, float]:
    """Mean accuracy per question type, in percent; types with no records are omitted.

    ``qtypes`` lists the accepted labels (and fixes the key order); ``None``
    accepts any non-empty label and orders keys alphabetically.
    """
    _check_qtypes(results, qtypes)
    groups: dict[str, list[float]] = defaultdict(list)
    for r in results:
        groups[r.qtype].append(r.accuracy)
    return {t: 100.0 * float(np.mean(groups[t])) for t in _type_order(results, qtypes)}


def mpt(per_type: Iterable[float], mean: str = "arithmetic") -> float:
    values = np.asarray(list(per_type), dtype=np.float64)
    if values.size == 0:
        raise DomainError("mean-per-type of an empty list")
    if mean == "arithmetic":
        return float(values.mean())
    if mean == "harmonic":
        if np.any(values == 0.0):
            return 0.0
        return float(values.size / np.sum(1.0 / values))
    raise DomainError(f"mean must be one of {MEANS}, got {mean!r}")


def _normalized_per_type(results: Sequence[RecordResult], qtypes: Sequence[str] | None) -> dict[str, float]:
    _check_qtypes(results, qtypes)
    groups: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in results:
        groups[r.qtype][r.answer].append(r.accuracy)
    return {
        t: 100.0 * float(np.mean([np.mean(accs) for accs in groups[t].values()]))
        for t in _type_order(results, qtypes)
    }


def normalized_mpt(results: Sequence[RecordResult], mean: str = "arithmetic",
                   qtypes: Sequence[str] | None = QTYPES) -> float:
    """MPT after averaging, within each type, over ground-truth answer groups."""
    return mpt(_normalized_per_type(results, qtypes).values(), mean)


@dataclass
class EvalResult:
    records: list[RecordResult] = field(repr=False)
    per_type: dict[str, float]
    arithmetic_mpt: float
    harmonic_mpt: float
    arithmetic_nmpt: float
    harmonic_nmpt: float
    accuracy: float

    AGGREGATES = ("arithmetic_mpt", "harmonic_mpt", "arithmetic_nmpt", "harmonic_nmpt", "accuracy")

    @classmethod
    def from_records(cls, records: Sequence[RecordResult], qtypes: Sequence[str] | None = QTYPES) -> "EvalResult":
        if not records:
            raise DomainError("cannot evaluate zero records")
        records = list(records)
        per_type = per_type_accuracy(records, qtypes)
        normalized = _normalized_per_type(records, qtypes)
        return cls(
            records=records,
            per_type=per_type,
            arithmetic_mpt=mpt(per_type.values(), "arithmetic"),
            harmonic_mpt=mpt(per_type.values(), "harmonic"),
            arithmetic_nmpt=mpt(normalized.values(), "arithmetic"),
            harmonic_nmpt=mpt(normalized.values(), "harmonic"),
            accuracy=100.0 * float(np.mean([r.accuracy for r in records])),
        )

    def rows(self) -> list[tuple[str, float]]:
        return list(self.per_type.items()) + [(name, getattr(self, name)) for name in self.AGGREGATES]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["statistic", "value"])
        for name, value in self.rows():
            writer.writerow([name, f"{value:.4f}"])
        return buf.getvalue()

    def to_json(self) -> dict:
        out = {name: getattr(self, name) for name in self.AGGREGATES}
        out["per_type"] = [[name, value] for name, value in self.per_type.items()]  # ordered
        out["records"] = [asdict(r) for r in self.records]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EvalResult":
        try:
            records = [RecordResult(**r) for r in obj["records"]]
            kwargs = {name: float(obj[name]) for name in cls.AGGREGATES}
            per_type = {str(k): float(v) for k, v in obj["per_type"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad evaluation JSON: {exc}") from None
        return cls(records=records, per_type=per_type, **kwargs)


def evaluate(predictions: Sequence[str], records, qtypes: Sequence[str] | None = QTYPES) -> EvalResult:
    """Score ``predictions`` against records carrying ``id``, ``qtype`` and ``answers``."""
    records = list(records)
    if len(predictions) != len(records):
        raise DomainError(f"{len(predictions)} predictions for {len(records)} records")
    results = [
        RecordResult(rec.id, rec.qtype, str(pred), rec.answers[0], vqa_accuracy(str(pred), rec.answers))
        for pred, rec in zip(predictions, records)
    ]
    return EvalResult.from_records(results, qtypes)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def bar_chart_svg(per_type: dict[str, float], title: str = "Accuracy per question type") -> str:
    bar, gap, top, plot_h, left = 48, 16, 32, 200, 40
    width = left + len(per_type) * (bar + gap) + gap
    height = top + plot_h + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="20" font-family="sans-serif" font-size="13">{_escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - gap}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0, 50, 100):
        y = top + plot_h - plot_h * tick / 100
        parts.append(f'<text x="4" y="{y + 4:.1f}" font-family="sans-serif" font-size="10">{tick}</text>')
    for i, (name, value) in enumerate(per_type.items()):
        x = left + gap + i * (bar + gap)
        h = plot_h * min(max(value, 0.0), 100.0) / 100
        y = top + plot_h - h
        parts.append(f'<rect x="{x}" y="{y:.2f}" width="{bar}" height="{h:.2f}" fill="#4878a8">'
                     f'<title>{_escape(name)}: {value:.2f}</title></rect>')
        parts.append(f'<text x="{x + bar / 2}" y="{y - 4:.2f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{value:.1f}</text>')
        parts.append(f'<text x="{x + bar / 2}" y="{top + plot_h + 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise QAAError(f"cannot write {path}: {exc.strerror}") from None


def write_report(result: EvalResult, csv_path=None, svg_path=None) -> None:
    if csv_path is not None:
        _write(csv_path, result.to_csv())
    if svg_path is not None:
        _write(svg_path, bar_chart_svg(result.per_type))


def read_eval(path) -> EvalResult:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise QAAError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return EvalResult.from_json(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
