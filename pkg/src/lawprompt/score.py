"""Verdicts, accuracy aggregation, error taxonomy and report rendering."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .errors import AlignmentError, EmptyVerdicts, ReportSchemaError, UnknownFormat
from .parse import ARTICLE_MISMATCH, TRUNCATED, UNSTRUCTURED, Prediction
from .prompts import Strategy

CORRECT = "correct"
WRONG_CHARGE = "wrong_charge"
OVER_SPLIT = "over_split"
NO_CHARGE = "no_charge"
UNPARSABLE = "unparsable"
CATEGORIES = (CORRECT, WRONG_CHARGE, OVER_SPLIT, NO_CHARGE, UNPARSABLE)

REPORT_SCHEMA = "lawprompt.report/1"
FORMATS = ("table", "csv", "json")


@dataclass(frozen=True)
class Verdict:
    case_id: str
    strategy: Strategy
    correct: bool
    category: str
    article_mismatch: bool = False
    gold: str = ""


def judge(prediction: Prediction, gold: Iterable[str], *, contains_gold: bool = False) -> Verdict:
    """Score one prediction by exact set equality against the gold charges.

    ``contains_gold=True`` is a lenient, non-default mode that also accepts a
    predicted set that merely includes the gold charge.
    """
    gold = frozenset(gold)
    predicted = frozenset(prediction.charges)
    if not predicted:
        if TRUNCATED in prediction.flags or UNSTRUCTURED in prediction.flags:
            category = UNPARSABLE
        else:
            category = NO_CHARGE
    elif predicted == gold or (contains_gold and gold <= predicted):
        category = CORRECT
    elif gold < predicted:
        category = OVER_SPLIT
    else:
        category = WRONG_CHARGE
    return Verdict(
        case_id=prediction.case_id,
        strategy=prediction.strategy,
        correct=category == CORRECT,
        category=category,
        article_mismatch=ARTICLE_MISMATCH in prediction.flags,
        gold=next(iter(gold)) if len(gold) == 1 else "",
    )


def micro_accuracy(verdicts: Sequence[Verdict]) -> float:
    if not verdicts:
        raise EmptyVerdicts("no verdicts to score")
    return sum(v.correct for v in verdicts) / len(verdicts)


def per_charge_accuracy(verdicts: Iterable[Verdict], gold: Mapping[str, str]) -> dict[str, float]:
    """Accuracy within each gold-charge stratum; strata without cases are omitted."""
    hits: Counter[str] = Counter()
    totals: Counter[str] = Counter()
    for v in verdicts:
        charge = gold[v.case_id]
        totals[charge] += 1
        hits[charge] += v.correct
    return {c: hits[c] / totals[c] for c in sorted(totals)}


def error_taxonomy(verdicts: Sequence[Verdict], predictions: Sequence[Prediction]) -> dict[str, dict[str, int]]:
    """Category and article-mismatch tallies per strategy.

    Article mismatches are counted independently of correctness.
    """
    v_keys = sorted((v.strategy.value, v.case_id) for v in verdicts)
    p_keys = sorted((p.strategy.value, p.case_id) for p in predictions)
    if v_keys != p_keys:
        raise AlignmentError("verdicts and predictions do not cover the same (strategy, case) pairs")
    tallies: dict[str, dict[str, int]] = {}
    for v in verdicts:
        t = tallies.setdefault(v.strategy.value, {c: 0 for c in CATEGORIES} | {ARTICLE_MISMATCH: 0})
        t[v.category] += 1
    for p in predictions:
        if ARTICLE_MISMATCH in p.flags:
            tallies[p.strategy.value][ARTICLE_MISMATCH] += 1
    return tallies


@dataclass
class StrategyScore:
    n_total: int
    n_correct: int
    per_charge_correct: dict[str, int]
    n_per_charge: dict[str, int]
    category_counts: dict[str, int]
    article_mismatch_count: int
    usage: dict[str, int] = field(default_factory=dict)

    @property
    def micro_accuracy(self) -> float:
        return self.n_correct / self.n_total if self.n_total else 0.0

    @property
    def per_charge(self) -> dict[str, float]:
        return {c: self.per_charge_correct[c] / n for c, n in self.n_per_charge.items() if n}


@dataclass
class EvalReport:
    model: str
    template_version: str
    charges: list[str]
    labels: dict[str, str]
    strategies: dict[str, StrategyScore]
    usage: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "model": self.model,
            "template_version": self.template_version,
            "charges": list(self.charges),
            "labels": dict(self.labels),
            "strategies": {
                name: {
                    "micro_accuracy": s.micro_accuracy,
                    "n_total": s.n_total,
                    "n_correct": s.n_correct,
                    "per_charge": s.per_charge,
                    "per_charge_correct": s.per_charge_correct,
                    "n_per_charge": s.n_per_charge,
                    "category_counts": s.category_counts,
                    "article_mismatch_count": s.article_mismatch_count,
                    "usage": s.usage,
                }
                for name, s in self.strategies.items()
            },
            "usage": self.usage,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        if not isinstance(data, Mapping) or data.get("schema") != REPORT_SCHEMA:
            raise ReportSchemaError(f"expected a {REPORT_SCHEMA} document")
        try:
            strategies = {
                name: StrategyScore(
                    n_total=int(s["n_total"]),
                    n_correct=int(s["n_correct"]),
                    per_charge_correct={k: int(v) for k, v in s["per_charge_correct"].items()},
                    n_per_charge={k: int(v) for k, v in s["n_per_charge"].items()},
                    category_counts={k: int(v) for k, v in s["category_counts"].items()},
                    article_mismatch_count=int(s["article_mismatch_count"]),
                    usage=dict(s.get("usage", {})),
                )
                for name, s in data["strategies"].items()
            }
            return cls(
                model=str(data["model"]),
                template_version=str(data["template_version"]),
                charges=list(data["charges"]),
                labels=dict(data.get("labels", {})),
                strategies=strategies,
                usage=dict(data.get("usage", {})),
            )
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise ReportSchemaError(f"malformed report: {exc}") from exc


def build_report(
    predictions: Sequence[Prediction],
    gold: Mapping[str, str],
    *,
    charges: Sequence[str] | None = None,
    labels: Mapping[str, str] | None = None,
    strategies: Sequence[Strategy | str] | None = None,
    model: str = "",
    template_version: str = "",
    contains_gold: bool = False,
) -> EvalReport:
    """Judge every prediction against ``gold`` (case id -> charge) and aggregate.

    Predictions are processed in (strategy, case id) order so the result does
    not depend on input order.
    """
    by_strategy: dict[str, list[Prediction]] = defaultdict(list)
    seen: set[tuple[str, str]] = set()
    for p in sorted(predictions, key=lambda p: (p.strategy.value, p.case_id)):
        if p.case_id not in gold:
            raise AlignmentError(f"prediction for unknown case {p.case_id!r}")
        key = (p.strategy.value, p.case_id)
        if key in seen:
            raise AlignmentError(f"duplicate prediction for {p.strategy.value}/{p.case_id}")
        seen.add(key)
        by_strategy[p.strategy.value].append(p)
    order = [Strategy(s).value for s in strategies] if strategies is not None else sorted(by_strategy)
    charges = list(charges) if charges is not None else sorted(set(gold.values()))

    scores: dict[str, StrategyScore] = {}
    for name in order:
        preds = by_strategy.get(name, [])
        verdicts = [judge(p, [gold[p.case_id]], contains_gold=contains_gold) for p in preds]
        tallies = error_taxonomy(verdicts, preds).get(name, {c: 0 for c in CATEGORIES} | {ARTICLE_MISMATCH: 0})
        n_per = Counter(gold[v.case_id] for v in verdicts)
        c_per = Counter(gold[v.case_id] for v in verdicts if v.correct)
        scores[name] = StrategyScore(
            n_total=len(verdicts),
            n_correct=sum(v.correct for v in verdicts),
            per_charge_correct={c: c_per[c] for c in sorted(n_per)},
            n_per_charge={c: n_per[c] for c in sorted(n_per)},
            category_counts={c: tallies[c] for c in CATEGORIES},
            article_mismatch_count=tallies[ARTICLE_MISMATCH],
            usage={
                "prompt_tokens": sum(p.prompt_tokens for p in preds),
                "completion_tokens": sum(p.completion_tokens for p in preds),
            },
        )
    usage = {
        "prompt_tokens": sum(s.usage["prompt_tokens"] for s in scores.values()),
        "completion_tokens": sum(s.usage["completion_tokens"] for s in scores.values()),
    }
    return EvalReport(
        model=model,
        template_version=template_version,
        charges=charges,
        labels={c: (labels or {}).get(c, c) for c in charges},
        strategies=scores,
        usage=usage,
    )


def round_half_even(numerator: int, denominator: int, places: int) -> str:
    """Exact ratio rounded half-to-even, formatted with ``places`` decimals."""
    scaled = Fraction(numerator, denominator) * 10**places
    q, r = divmod(scaled.numerator, scaled.denominator)
    if 2 * r > scaled.denominator or (2 * r == scaled.denominator and q % 2):
        q += 1
    return f"{Decimal(q).scaleb(-places):.{places}f}"


def _table_rows(report: EvalReport) -> list[list[str]]:
    rows = []
    for name, s in report.strategies.items():
        row = [Strategy(name).display_name]
        row.append(round_half_even(s.n_correct, s.n_total, 4) if s.n_total else "")
        for c in report.charges:
            n = s.n_per_charge.get(c, 0)
            row.append(round_half_even(s.per_charge_correct.get(c, 0), n, 2) if n else "")
        rows.append(row)
    return rows


def _header(report: EvalReport) -> list[str]:
    return ["Strategy", "Total"] + [report.labels.get(c, c) for c in report.charges]


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells: Sequence[str]) -> str:
        return " | ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    out = [line(header), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def emit_report(report: EvalReport, fmt: str = "table") -> bytes:
    """Render a report as an aligned table, CSV, or JSON; output is byte-deterministic.

    Total is rounded half-even to 4 decimals and per-charge cells to 2.
    """
    if fmt == "table":
        return format_table(_header(report), _table_rows(report)).encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_header(report))
        writer.writerows(_table_rows(report))
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        return (json.dumps(report.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8")
    raise UnknownFormat(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def emit_comparison(reports: Sequence[EvalReport]) -> bytes:
    """One table across runs, a row group per model.

    A Templates column is added when runs used different template versions.
    """
    if not reports:
        return b""
    charges = list(reports[0].charges)
    for r in reports[1:]:
        if list(r.charges) != charges:
            raise ReportSchemaError("reports cover different charge columns")
    labels = {c: reports[0].labels.get(c, c) for c in charges}
    show_version = len({r.template_version for r in reports}) > 1
    header = ["Model"] + (["Templates"] if show_version else []) + ["Strategy", "Total"]
    header += [labels[c] for c in charges]
    rows = []
    for r in reports:
        for i, row in enumerate(_table_rows(r)):
            lead = [r.model if i == 0 else ""]
            if show_version:
                lead.append(r.template_version if i == 0 else "")
            rows.append(lead + row)
    return format_table(header, rows).encode("utf-8")
