from __future__ import annotations

import csv
import io
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lawprompt.errors import AlignmentError, EmptyVerdicts, ReportSchemaError, UnknownFormat
from lawprompt.parse import ARTICLE_MISMATCH, TRUNCATED, UNSTRUCTURED, Prediction
from lawprompt.prompts import Strategy
from lawprompt.score import (
    CORRECT,
    NO_CHARGE,
    OVER_SPLIT,
    UNPARSABLE,
    WRONG_CHARGE,
    EvalReport,
    Verdict,
    build_report,
    emit_comparison,
    emit_report,
    error_taxonomy,
    judge,
    micro_accuracy,
    per_charge_accuracy,
    round_half_even,
)

CHARGES = ["fraud", "theft", "robbery", "murder", "rape", "property_damage", "intentional_injury", "negligent_serious_injury"]
LABELS = dict(zip(CHARGES, ["Fraud", "Theft", "Rob", "Mud", "Rape", "Pod", "Ini", "Nsi"]))


def P(case_id="c", charges=(), flags=(), strategy=Strategy.LEGAL_SYLLOGISM, tokens=(0, 0)):
    return Prediction(
        case_id, strategy, "", None, "", tuple(charges), (), frozenset(flags),
        prompt_tokens=tokens[0], completion_tokens=tokens[1],
    )


def V(case_id, correct, strategy=Strategy.BASELINE):
    return Verdict(case_id, strategy, correct, CORRECT if correct else WRONG_CHARGE)


def synth_layout(counts_by_strategy, per_charge=100):
    """Predictions realising exact per-charge correct counts on an equal-strata layout."""
    gold = {f"{c}-{i:03d}": c for c in CHARGES for i in range(per_charge)}
    preds = []
    for strategy, counts in counts_by_strategy.items():
        for c, k in zip(CHARGES, counts):
            wrong = "theft" if c != "theft" else "fraud"
            for i in range(per_charge):
                preds.append(P(f"{c}-{i:03d}", [c] if i < k else [wrong], strategy=strategy))
    return preds, gold


class TestJudge:
    def test_correct(self):
        assert judge(P(charges=["theft"]), {"theft"}).category == CORRECT

    def test_over_split_is_wrong(self):
        v = judge(P(charges=["fraud", "accepting_bribes"]), {"fraud"})
        assert (v.correct, v.category) == (False, OVER_SPLIT)

    def test_over_split_lenient(self):
        assert judge(P(charges=["fraud", "accepting_bribes"]), {"fraud"}, contains_gold=True).correct

    def test_wrong_charge(self):
        assert judge(P(charges=["theft"]), {"robbery"}).category == WRONG_CHARGE

    def test_wrong_even_if_overlapping(self):
        assert judge(P(charges=["theft", "murder"]), {"robbery"}).category == WRONG_CHARGE

    def test_no_charge(self):
        assert judge(P(), {"theft"}).category == NO_CHARGE

    @pytest.mark.parametrize("flag", [TRUNCATED, UNSTRUCTURED])
    def test_unparsable(self, flag):
        assert judge(P(flags=[flag]), {"theft"}).category == UNPARSABLE

    def test_mismatch_orthogonal(self):
        v = judge(P(charges=["robbery"], flags=[ARTICLE_MISMATCH]), {"robbery"})
        assert v.correct and v.article_mismatch


class TestAccuracy:
    def test_micro_empty(self):
        with pytest.raises(EmptyVerdicts):
            micro_accuracy([])

    def test_micro_548_of_800(self):
        verdicts = [V(str(i), i < 548) for i in range(800)]
        assert micro_accuracy(verdicts) == 0.685

    def test_per_charge_rounded(self):
        report = build_report(*synth_layout({Strategy.BASELINE: [94, 0, 0, 0, 0, 0, 0, 0]}), charges=CHARGES)
        assert emit_report(report, "csv").decode().splitlines()[1].split(",")[2] == "0.94"

    def test_empty_stratum_absent(self):
        gold = {"a": "theft", "b": "theft"}
        acc = per_charge_accuracy([V("a", True), V("b", False)], gold)
        assert acc == {"theft": 0.5}

    def test_taxonomy_alignment(self):
        with pytest.raises(AlignmentError):
            error_taxonomy([V("a", True)], [P("b", strategy=Strategy.BASELINE)])

    def test_taxonomy_counts_mismatch_independently(self):
        preds = [
            P("a", ["robbery"], [ARTICLE_MISMATCH]),
            P("b", ["theft"], [ARTICLE_MISMATCH]),
            P("c", ["theft"]),
        ]
        verdicts = [judge(p, {"robbery"}) for p in preds]
        tallies = error_taxonomy(verdicts, preds)["LegalSyllogism"]
        assert tallies[CORRECT] == 1 and tallies[WRONG_CHARGE] == 2 and tallies[ARTICLE_MISMATCH] == 2


class TestRounding:
    @pytest.mark.parametrize(
        "num,den,places,expected",
        [
            (548, 800, 4, "0.6850"),
            (105, 800, 4, "0.1312"),  # exact tie 0.13125 goes to even
            (107, 800, 4, "0.1338"),  # exact tie 0.13375 goes to even
            (1, 8, 2, "0.12"),
            (3, 8, 2, "0.38"),
            (0, 5, 4, "0.0000"),
            (5, 5, 2, "1.00"),
            (2, 3, 4, "0.6667"),
        ],
    )
    def test_half_even(self, num, den, places, expected):
        assert round_half_even(num, den, places) == expected


class TestBuildReport:
    def test_target_table_exact(self):
        counts = {
            Strategy.BASELINE: [60, 70, 50, 40, 90, 30, 80, 20],
            Strategy.LEGAL_SYLLOGISM: [61, 72, 53, 44, 95, 31, 86, 26],
        }
        report = build_report(*synth_layout(counts), charges=CHARGES, labels=LABELS, strategies=list(counts))
        lines = emit_report(report).decode().splitlines()
        assert lines[0].split() == "Strategy | Total | Fraud | Theft | Rob | Mud | Rape | Pod | Ini | Nsi".split()
        assert [c.strip() for c in lines[2].split(" | ")][1:] == [
            "0.5500", "0.60", "0.70", "0.50", "0.40", "0.90", "0.30", "0.80", "0.20",
        ]
        assert [c.strip() for c in lines[3].split(" | ")] == [
            "Legal syllogism", "0.5850", "0.61", "0.72", "0.53", "0.44", "0.95", "0.31", "0.86", "0.26",
        ]

    def test_unknown_case(self):
        with pytest.raises(AlignmentError):
            build_report([P("zzz")], {"a": "theft"})

    def test_duplicate_prediction(self):
        with pytest.raises(AlignmentError):
            build_report([P("a"), P("a")], {"a": "theft"})

    def test_strategy_order_respected(self):
        preds, gold = synth_layout({Strategy.BASELINE: [1] * 8, Strategy.ZERO_SHOT_COT: [2] * 8}, per_charge=3)
        report = build_report(preds, gold, strategies=[Strategy.ZERO_SHOT_COT, Strategy.BASELINE])
        assert list(report.strategies) == ["ZeroShotCoT", "Baseline"]

    def test_usage_summed(self):
        report = build_report([P("a", tokens=(3, 4)), P("b", tokens=(1, 1))], {"a": "theft", "b": "theft"})
        assert report.usage == {"prompt_tokens": 4, "completion_tokens": 5}

    def test_empty_report_header_only(self):
        report = build_report([], {}, charges=CHARGES, labels=LABELS, strategies=[])
        table = emit_report(report).decode().splitlines()
        assert len(table) == 2 and table[0].startswith("Strategy")


@given(st.permutations(list(range(40))), st.integers(0, 2**32))
def test_permutation_invariance(order, seed):
    rng = random.Random(seed)
    gold = {f"c{i:02d}": rng.choice(CHARGES[:3]) for i in range(40)}
    preds = [P(f"c{i:02d}", [rng.choice(CHARGES[:4])], strategy=Strategy.BASELINE) for i in range(40)]
    a = build_report(preds, gold, charges=CHARGES[:3])
    b = build_report([preds[i] for i in order], gold, charges=CHARGES[:3])
    assert emit_report(a, "json") == emit_report(b, "json")


class TestEmit:
    @pytest.fixture
    def report(self):
        preds, gold = synth_layout({Strategy.BASELINE: [5, 4, 3, 2, 1, 0, 5, 5]}, per_charge=5)
        return build_report(preds, gold, charges=CHARGES, labels=LABELS, model="m", template_version="v1")

    def test_unknown_format(self, report):
        with pytest.raises(UnknownFormat):
            emit_report(report, "xml")

    def test_deterministic(self, report):
        for fmt in ("table", "csv", "json"):
            assert emit_report(report, fmt) == emit_report(report, fmt)

    def test_csv_parses(self, report):
        rows = list(csv.reader(io.StringIO(emit_report(report, "csv").decode())))
        assert rows[1][:3] == ["Baseline", "0.6250", "1.00"]

    def test_json_roundtrip(self, report):
        again = EvalReport.from_dict(json.loads(emit_report(report, "json")))
        assert emit_report(again, "json") == emit_report(report, "json")
        assert emit_report(again) == emit_report(report)

    @pytest.mark.parametrize(
        "doc",
        [{}, {"schema": "other/1"}, {"schema": "lawprompt.report/1"}, {"schema": "lawprompt.report/1", "strategies": 3}],
    )
    def test_from_dict_schema_errors(self, doc):
        with pytest.raises(ReportSchemaError):
            EvalReport.from_dict(doc)

    def test_comparison(self, report):
        other = EvalReport.from_dict(report.to_dict())
        other.model, other.template_version = "m2", "v2"
        lines = emit_comparison([report, other]).decode().splitlines()
        assert [c.strip() for c in lines[0].split(" | ")][:4] == ["Model", "Templates", "Strategy", "Total"]
        assert [c.strip() for c in lines[3].split(" | ")][:3] == ["m2", "v2", "Baseline"]

    def test_comparison_same_version_no_column(self, report):
        assert b"Templates" not in emit_comparison([report, report])

    def test_comparison_mismatched_charges(self, report):
        other = EvalReport.from_dict(report.to_dict())
        other.charges = other.charges[:2]
        with pytest.raises(ReportSchemaError):
            emit_comparison([report, other])


def brute_force(verdicts, gold):
    """Independent recount by explicit loops over each stratum."""
    total = 0
    for v in verdicts:
        if v.correct:
            total += 1
    strata = {}
    for charge in set(gold.values()):
        members = [v for v in verdicts if gold[v.case_id] == charge]
        if members:
            strata[charge] = len([v for v in members if v.correct]) / len(members)
    return total / len(verdicts), strata


def random_verdicts(rng):
    n = rng.randint(1, 120)
    gold = {f"k{i}": rng.choice(CHARGES) for i in range(n)}
    verdicts = [V(cid, rng.random() < rng.random()) for cid in gold]
    return verdicts, gold


def test_oracle_small_batch():
    rng = random.Random(7)
    for _ in range(50):
        verdicts, gold = random_verdicts(rng)
        micro, strata = brute_force(verdicts, gold)
        assert micro_accuracy(verdicts) == pytest.approx(micro, abs=1e-12)
        assert per_charge_accuracy(verdicts, gold) == pytest.approx(strata, abs=1e-12)


def test_equal_strata_micro_equals_mean():
    rng = random.Random(3)
    counts = {Strategy.BASELINE: [rng.randint(0, 100) for _ in CHARGES]}
    report = build_report(*synth_layout(counts), charges=CHARGES)
    s = report.strategies["Baseline"]
    mean = sum(s.per_charge.values()) / len(s.per_charge)
    assert abs(s.micro_accuracy - mean) <= 1e-12
