from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from lawprompt.errors import EmptyFact, MissingPlaceholder, TemplateError, UnknownStrategyKey
from lawprompt.prompts import DEFAULT_TEMPLATES, PLACEHOLDER, Strategy, load_templates, render

GOLDEN = Path(__file__).parent / "golden"
FACT = "A saw B put his phone in his coat bag, and took it when he was not aware of it."


@pytest.mark.parametrize("strategy", list(Strategy))
def test_golden(strategy):
    expected = (GOLDEN / f"{strategy.value}.txt").read_bytes()
    assert render(strategy, FACT).text.encode("utf-8") == expected


def test_syllogism_template_shape():
    lines = render(Strategy.LEGAL_SYLLOGISM, "X").text.split("\n")
    assert lines == [
        "In the legal syllogism, the major premise is the law article, the minor premise is the facts "
        "of the case, and the conclusion is the judgment of case.",
        "",
        "Case: X",
        "",
        "Let us use legal syllogism to think and output the judgment:",
    ]


def test_cot_instruction():
    text = render(Strategy.ZERO_SHOT_COT, "X").text
    assert text.startswith("Case: X\n\n")
    assert "Let us think step by step" in text


def test_baseline_substitutes_once():
    text = render(Strategy.BASELINE, "F").text
    assert text == "Case: F\n\nOutput the judgment of this case:"


def test_no_trailing_whitespace():
    for tpl in DEFAULT_TEMPLATES.values():
        assert all(line == line.rstrip() for line in tpl.split("\n"))


@pytest.mark.parametrize("fact", ["", "   ", "\n\t"])
def test_empty_fact(fact):
    with pytest.raises(EmptyFact):
        render(Strategy.BASELINE, fact)


def test_bundle_fields():
    b = render(Strategy.ZERO_SHOT_COT, "X", case_id="c1")
    assert (b.case_id, b.strategy) == ("c1", Strategy.ZERO_SHOT_COT)
    assert b.template_version == load_templates().version


def test_fact_containing_placeholder_not_resubstituted():
    text = render(Strategy.BASELINE, "before {fact} after").text
    assert text == "Case: before {fact} after\n\nOutput the judgment of this case:"


def test_default_version_is_content_digest():
    a, b = load_templates(), load_templates()
    assert a.version == b.version and len(a.version) == 16


def test_override_single_strategy(tmp_path):
    path = tmp_path / "tpl.json"
    zh = "在法律三段论中，大前提是法条，小前提是案件事实，结论是判决。\n\n案件：{fact}\n\n请用法律三段论思考并输出判决："
    path.write_text(json.dumps({"LegalSyllogism": zh}, ensure_ascii=False), encoding="utf-8")
    tpl = load_templates(path)
    assert tpl.templates[Strategy.LEGAL_SYLLOGISM] == zh
    assert tpl.templates[Strategy.BASELINE] == DEFAULT_TEMPLATES[Strategy.BASELINE]
    assert tpl.version != load_templates().version
    assert render(Strategy.LEGAL_SYLLOGISM, "甲盗窃", tpl).text.count("甲盗窃") == 1


def test_override_yaml(tmp_path):
    path = tmp_path / "tpl.yaml"
    path.write_text('Baseline: "Fact: {fact}\\nCharge:"\n', encoding="utf-8")
    assert render(Strategy.BASELINE, "x", load_templates(path)).text == "Fact: x\nCharge:"


def test_missing_placeholder(tmp_path):
    path = tmp_path / "tpl.json"
    path.write_text(json.dumps({"ZeroShotCoT": "Let us think step by step."}))
    with pytest.raises(MissingPlaceholder) as exc:
        load_templates(path)
    assert exc.value.strategy == "ZeroShotCoT"


def test_double_placeholder(tmp_path):
    path = tmp_path / "tpl.json"
    path.write_text(json.dumps({"Baseline": "{fact} {fact}"}))
    with pytest.raises(TemplateError):
        load_templates(path)


def test_unknown_key(tmp_path):
    path = tmp_path / "tpl.json"
    path.write_text(json.dumps({"FewShotCoT": "{fact}"}))
    with pytest.raises(UnknownStrategyKey):
        load_templates(path)


def test_strategy_names_closed():
    assert [s.value for s in Strategy] == ["Baseline", "ZeroShotCoT", "LegalSyllogism"]


facts = st.text(min_size=1, max_size=80).filter(lambda s: s.strip())


@given(strategy=st.sampled_from(list(Strategy)), f1=facts, f2=facts)
def test_injective(strategy, f1, f2):
    assume(f1 != f2)
    assert render(strategy, f1).text != render(strategy, f2).text


@given(strategy=st.sampled_from(list(Strategy)), fact=facts)
def test_fact_appears_exactly_once(strategy, fact):
    prefix, suffix = DEFAULT_TEMPLATES[strategy].split(PLACEHOLDER)
    text = render(strategy, fact).text
    assert text[len(prefix) : len(prefix) + len(fact)] == fact
    # facts that overlap the template's own wording can legitimately recur
    assume(fact not in prefix + fact[:-1] and fact not in fact[1:] + suffix)
    assert text.count(fact) == 1


@given(strategy=st.sampled_from(list(Strategy)), fact=facts)
def test_render_is_pure(strategy, fact):
    assert render(strategy, fact) == render(strategy, fact)
