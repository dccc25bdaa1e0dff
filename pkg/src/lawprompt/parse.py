"""Turn raw model output into a syllogism, a judged charge set and cited articles."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import ChargeLexicon
from .errors import EmptyOutput
from .prompts import Strategy

UNSTRUCTURED = "unstructured"
TRUNCATED = "truncated"
NO_CHARGE_FOUND = "no_charge_found"
ARTICLE_MISMATCH = "article_mismatch"
FLAGS = (UNSTRUCTURED, TRUNCATED, NO_CHARGE_FOUND, ARTICLE_MISMATCH)

_PARTS = ("major", "minor", "conclusion")
# optional markdown decoration before a label: "**", "#", "-", ">"
_LABEL_TEMPLATE = r"^[ \t]*(?:[*#>\-]+[ \t]*)?(?:{alts})[ \t]*(?:\*\*)?[ \t]*[:：](?:[ \t]*\*\*)?"

_CN_DIGITS = {"零": 0, "〇": 0, "一": 1, "二": 2, "两": 2, "三": 3, "四": 4, "五": 5, "六": 6, "七": 7, "八": 8, "九": 9}
_CN_UNITS = {"十": 10, "百": 100, "千": 1000}


@dataclass(frozen=True)
class Syllogism:
    major: str
    minor: str
    conclusion: str

    def to_text(self) -> str:
        return f"Major premise: {self.major}\nMinor premise: {self.minor}\nConclusion: {self.conclusion}"


@dataclass(frozen=True)
class Prediction:
    case_id: str
    strategy: Strategy
    raw: str
    syllogism: Syllogism | None
    judgment_text: str
    charges: tuple[str, ...]
    articles: tuple[int, ...]
    flags: frozenset[str] = field(default_factory=frozenset)
    model: str = ""
    prompt_tokens: int = 0
    completion_tokens: int = 0


class LabelTable:
    """Label aliases for the three syllogism parts plus article-citation patterns."""

    def __init__(
        self,
        major: Iterable[str],
        minor: Iterable[str],
        conclusion: Iterable[str],
        article_patterns: Iterable[str] = (),
    ):
        self.aliases = {"major": tuple(major), "minor": tuple(minor), "conclusion": tuple(conclusion)}
        self._label_res = {}
        for part, aliases in self.aliases.items():
            if not aliases:
                raise ValueError(f"no labels for {part}")
            alts = "|".join(re.escape(a) for a in sorted(aliases, key=len, reverse=True))
            self._label_res[part] = re.compile(_LABEL_TEMPLATE.format(alts=alts), re.IGNORECASE | re.MULTILINE)
        self.article_patterns = tuple(re.compile(p, re.IGNORECASE) for p in article_patterns)

    def label_re(self, part: str) -> re.Pattern[str]:
        return self._label_res[part]


def load_labels(path: str | Path | None = None) -> LabelTable:
    """Read a label table; the bundled English/Chinese defaults when *path* is None."""
    if path is None:
        raw = json.loads(resources.files("lawprompt").joinpath("data/labels.json").read_text("utf-8"))
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return LabelTable(raw["major"], raw["minor"], raw["conclusion"], raw.get("article_patterns", ()))


_DEFAULT_LABELS: LabelTable | None = None


def default_labels() -> LabelTable:
    global _DEFAULT_LABELS
    if _DEFAULT_LABELS is None:
        _DEFAULT_LABELS = load_labels()
    return _DEFAULT_LABELS


def parse_syllogism(text: str, labels: LabelTable | None = None) -> Syllogism | None:
    """Split labelled output into major premise, minor premise and conclusion.

    Uses the first occurrence of each label; they must appear in that order at
    line starts. The conclusion runs to the end of the text. Returns None when
    a label is missing, out of order, or a part comes out empty.
    """
    labels = labels or default_labels()
    matches = []
    for part in _PARTS:
        m = labels.label_re(part).search(text)
        if m is None:
            return None
        matches.append(m)
    if not matches[0].start() < matches[1].start() < matches[2].start():
        return None
    bounds = [m.end() for m in matches]
    ends = [matches[1].start(), matches[2].start(), len(text)]
    parts = [text[b:e].strip() for b, e in zip(bounds, ends)]
    if not all(parts):
        return None
    return Syllogism(*parts)


def extract_judgment(text: str, syllogism: Syllogism | None = None) -> str:
    """The judgment paragraph: the syllogism's conclusion if given, else the last paragraph."""
    if not text.strip():
        raise EmptyOutput("model output is empty")
    if syllogism is not None:
        return syllogism.conclusion
    block: list[str] = []
    current: list[str] = []
    for line in text.splitlines():
        if line.strip():
            current.append(line)
        elif current:
            block, current = current, []
    if current:
        block = current
    return "\n".join(block).strip()


def extract_charges(judgment_text: str, lexicon: ChargeLexicon) -> tuple[str, ...]:
    """Canonical charge ids mentioned in the text, first-occurrence order.

    Scans left to right; at each position the longest alias wins and matches
    never overlap, so "intentional destruction of property" is not also
    counted as "destruction of property".
    """
    seen: dict[str, None] = {}
    for m in lexicon.scanner.finditer(judgment_text.casefold()):
        cid = lexicon.lookup(m.group(0))
        if cid is not None:
            seen.setdefault(cid, None)
    return tuple(seen)


def _cn_to_int(s: str) -> int:
    total, current = 0, 0
    for ch in s:
        if ch in _CN_DIGITS:
            current = _CN_DIGITS[ch]
        else:
            total += (current or 1) * _CN_UNITS[ch]
            current = 0
    return total + current


def _to_int(s: str) -> int:
    if s.isascii():
        return int(s)
    return _cn_to_int(s)


def extract_articles(text: str, labels: LabelTable | None = None) -> tuple[int, ...]:
    """Article numbers cited in the text ("Article 266", "第263条", "第二百六十三条")."""
    labels = labels or default_labels()
    hits: list[tuple[int, int]] = []
    for pattern in labels.article_patterns:
        for m in pattern.finditer(text):
            try:
                n = _to_int(m.group(1))
            except (KeyError, ValueError):
                continue
            if n > 0:
                hits.append((m.start(), n))
    hits.sort()
    return tuple(dict.fromkeys(n for _, n in hits))


def verify_articles(prediction: Prediction, statute: Mapping[str, int]) -> frozenset[str]:
    """Flags with ``article_mismatch`` added when a cited number contradicts the statute table."""
    flags = set(prediction.flags)
    if prediction.articles:
        for cid in prediction.charges:
            expected = statute.get(cid)
            if expected is not None and expected not in prediction.articles:
                flags.add(ARTICLE_MISMATCH)
                break
    return frozenset(flags)


def build_prediction(
    case_id: str,
    strategy: Strategy,
    raw: str,
    lexicon: ChargeLexicon,
    labels: LabelTable | None = None,
    *,
    truncated: bool = False,
    model: str = "",
    prompt_tokens: int = 0,
    completion_tokens: int = 0,
) -> Prediction:
    """Run the whole parse chain over one model output."""
    labels = labels or default_labels()
    syllogism = parse_syllogism(raw, labels)
    judgment = extract_judgment(raw, syllogism) if raw.strip() else ""
    charges = extract_charges(judgment, lexicon)
    articles = extract_articles(raw, labels)
    flags = set()
    if syllogism is None:
        flags.add(UNSTRUCTURED)
    if truncated:
        flags.add(TRUNCATED)
    if not charges:
        flags.add(NO_CHARGE_FOUND)
    pred = Prediction(
        case_id=case_id,
        strategy=Strategy(strategy),
        raw=raw,
        syllogism=syllogism,
        judgment_text=judgment,
        charges=charges,
        articles=articles,
        flags=frozenset(flags),
        model=model,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )
    return replace(pred, flags=verify_articles(pred, lexicon.statute))


def prediction_to_obj(pred: Prediction) -> dict:
    return {
        "case_id": pred.case_id,
        "strategy": pred.strategy.value,
        "model": pred.model,
        "raw": pred.raw,
        "syllogism": None
        if pred.syllogism is None
        else {"major": pred.syllogism.major, "minor": pred.syllogism.minor, "conclusion": pred.syllogism.conclusion},
        "judgment_text": pred.judgment_text,
        "charges": list(pred.charges),
        "articles": list(pred.articles),
        "flags": sorted(pred.flags),
        "prompt_tokens": pred.prompt_tokens,
        "completion_tokens": pred.completion_tokens,
    }


def prediction_from_obj(obj: Mapping) -> Prediction:
    syl = obj.get("syllogism")
    return Prediction(
        case_id=str(obj["case_id"]),
        strategy=Strategy.parse(obj["strategy"]),
        raw=obj["raw"],
        syllogism=None if syl is None else Syllogism(syl["major"], syl["minor"], syl["conclusion"]),
        judgment_text=obj["judgment_text"],
        charges=tuple(obj["charges"]),
        articles=tuple(int(a) for a in obj["articles"]),
        flags=frozenset(obj["flags"]),
        model=obj.get("model", ""),
        prompt_tokens=int(obj.get("prompt_tokens", 0)),
        completion_tokens=int(obj.get("completion_tokens", 0)),
    )
