"""Prompt templates for the three zero-shot strategies."""

from __future__ import annotations

import enum
import functools
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import yaml

from .errors import EmptyFact, MissingPlaceholder, TemplateError, UnknownStrategyKey

PLACEHOLDER = "{fact}"


class Strategy(str, enum.Enum):
    BASELINE = "Baseline"
    ZERO_SHOT_COT = "ZeroShotCoT"
    LEGAL_SYLLOGISM = "LegalSyllogism"

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> Strategy:
        try:
            return cls(name)
        except ValueError:
            raise UnknownStrategyKey(name) from None


_DISPLAY = {
    Strategy.BASELINE: "Baseline",
    Strategy.ZERO_SHOT_COT: "Zero-shot CoT",
    Strategy.LEGAL_SYLLOGISM: "Legal syllogism",
}

DEFAULT_TEMPLATES: Mapping[Strategy, str] = MappingProxyType(
    {
        Strategy.BASELINE: "Case: {fact}\n\nOutput the judgment of this case:",
        Strategy.ZERO_SHOT_COT: "Case: {fact}\n\nLet us think step by step.",
        Strategy.LEGAL_SYLLOGISM: (
            "In the legal syllogism, the major premise is the law article, "
            "the minor premise is the facts of the case, "
            "and the conclusion is the judgment of case.\n"
            "\n"
            "Case: {fact}\n"
            "\n"
            "Let us use legal syllogism to think and output the judgment:"
        ),
    }
)


@dataclass(frozen=True)
class PromptBundle:
    case_id: str
    strategy: Strategy
    text: str
    template_version: str


class TemplateSet:
    """Immutable strategy -> template mapping with a content-derived version."""

    def __init__(self, templates: Mapping[Strategy, str]):
        parts: dict[Strategy, tuple[str, str]] = {}
        for strategy in Strategy:
            if strategy not in templates:
                raise TemplateError(f"no template for {strategy.value}")
            tpl = templates[strategy]
            n = tpl.count(PLACEHOLDER)
            if n == 0:
                raise MissingPlaceholder(strategy.value)
            if n > 1:
                raise TemplateError(f"template for {strategy.value} has {n} {PLACEHOLDER} placeholders")
            prefix, suffix = tpl.split(PLACEHOLDER)
            parts[strategy] = (prefix, suffix)
        self.templates = MappingProxyType({s: templates[s] for s in Strategy})
        self._parts = parts
        canonical = json.dumps(
            {s.value: self.templates[s] for s in Strategy}, ensure_ascii=False, sort_keys=True, separators=(",", ":")
        )
        self.version = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def parts(self, strategy: Strategy) -> tuple[str, str]:
        return self._parts[strategy]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TemplateSet) and dict(self.templates) == dict(other.templates)

    def __hash__(self) -> int:
        return hash(self.version)


def _read_structured(path: Path) -> object:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        return yaml.safe_load(text)
    return json.loads(text)


def load_templates(path: str | Path | None = None) -> TemplateSet:
    """Built-in templates, with per-strategy overrides from a JSON/YAML map if given."""
    templates = dict(DEFAULT_TEMPLATES)
    if path is not None:
        overrides = _read_structured(Path(path))
        if not isinstance(overrides, dict):
            raise TemplateError("template file must hold a map of strategy name to template")
        for key, tpl in overrides.items():
            strategy = Strategy.parse(str(key))
            if not isinstance(tpl, str):
                raise TemplateError(f"template for {key} must be a string")
            templates[strategy] = tpl
    return TemplateSet(templates)


@functools.lru_cache(maxsize=1)
def default_templates() -> TemplateSet:
    return TemplateSet(DEFAULT_TEMPLATES)


def render(strategy: Strategy, fact: str, templates: TemplateSet | None = None, case_id: str = "") -> PromptBundle:
    """Place ``fact`` in the strategy's template slot.

    Assembly is prefix + fact + suffix, so a fact that itself contains the
    placeholder text or template fragments is never re-substituted.
    """
    if not fact.strip():
        raise EmptyFact("fact is empty")
    templates = templates or default_templates()
    prefix, suffix = templates.parts(Strategy(strategy))
    return PromptBundle(
        case_id=case_id,
        strategy=Strategy(strategy),
        text=prefix + fact + suffix,
        template_version=templates.version,
    )
