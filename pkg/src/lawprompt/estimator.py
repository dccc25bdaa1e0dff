"""scikit-learn compatible wrapper around one prompting strategy.

The model is zero-shot, so ``fit`` only validates configuration; ``predict``
sends every fact through the backend and returns one label per case.
"""

from __future__ import annotations

from typing import Any, Iterable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .backend import DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE, UsageLedger
from .corpus import CaseRecord, load_lexicon
from .errors import UnknownStrategyKey
from .parse import Prediction, default_labels
from .prompts import Strategy, default_templates
from .runner import Decoding, run_cases

LABEL_SEP = "+"


def check_facts(X: Any) -> list[str]:
    """Coerce X to a list of non-empty fact strings.

    Accepts any 1-D sequence of strings (list, tuple, numpy array, pandas
    Series) or of CaseRecord objects.
    """
    if isinstance(X, str):
        raise ValueError("expected a sequence of facts, got a single string")
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D sequence of facts, got shape {arr.shape}")
    facts = []
    for i, item in enumerate(arr):
        fact = item.fact if isinstance(item, CaseRecord) else item
        if not isinstance(fact, str) or not fact.strip():
            raise ValueError(f"fact at position {i} is empty or not a string")
        facts.append(fact)
    return facts


def join_label(charges: Iterable[str]) -> str:
    return LABEL_SEP.join(charges)


class SyllogismChargeClassifier(ClassifierMixin, BaseEstimator):
    """Zero-shot charge prediction through a completion backend.

    Parameters
    ----------
    backend : object with ``complete(CompletionRequest)``
        Live, replay or cached backend.
    strategy : {"Baseline", "ZeroShotCoT", "LegalSyllogism"}
    lexicon : ChargeLexicon, optional
        Defaults to the bundled eight-charge lexicon.
    templates : TemplateSet, optional
    labels : LabelTable, optional
    model, temperature, max_tokens : decoding parameters
    parallelism : int
        Maximum in-flight completions.
    contains_gold : bool
        Lenient scoring in ``score``; off by default.

    Predicted labels are the canonical charge ids joined with ``+`` in order
    of mention, or ``""`` when no charge was found.
    """

    def __init__(
        self,
        backend=None,
        strategy: str = Strategy.LEGAL_SYLLOGISM.value,
        lexicon=None,
        templates=None,
        labels=None,
        model: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        parallelism: int = 4,
        contains_gold: bool = False,
    ):
        self.backend = backend
        self.strategy = strategy
        self.lexicon = lexicon
        self.templates = templates
        self.labels = labels
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.parallelism = parallelism
        self.contains_gold = contains_gold

    def fit(self, X, y=None):
        if self.backend is None or not hasattr(self.backend, "complete"):
            raise ValueError("backend must provide a complete(request) method")
        check_facts(X)
        try:
            self.strategy_ = Strategy.parse(getattr(self.strategy, "value", self.strategy))
        except UnknownStrategyKey as exc:
            raise ValueError(str(exc)) from exc
        self.lexicon_ = self.lexicon if self.lexicon is not None else load_lexicon()
        self.templates_ = self.templates if self.templates is not None else default_templates()
        self.labels_ = self.labels if self.labels is not None else default_labels()
        self.decoding_ = Decoding(self.model, self.temperature, self.max_tokens)
        if y is not None:
            y = np.asarray(y, dtype=object)
            unknown = sorted({c for c in y if c not in self.lexicon_})
            if unknown:
                raise ValueError(f"labels not in lexicon: {unknown}")
            self.classes_ = np.array(sorted(set(y)), dtype=object)
        else:
            self.classes_ = np.array(list(self.lexicon_.targets), dtype=object)
        self.ledger_ = UsageLedger()
        return self

    def predict_detailed(self, X) -> list[Prediction]:
        """Full parsed predictions (syllogism, articles, flags), in input order."""
        check_is_fitted(self, "classes_")
        facts = check_facts(X)
        width = max(len(str(len(facts))), 1)
        cases = [
            CaseRecord(id=str(i).zfill(width), fact=f, gold_charges=frozenset(), gold_articles=())
            for i, f in enumerate(facts)
        ]
        return run_cases(
            cases,
            [self.strategy_],
            self.backend,
            self.lexicon_,
            templates=self.templates_,
            labels=self.labels_,
            decoding=self.decoding_,
            parallelism=self.parallelism,
            ledger=self.ledger_,
        )

    def predict(self, X) -> np.ndarray:
        return np.array([join_label(p.charges) for p in self.predict_detailed(X)], dtype=object)

    def score(self, X, y, sample_weight=None) -> float:
        """Micro accuracy by exact match of the predicted charge set with the gold label."""
        y = np.asarray(y, dtype=object)
        preds = self.predict_detailed(X)
        if len(preds) != len(y):
            raise ValueError("X and y have different lengths")
        hits = []
        for p, gold in zip(preds, y):
            predicted = set(p.charges)
            hits.append(predicted == {gold} or (self.contains_gold and gold in predicted))
        return float(np.average(hits, weights=sample_weight))
