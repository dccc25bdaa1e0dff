"""Render -> complete -> parse over (strategy, case) pairs with bounded parallelism."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .backend import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    CompletionBackend,
    CompletionRequest,
    UsageLedger,
)
from .corpus import CaseRecord, ChargeLexicon
from .parse import LabelTable, Prediction, build_prediction, prediction_from_obj, prediction_to_obj
from .prompts import Strategy, TemplateSet, default_templates, render

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Decoding:
    model: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop: tuple[str, ...] | None = None


class Checkpoint:
    """Append-only JSONL of finished predictions, one atomic line each."""

    def __init__(self, path: str | Path, template_version: str):
        self.path = Path(path)
        self.template_version = template_version
        self._lock = threading.Lock()

    def load(self, model: str) -> dict[tuple[str, str], Prediction]:
        done: dict[tuple[str, str], Prediction] = {}
        if not self.path.is_file():
            return done
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                try:
                    obj = json.loads(line)
                    pred = prediction_from_obj(obj["prediction"])
                except (ValueError, KeyError, TypeError):
                    # torn final line from an interrupted write
                    continue
                if obj.get("template_version") != self.template_version or pred.model != model:
                    continue
                done[(pred.strategy.value, pred.case_id)] = pred
        return done

    def append(self, pred: Prediction) -> None:
        line = json.dumps(
            {"template_version": self.template_version, "prediction": prediction_to_obj(pred)},
            ensure_ascii=False,
            sort_keys=True,
        )
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())


def predict_case(
    case_id: str,
    fact: str,
    strategy: Strategy,
    backend: CompletionBackend,
    lexicon: ChargeLexicon,
    *,
    templates: TemplateSet | None = None,
    labels: LabelTable | None = None,
    decoding: Decoding = Decoding(),
    ledger: UsageLedger | None = None,
) -> Prediction:
    templates = templates or default_templates()
    bundle = render(strategy, fact, templates, case_id=case_id)
    request = CompletionRequest(
        model=decoding.model,
        prompt=bundle.text,
        temperature=decoding.temperature,
        max_tokens=decoding.max_tokens,
        stop=decoding.stop,
        template_version=bundle.template_version,
    )
    try:
        response = backend.complete(request)
    except Exception as exc:
        if ledger is not None:
            ledger.record_error(type(exc).__name__)
        raise
    if ledger is not None:
        ledger.record(decoding.model, response)
    return build_prediction(
        case_id,
        strategy,
        response.text,
        lexicon,
        labels,
        truncated=response.truncated,
        model=decoding.model,
        prompt_tokens=response.prompt_tokens,
        completion_tokens=response.completion_tokens,
    )


def run_cases(
    cases: Iterable[CaseRecord],
    strategies: Sequence[Strategy],
    backend: CompletionBackend,
    lexicon: ChargeLexicon,
    *,
    templates: TemplateSet | None = None,
    labels: LabelTable | None = None,
    decoding: Decoding = Decoding(),
    parallelism: int = 4,
    ledger: UsageLedger | None = None,
    checkpoint: Checkpoint | None = None,
) -> list[Prediction]:
    """Predict every (strategy, case) pair.

    Results come back ordered by (position in ``strategies``, case id),
    independent of completion order. With a checkpoint, pairs already recorded
    there are reused rather than re-requested. On the first backend failure
    pending work is cancelled and the error re-raised; finished pairs remain
    in the checkpoint.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    strategies = [Strategy(s) for s in strategies]
    templates = templates or default_templates()
    ledger = ledger if ledger is not None else UsageLedger()
    cases = sorted(cases, key=lambda c: c.id)

    results: dict[tuple[str, str], Prediction] = {}
    if checkpoint is not None:
        wanted = {(s.value, c.id) for s in strategies for c in cases}
        for key, pred in checkpoint.load(decoding.model).items():
            if key in wanted:
                results[key] = pred
                ledger.restore(pred.model, pred.prompt_tokens, pred.completion_tokens)

    todo = [(s, c) for s in strategies for c in cases if (s.value, c.id) not in results]

    def task(strategy: Strategy, case: CaseRecord) -> Prediction:
        pred = predict_case(
            case.id,
            case.fact,
            strategy,
            backend,
            lexicon,
            templates=templates,
            labels=labels,
            decoding=decoding,
            ledger=ledger,
        )
        if checkpoint is not None:
            checkpoint.append(pred)
        return pred

    if todo:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(task, s, c): (s.value, c.id) for s, c in todo}
            done, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for fut in pending:
                fut.cancel()
            if pending:
                wait(pending)
            errors = [f.exception() for f in futures if f.done() and not f.cancelled() and f.exception()]
            if errors:
                raise errors[0]
            for fut, key in futures.items():
                results[key] = fut.result()

    rank = {s.value: i for i, s in enumerate(strategies)}
    return [results[k] for k in sorted(results, key=lambda k: (rank[k[0]], k[1]))]
