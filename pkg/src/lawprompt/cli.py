"""Command-line entry point: ``lawprompt sample | run | score | report``.

Exit codes: 0 ok, 2 configuration, 3 data, 4 backend, 5 alignment.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .backend import (
    DEFAULT_API_KEY_ENV,
    DEFAULT_MAX_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT,
    CachedBackend,
    HTTPCompletionBackend,
    ReplayBackend,
    UsageLedger,
)
from .corpus import (
    DEFAULT_SEED,
    filter_single_charge,
    load_corpus,
    load_lexicon,
    serialize_corpus,
    stratified_sample,
)
from .errors import (
    AlignmentError,
    BackendError,
    InsufficientStratum,
    LawPromptError,
    LexiconError,
    MalformedLine,
    ReportSchemaError,
    TemplateError,
)
from .parse import prediction_from_obj, prediction_to_obj
from .prompts import Strategy, load_templates
from .runner import Checkpoint, Decoding, run_cases
from .score import EvalReport, build_report, emit_comparison, emit_report

logger = logging.getLogger("lawprompt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND, EXIT_ALIGN = 0, 2, 3, 4, 5

SAMPLE_FILE = "sample.jsonl"
SAMPLE_MANIFEST = "sample_manifest.json"
PREDICTIONS_FILE = "predictions.jsonl"
CHECKPOINT_FILE = "predictions.checkpoint.jsonl"
RUN_MANIFEST = "run_manifest.json"


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


@dataclass
class RunConfig:
    corpus: str | None = None
    lexicon: str | None = None
    templates: str | None = None
    strategies: list[str] = field(default_factory=lambda: [s.value for s in Strategy])
    seed: int = DEFAULT_SEED
    per_charge: int = 100
    lenient: bool = False
    backend: str = "live"
    model: str = DEFAULT_MODEL
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop: list[str] | None = None
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = 5
    fixtures: str | None = None
    cache_dir: str | None = None
    parallelism: int = 4
    output_dir: str = "out"
    contains_gold: bool = False

    def validate(self) -> None:
        if not self.strategies:
            raise CLIError(EXIT_CONFIG, "at least one strategy is required")
        for s in self.strategies:
            try:
                Strategy(s)
            except ValueError:
                raise CLIError(EXIT_CONFIG, f"unknown strategy {s!r}") from None
        if self.per_charge < 1:
            raise CLIError(EXIT_CONFIG, "per_charge must be >= 1")
        if self.parallelism < 1:
            raise CLIError(EXIT_CONFIG, "parallelism must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise CLIError(EXIT_CONFIG, "seed must be an unsigned 64-bit integer")
        if self.backend not in ("live", "replay"):
            raise CLIError(EXIT_CONFIG, f"backend must be 'live' or 'replay', not {self.backend!r}")
        if self.backend == "replay" and not self.fixtures:
            raise CLIError(EXIT_CONFIG, "replay backend needs a fixtures directory")
        if not 0 <= self.temperature <= 2 or self.max_tokens < 1:
            raise CLIError(EXIT_CONFIG, "temperature must be in [0, 2] and max_tokens >= 1")

    def snapshot(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _load_config(path: str | None, overrides: dict[str, Any]) -> RunConfig:
    values: dict[str, Any] = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
            data = yaml.safe_load(text) if p.suffix.lower() in (".yaml", ".yml") else json.loads(text)
        except (OSError, ValueError, yaml.YAMLError) as exc:
            raise CLIError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise CLIError(EXIT_CONFIG, "config file must hold a map")
        values.update({k.replace("-", "_"): v for k, v in data.items()})
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CLIError(EXIT_CONFIG, f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    cfg.validate()
    return cfg


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _lexicon(cfg: RunConfig):
    try:
        return load_lexicon(cfg.lexicon)
    except (OSError, ValueError, LexiconError) as exc:
        raise CLIError(EXIT_CONFIG, f"cannot load lexicon: {exc}") from None


def cmd_sample(cfg: RunConfig) -> Path:
    """Sample ``per_charge`` single-charge cases per target charge into the output dir."""
    if not cfg.corpus:
        raise CLIError(EXIT_CONFIG, "no corpus given")
    corpus = Path(cfg.corpus)
    if not corpus.is_file():
        raise CLIError(EXIT_CONFIG, f"corpus not found: {corpus}")
    lexicon = _lexicon(cfg)
    started = _now()
    try:
        records = load_corpus(corpus, lexicon, lenient=cfg.lenient)
        eligible = filter_single_charge(records, lexicon.targets)
        sample = stratified_sample(eligible, cfg.per_charge, cfg.seed, charges=lexicon.targets)
    except InsufficientStratum as exc:
        raise CLIError(EXIT_DATA, f"insufficient stratum {exc.charge!r}: have {exc.have}, need {exc.need}") from None
    except MalformedLine as exc:
        raise CLIError(EXIT_DATA, f"malformed corpus: {exc}") from None

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sample_path = out / SAMPLE_FILE
    sample_path.write_text(serialize_corpus(sample), encoding="utf-8")
    _write_json(
        out / SAMPLE_MANIFEST,
        {
            "kind": "sample",
            "lawprompt_version": __version__,
            "config": cfg.snapshot(),
            "corpus_digest": _digest_file(corpus),
            "sample_digest": _digest_file(sample_path),
            "lexicon_version": lexicon.version,
            "charges": list(lexicon.targets),
            "sampled_ids": [r.id for r in sample],
            "started_at": started,
            "finished_at": _now(),
        },
    )
    logger.info("wrote %d records to %s", len(sample), sample_path)
    return sample_path


def _backend(cfg: RunConfig, out: Path):
    if cfg.backend == "replay":
        inner = ReplayBackend(cfg.fixtures)
    else:
        inner = HTTPCompletionBackend(
            cfg.base_url, api_key_env=cfg.api_key_env, timeout=cfg.timeout, max_retries=cfg.max_retries
        )
    cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else out / "cache"
    return CachedBackend(inner, cache_dir)


def cmd_run(cfg: RunConfig, sample_file: str | Path) -> Path:
    """Run every configured strategy over the sampled cases and write predictions."""
    sample_path = Path(sample_file)
    if not sample_path.is_file():
        raise CLIError(EXIT_CONFIG, f"sample file not found: {sample_path}")
    lexicon = _lexicon(cfg)
    try:
        templates = load_templates(cfg.templates)
    except (OSError, ValueError, TemplateError) as exc:
        raise CLIError(EXIT_CONFIG, f"bad template file: {exc}") from None
    try:
        cases = load_corpus(sample_path, lexicon)
    except MalformedLine as exc:
        raise CLIError(EXIT_DATA, f"malformed sample: {exc}") from None

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    strategies = [Strategy(s) for s in cfg.strategies]
    decoding = Decoding(
        model=cfg.model,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        stop=tuple(cfg.stop) if cfg.stop else None,
    )
    ledger = UsageLedger()
    checkpoint = Checkpoint(out / CHECKPOINT_FILE, templates.version)
    started = _now()
    try:
        predictions = run_cases(
            cases,
            strategies,
            _backend(cfg, out),
            lexicon,
            templates=templates,
            decoding=decoding,
            parallelism=cfg.parallelism,
            ledger=ledger,
            checkpoint=checkpoint,
        )
    except BackendError as exc:
        raise CLIError(EXIT_BACKEND, f"backend failure: {exc}; partial results kept in {checkpoint.path}") from None

    pred_path = out / PREDICTIONS_FILE
    pred_path.write_text(
        "".join(json.dumps(prediction_to_obj(p), ensure_ascii=False, sort_keys=True) + "\n" for p in predictions),
        encoding="utf-8",
    )
    checkpoint.path.unlink(missing_ok=True)
    _write_json(
        out / RUN_MANIFEST,
        {
            "kind": "run",
            "lawprompt_version": __version__,
            "config": cfg.snapshot(),
            "template_version": templates.version,
            "sample_digest": _digest_file(sample_path),
            "sampled_ids": sorted(c.id for c in cases),
            "strategies": [s.value for s in strategies],
            "started_at": started,
            "finished_at": _now(),
            "ledger": ledger.snapshot(),
        },
    )
    logger.info("wrote %d predictions to %s", len(predictions), pred_path)
    return pred_path


def _read_predictions(path: Path):
    preds = []
    with path.open("r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                preds.append(prediction_from_obj(json.loads(line)))
            except (ValueError, KeyError, TypeError, LawPromptError) as exc:
                raise CLIError(EXIT_DATA, f"{path}:{n}: bad prediction record ({exc})") from None
    return preds


def cmd_score(cfg: RunConfig, predictions_file: str | Path, sample_file: str | Path) -> Path:
    """Score predictions against the sample and write report.{txt,csv,json}."""
    pred_path, sample_path = Path(predictions_file), Path(sample_file)
    for p in (pred_path, sample_path):
        if not p.is_file():
            raise CLIError(EXIT_CONFIG, f"file not found: {p}")
    lexicon = _lexicon(cfg)
    try:
        cases = load_corpus(sample_path, lexicon)
    except MalformedLine as exc:
        raise CLIError(EXIT_DATA, f"malformed sample: {exc}") from None
    gold = {}
    for c in cases:
        if len(c.gold_charges) != 1:
            raise CLIError(EXIT_DATA, f"sample case {c.id} does not have exactly one gold charge")
        gold[c.id] = c.charge
    preds = _read_predictions(pred_path)
    if not preds:
        raise CLIError(EXIT_ALIGN, "no predictions to score")

    order: list[str] = []
    seen: dict[str, set[str]] = {}
    for p in preds:
        s = p.strategy.value
        if s not in seen:
            order.append(s)
            seen[s] = set()
        if p.case_id in seen[s]:
            raise CLIError(EXIT_ALIGN, f"duplicate prediction for ({s}, {p.case_id})")
        seen[s].add(p.case_id)
    for s, ids in seen.items():
        if ids != set(gold):
            missing = sorted(set(gold) - ids)[:5]
            extra = sorted(ids - set(gold))[:5]
            raise CLIError(EXIT_ALIGN, f"{s}: predictions do not match sample (missing {missing}, unknown {extra})")

    manifest_path = pred_path.parent / RUN_MANIFEST
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.is_file() else {}
    if manifest.get("strategies"):
        order = [s for s in manifest["strategies"] if s in seen] + [s for s in order if s not in manifest["strategies"]]
    model = manifest.get("config", {}).get("model") or preds[0].model
    _check_ledger(manifest, preds)

    charges = [c for c in lexicon.targets if c in set(gold.values())]
    charges += sorted(set(gold.values()) - set(charges))
    try:
        report = build_report(
            preds,
            gold,
            charges=charges,
            labels=lexicon.labels,
            strategies=order,
            model=model,
            template_version=manifest.get("template_version", ""),
            contains_gold=cfg.contains_gold,
        )
    except AlignmentError as exc:
        raise CLIError(EXIT_ALIGN, str(exc)) from None

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fmt, name in (("table", "report.txt"), ("csv", "report.csv"), ("json", "report.json")):
        (out / name).write_bytes(emit_report(report, fmt))
    sys.stdout.write(emit_report(report, "table").decode("utf-8"))
    return out / "report.json"


def _check_ledger(manifest: dict, preds) -> None:
    tokens = manifest.get("ledger", {}).get("tokens")
    if not tokens:
        return
    prompt = sum(t["prompt"] for t in tokens.values())
    completion = sum(t["completion"] for t in tokens.values())
    if (prompt, completion) != (sum(p.prompt_tokens for p in preds), sum(p.completion_tokens for p in preds)):
        logger.warning("run manifest token totals disagree with the predictions file")


def cmd_report(report_files: Sequence[str | Path]) -> bytes:
    """Merge report.json files from several runs into one comparison table."""
    if not report_files:
        raise CLIError(EXIT_CONFIG, "no report files given")
    reports = []
    for path in report_files:
        try:
            reports.append(EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))))
        except (OSError, ValueError) as exc:
            raise CLIError(EXIT_CONFIG, f"cannot read {path}: {exc}") from None
        except ReportSchemaError as exc:
            raise CLIError(EXIT_CONFIG, f"{path}: {exc}") from None
    try:
        return emit_comparison(reports)
    except ReportSchemaError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file; flags override it")
    p.add_argument("--lexicon", help="charge lexicon data file (default: bundled eight charges)")
    p.add_argument("--out-dir", dest="output_dir")


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategies", nargs="+", choices=[s.value for s in Strategy])
    p.add_argument("--templates", help="template override file")
    p.add_argument("--backend", choices=["live", "replay"])
    p.add_argument("--fixtures", help="fixture store directory for the replay backend")
    p.add_argument("--model")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--api-key-env", dest="api_key_env")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--stop", nargs="*")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--parallelism", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lawprompt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a stratified sample from a CAIL2018-format corpus")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-charge", dest="per_charge", type=int)
    p.add_argument("--lenient", action="store_true", default=None, help="skip malformed lines")

    p = sub.add_parser("run", help="prompt the model for every sampled case and strategy")
    _add_common(p)
    _add_backend(p)
    p.add_argument("--sample", required=True, help="sample.jsonl written by 'sample'")

    p = sub.add_parser("score", help="score predictions and write report files")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument(
        "--contains-gold", dest="contains_gold", action="store_true", default=None,
        help="non-default: count a prediction correct if it includes the gold charge",
    )

    p = sub.add_parser("report", help="merge report.json files into one comparison table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="write the table here instead of stdout")
    return parser


_NON_CONFIG = {"command", "verbose", "config", "sample", "predictions", "reports", "out"}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            table = cmd_report(args.reports)
            if args.out:
                Path(args.out).write_bytes(table)
            else:
                sys.stdout.write(table.decode("utf-8"))
            return EXIT_OK
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        cfg = _load_config(args.config, overrides)
        if args.command == "sample":
            cmd_sample(cfg)
        elif args.command == "run":
            cmd_run(cfg, args.sample)
        elif args.command == "score":
            cmd_score(cfg, args.predictions, args.sample)
    except CLIError as exc:
        print(f"lawprompt: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
