"""CAIL2018-format corpus loading, charge normalization and stratified sampling."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import InsufficientStratum, LexiconError, MalformedLine

logger = logging.getLogger(__name__)

DEFAULT_SEED = 2018
ID_WIDTH = 8

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CaseRecord:
    id: str
    fact: str
    gold_charges: frozenset[str]
    gold_articles: tuple[int, ...]
    raw_meta: Mapping[str, Any] = field(default_factory=dict, compare=False)
    # accusation strings the lexicon could not map; such cases never enter a sample
    unknown_charges: tuple[str, ...] = ()

    @property
    def charge(self) -> str:
        """The sole gold charge. Only valid for single-charge records."""
        if len(self.gold_charges) != 1:
            raise ValueError(f"record {self.id} has {len(self.gold_charges)} gold charges")
        return next(iter(self.gold_charges))


class ChargeLexicon:
    """Canonical charge ids, their surface aliases and statute article numbers.

    Aliases are stored case-folded. The canonical id is always one of its own
    aliases, and alias sets never overlap across ids.
    """

    def __init__(
        self,
        entries: Mapping[str, Iterable[str]],
        statute: Mapping[str, int] | None = None,
        *,
        targets: Iterable[str] | None = None,
        labels: Mapping[str, str] | None = None,
        version: str = "",
    ):
        self.entries: dict[str, frozenset[str]] = {}
        self._alias_to_id: dict[str, str] = {}
        for cid, aliases in entries.items():
            if not cid or cid != cid.strip():
                raise LexiconError(f"bad canonical id {cid!r}")
            folded = {_fold(a) for a in aliases if _fold(a)}
            folded.add(_fold(cid))
            for alias in folded:
                owner = self._alias_to_id.setdefault(alias, cid)
                if owner != cid:
                    raise LexiconError(f"alias {alias!r} claimed by both {owner!r} and {cid!r}")
            self.entries[cid] = frozenset(folded)

        self.statute: dict[str, int] = {}
        for cid, article in (statute or {}).items():
            if cid not in self.entries:
                raise LexiconError(f"statute entry for unknown charge {cid!r}")
            if not isinstance(article, int) or isinstance(article, bool) or article <= 0:
                raise LexiconError(f"statute article for {cid!r} must be a positive int")
            self.statute[cid] = article

        self.targets: tuple[str, ...] = tuple(targets) if targets is not None else tuple(self.entries)
        for cid in self.targets:
            if cid not in self.entries:
                raise LexiconError(f"target charge {cid!r} not in lexicon")
        self.labels = {cid: (labels or {}).get(cid, cid) for cid in self.entries}
        self.version = version
        self._scanner: re.Pattern[str] | None = None

    def __contains__(self, cid: object) -> bool:
        return cid in self.entries

    def lookup(self, alias: str) -> str | None:
        return self._alias_to_id.get(alias)

    @property
    def scanner(self) -> re.Pattern[str]:
        """Alternation of every alias, longest first, for left-to-right scanning."""
        if self._scanner is None:
            aliases = sorted(self._alias_to_id, key=lambda a: (-len(a), a))
            self._scanner = re.compile("|".join(_alias_pattern(a) for a in aliases))
        return self._scanner


def _fold(s: str) -> str:
    return s.strip().casefold()


def _alias_pattern(alias: str) -> str:
    # Latin-script aliases only match on word boundaries so "rape" does not fire inside "grape".
    pat = re.escape(alias)
    if alias[0].isascii() and alias[0].isalnum():
        pat = r"(?<![a-z0-9])" + pat
    if alias[-1].isascii() and alias[-1].isalnum():
        pat = pat + r"(?![a-z0-9])"
    return pat


def load_lexicon(path: str | Path | None = None) -> ChargeLexicon:
    """Read a lexicon data file; the bundled eight-charge lexicon when *path* is None."""
    if path is None:
        raw = json.loads(resources.files("lawprompt").joinpath("data/lexicon.json").read_text("utf-8"))
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        charges = raw["charges"]
        entries = {c["id"]: c.get("aliases", []) for c in charges}
        statute = {c["id"]: c["article"] for c in charges if c.get("article") is not None}
        labels = {c["id"]: c["label"] for c in charges if c.get("label")}
    except (KeyError, TypeError) as exc:
        raise LexiconError(f"malformed lexicon file: {exc}") from exc
    return ChargeLexicon(
        entries,
        statute,
        targets=raw.get("targets"),
        labels=labels,
        version=str(raw.get("version", "")),
    )


def normalize_charge(surface: str, lexicon: ChargeLexicon) -> str | None:
    """Map a surface charge string to its canonical id, or None if no alias matches."""
    return lexicon.lookup(_fold(surface))


def _record_from_obj(obj: Any, line_number: int, lexicon: ChargeLexicon) -> CaseRecord:
    if not isinstance(obj, dict):
        raise MalformedLine(line_number, "not an object")
    fact = obj.get("fact")
    if not isinstance(fact, str) or not fact.strip():
        raise MalformedLine(line_number, "missing or empty 'fact'")
    meta = obj.get("meta")
    if not isinstance(meta, dict):
        raise MalformedLine(line_number, "missing 'meta'")
    accusations = meta.get("accusation")
    articles = meta.get("relevant_articles")
    if not isinstance(accusations, list) or not all(isinstance(a, str) for a in accusations):
        raise MalformedLine(line_number, "'meta.accusation' must be a list of strings")
    if not isinstance(articles, list):
        raise MalformedLine(line_number, "'meta.relevant_articles' must be a list")
    gold_articles = []
    for a in articles:
        try:
            n = int(a)
        except (TypeError, ValueError):
            raise MalformedLine(line_number, f"bad article number {a!r}") from None
        if isinstance(a, bool) or n <= 0:
            raise MalformedLine(line_number, f"bad article number {a!r}")
        gold_articles.append(n)

    charges, unknown = set(), []
    for surface in accusations:
        cid = normalize_charge(surface, lexicon)
        if cid is None:
            unknown.append(surface)
        else:
            charges.add(cid)

    rid = obj.get("id")
    rid = str(rid) if rid is not None else str(line_number).zfill(ID_WIDTH)
    raw_meta = {k: v for k, v in meta.items() if k not in ("accusation", "relevant_articles")}
    return CaseRecord(
        id=rid,
        fact=fact,
        gold_charges=frozenset(charges),
        gold_articles=tuple(gold_articles),
        raw_meta=raw_meta,
        unknown_charges=tuple(unknown),
    )


def load_corpus(path: str | Path, lexicon: ChargeLexicon, *, lenient: bool = False) -> list[CaseRecord]:
    """Load one CaseRecord per non-blank line of a CAIL2018-format file.

    Line numbers are 1-based and double as record ids when a line carries no
    ``id`` field. With ``lenient=True`` malformed lines are skipped and counted
    instead of aborting the load.
    """
    path = Path(path)
    records: list[CaseRecord] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedLine(line_number, f"invalid JSON: {exc.msg}") from None
                records.append(_record_from_obj(obj, line_number, lexicon))
            except MalformedLine as exc:
                if not lenient:
                    raise
                skipped += 1
                logger.warning("skipping %s", exc)
    if skipped:
        logger.warning("%s: skipped %d malformed line(s)", path, skipped)
    return records


def record_to_obj(record: CaseRecord) -> dict[str, Any]:
    meta = dict(record.raw_meta)
    meta["accusation"] = sorted(record.gold_charges) + list(record.unknown_charges)
    meta["relevant_articles"] = list(record.gold_articles)
    return {"id": record.id, "fact": record.fact, "meta": meta}


def serialize_corpus(records: Iterable[CaseRecord]) -> str:
    """Render records back to CAIL2018 line format (canonical ids as accusations)."""
    return "".join(
        json.dumps(record_to_obj(r), ensure_ascii=False, sort_keys=True) + "\n" for r in records
    )


def filter_single_charge(records: Iterable[CaseRecord], target: Iterable[str]) -> list[CaseRecord]:
    target = set(target)
    if not target:
        raise ValueError("target charge set is empty")
    return [
        r
        for r in records
        if len(r.gold_charges) == 1 and not r.unknown_charges and next(iter(r.gold_charges)) in target
    ]


class SplitMix64:
    """SplitMix64 generator; identical streams on every platform for a given seed."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection, no modulo bias."""
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def charge_hash(charge: str) -> int:
    """First eight bytes of SHA-256 over the UTF-8 charge id, big-endian."""
    return int.from_bytes(hashlib.sha256(charge.encode("utf-8")).digest()[:8], "big")


def stratified_sample(
    records: Iterable[CaseRecord],
    per_charge: int,
    seed: int = DEFAULT_SEED,
    charges: Iterable[str] | None = None,
) -> list[CaseRecord]:
    """Draw ``per_charge`` records from every charge stratum.

    Each stratum is ordered by record id, shuffled with Fisher-Yates driven by
    ``SplitMix64(seed ^ charge_hash(charge))``, and truncated. The result is
    sorted by (charge id, record id). Records must already be single-charge.
    """
    if per_charge < 1:
        raise ValueError("per_charge must be positive")
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    strata: dict[str, list[CaseRecord]] = defaultdict(list)
    for r in records:
        strata[r.charge].append(r)
    wanted = sorted(set(charges) if charges is not None else strata)

    out: list[CaseRecord] = []
    for charge in wanted:
        pool = sorted(strata.get(charge, []), key=lambda r: r.id)
        if len(pool) < per_charge:
            raise InsufficientStratum(charge, len(pool), per_charge)
        rng = SplitMix64(seed ^ charge_hash(charge))
        for i in range(len(pool) - 1, 0, -1):
            j = rng.below(i + 1)
            pool[i], pool[j] = pool[j], pool[i]
        out.extend(sorted(pool[:per_charge], key=lambda r: r.id))
    return out
