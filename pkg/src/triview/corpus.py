"""Evidence units, benchmark loading, and answer-text normalization.

An evidence unit is one benchmark passage (title + body). Units are the atomic
objects of retrieval ranking and generation context; they are never
sub-chunked. Dedup identity is the NFC-normalized (title, text) pair.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateIdError, EmptyTextError, ParseError, UnknownFormatError

_WS_RE = re.compile(r"\s+")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_whitespace(s: str) -> str:
    return _WS_RE.sub(" ", s).strip()


def nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def normalize_answer_text(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace.

    Idempotent: applying it twice gives the same string.
    """
    s = nfc(s).lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return normalize_whitespace(s)


@dataclass(frozen=True)
class EvidenceUnit:
    id: str
    title: str | None
    text: str

    def display_text(self) -> str:
        """Retrieval/context rendering: 'title. body' when a title exists."""
        if self.title:
            return f"{self.title}. {self.text}"
        return self.text


@dataclass(frozen=True)
class QARecord:
    question: str
    gold_answer: str
    question_type: str | None = None
    record_id: str | None = None


@dataclass
class Corpus:
    units: list[EvidenceUnit]
    source_name: str = ""
    _by_id: dict[str, EvidenceUnit] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_id: dict[str, EvidenceUnit] = {}
        for unit in self.units:
            if unit.id in by_id:
                raise DuplicateIdError(f"duplicate evidence unit id: {unit.id!r}")
            by_id[unit.id] = unit
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self.units)

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self._by_id

    def get(self, unit_id: str) -> EvidenceUnit:
        return self._by_id[unit_id]

    def ids(self) -> list[str]:
        return [u.id for u in self.units]


def unit_id_for(title: str | None, text: str) -> str:
    """Stable content-hash id, invariant to input ordering across rebuilds."""
    key = f"{nfc(title or '')}\x1f{nfc(text)}"
    return "u" + hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def _clean_unit(title: str | None, text: str) -> tuple[str | None, str]:
    clean_title = normalize_whitespace(nfc(title)) if title else None
    clean_text = normalize_whitespace(nfc(text))
    if not clean_text:
        raise EmptyTextError(f"evidence unit has empty text (title={title!r})")
    return clean_title or None, clean_text


def ingest_passages(records: list[tuple[str, str | None, str]], source_name: str = "") -> Corpus:
    """Build a Corpus from (id, title, text) records, preserving order."""
    units = []
    for unit_id, title, text in records:
        clean_title, clean_text = _clean_unit(title, text)
        units.append(EvidenceUnit(id=unit_id, title=clean_title, text=clean_text))
    return Corpus(units=units, source_name=source_name)


class _PassageCollector:
    """Accumulates passages across question records, deduplicating by content."""

    def __init__(self) -> None:
        self.units: list[EvidenceUnit] = []
        self._seen: set[tuple[str, str]] = set()

    def add(self, title: str | None, text: str) -> None:
        clean_title, clean_text = _clean_unit(title, text)
        key = (clean_title or "", clean_text)
        if key in self._seen:
            return
        self._seen.add(key)
        self.units.append(EvidenceUnit(id=unit_id_for(clean_title, clean_text), title=clean_title, text=clean_text))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParseError(message)


def _load_context_style(path: Path, source_name: str) -> tuple[Corpus, list[QARecord]]:
    """HotpotQA/2WikiMultiHopQA style: JSON array, passages under 'context'
    as [title, [sentence, ...]] pairs."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    _require(isinstance(data, list), f"{path}: expected a JSON array of question records")

    collector = _PassageCollector()
    records = []
    for i, row in enumerate(data):
        _require(isinstance(row, dict), f"{path}: record {i} is not an object")
        question = row.get("question")
        answer = row.get("answer")
        _require(isinstance(question, str) and question.strip() != "", f"{path}: record {i} missing question")
        _require(isinstance(answer, str) and answer.strip() != "", f"{path}: record {i} missing answer")
        context = row.get("context", [])
        _require(isinstance(context, list), f"{path}: record {i} context is not a list")
        for entry in context:
            _require(
                isinstance(entry, list) and len(entry) == 2 and isinstance(entry[0], str) and isinstance(entry[1], list),
                f"{path}: record {i} has a malformed context entry",
            )
            title, sentences = entry
            collector.add(title, " ".join(str(s) for s in sentences))
        records.append(
            QARecord(
                question=normalize_whitespace(nfc(question)),
                gold_answer=normalize_whitespace(nfc(answer)),
                question_type=row.get("type") if isinstance(row.get("type"), str) else None,
                record_id=str(row["_id"]) if "_id" in row else None,
            )
        )
    return Corpus(units=collector.units, source_name=source_name), records


def _load_paragraph_style(path: Path, source_name: str) -> tuple[Corpus, list[QARecord]]:
    """MuSiQue style: JSONL, one record per line, passages under 'paragraphs'
    as {title, paragraph_text} objects."""
    collector = _PassageCollector()
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            _require(isinstance(row, dict), f"{path}:{lineno}: record is not an object")
            question = row.get("question")
            answer = row.get("answer")
            _require(isinstance(question, str) and question.strip() != "", f"{path}:{lineno}: missing question")
            _require(isinstance(answer, str) and answer.strip() != "", f"{path}:{lineno}: missing answer")
            paragraphs = row.get("paragraphs", [])
            _require(isinstance(paragraphs, list), f"{path}:{lineno}: paragraphs is not a list")
            for para in paragraphs:
                _require(isinstance(para, dict), f"{path}:{lineno}: malformed paragraph entry")
                collector.add(para.get("title"), str(para.get("paragraph_text", "")))
            records.append(
                QARecord(
                    question=normalize_whitespace(nfc(question)),
                    gold_answer=normalize_whitespace(nfc(answer)),
                    question_type=None,
                    record_id=str(row["id"]) if "id" in row else None,
                )
            )
    return Corpus(units=collector.units, source_name=source_name), records


_FORMAT_LOADERS = {
    "hotpotqa": _load_context_style,
    "2wikimultihopqa": _load_context_style,
    "musique": _load_paragraph_style,
}


def load_benchmark(path: str | Path, format: str) -> tuple[Corpus, list[QARecord]]:
    """Load a benchmark file into (Corpus, QA records).

    Every supporting and distractor passage appears in the corpus exactly
    once; questions keep their original order. Records without an id get a
    positional one so traces have stable names.
    """
    tag = format.strip().lower()
    if tag not in _FORMAT_LOADERS:
        raise UnknownFormatError(f"unknown benchmark format: {format!r} (known: {sorted(_FORMAT_LOADERS)})")
    corpus, records = _FORMAT_LOADERS[tag](Path(path), source_name=tag)
    records = [
        rec if rec.record_id else QARecord(rec.question, rec.gold_answer, rec.question_type, f"q{i:04d}")
        for i, rec in enumerate(records)
    ]
    return corpus, records


def persist_corpus(corpus: Corpus, path: str | Path) -> None:
    payload = [{"id": u.id, "title": u.title, "text": u.text} for u in corpus.units]
    doc = {"source_name": corpus.source_name, "units": payload}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> Corpus:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not a corpus file: {exc}") from exc
    _require(isinstance(doc, dict) and isinstance(doc.get("units"), list), f"{path}: not a corpus file")
    units = [EvidenceUnit(id=row["id"], title=row.get("title"), text=row["text"]) for row in doc["units"]]
    return Corpus(units=units, source_name=doc.get("source_name", ""))
