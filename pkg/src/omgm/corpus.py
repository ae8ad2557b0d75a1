"""Knowledge-base loading, validation, segmentation and persistence.

The corpus is a JSONL file with one entity per line:

    {"entity_id": ..., "title": ..., "summary": ...|null,
     "sections": [{"index": ..., "heading": ..., "body": ...}, ...],
     "main_image": {...}|null, "aux_images": [{...}, ...]}

Image refs are ``{"ref_id": ..., "uri": ...}`` or
``{"ref_id": ..., "bytes_b64": ...}``. Query samples live in a separate
JSONL file (see :func:`load_queries`).

A loaded :class:`Corpus` is immutable; attaching summaries produces a new
logical revision, so concurrent readers always see a consistent snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from omgm import OmgmError


class CorpusError(OmgmError):
    """Malformed, inconsistent or missing corpus data."""


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image, either by URI or inline base64 payload."""

    ref_id: str
    uri: Optional[str] = None
    bytes_b64: Optional[str] = None

    @property
    def resolvable(self) -> bool:
        return self.uri is not None or self.bytes_b64 is not None

    def to_dict(self) -> dict:
        d: dict = {"ref_id": self.ref_id}
        if self.uri is not None:
            d["uri"] = self.uri
        if self.bytes_b64 is not None:
            d["bytes_b64"] = self.bytes_b64
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImageRef":
        if "ref_id" not in d:
            raise CorpusError("image ref missing 'ref_id'")
        return cls(ref_id=d["ref_id"], uri=d.get("uri"), bytes_b64=d.get("bytes_b64"))


@dataclass(frozen=True)
class SectionRecord:
    """One article section; ``heading`` may be empty, ``body`` may not."""

    index: int
    heading: str
    body: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise CorpusError(f"section index must be >= 0, got {self.index}")
        if not self.body:
            raise CorpusError(f"section {self.index} has an empty body")


@dataclass(frozen=True)
class EntityRecord:
    """One knowledge-base entity: title, summary, sections and images."""

    entity_id: str
    title: str
    sections: tuple[SectionRecord, ...]
    summary: Optional[str] = None
    main_image: Optional[ImageRef] = None
    aux_images: tuple[ImageRef, ...] = ()

    def __post_init__(self) -> None:
        indices = [s.index for s in self.sections]
        if indices != list(range(len(indices))):
            raise CorpusError(
                f"entity {self.entity_id!r}: section indices must be contiguous "
                f"0..{len(indices) - 1}, got {indices}"
            )

    def section(self, index: int) -> SectionRecord:
        try:
            return self.sections[index]
        except IndexError:
            raise CorpusError(
                f"entity {self.entity_id!r} has no section {index}"
            ) from None

    @property
    def images(self) -> tuple[ImageRef, ...]:
        """Main image first, then auxiliary images."""
        main = (self.main_image,) if self.main_image is not None else ()
        return main + self.aux_images


@dataclass(frozen=True)
class QuerySample:
    """One VQA query: image + question, plus gold labels for evaluation."""

    sample_id: str
    image: ImageRef
    question: str
    gold_entity_id: Optional[str] = None
    gold_section_index: Optional[int] = None
    valid_answers: tuple[str, ...] = ()
    answer_kind: str = "string"  # "string" | "numeric"


@dataclass
class CorpusManifest:
    """Counts and soft-constraint violations for a loaded corpus."""

    entity_count: int
    section_count: int
    image_count: int
    missing_main_image: list[str] = field(default_factory=list)
    missing_summary: list[str] = field(default_factory=list)
    segmentation_policy: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "counts": {
                "entities": self.entity_count,
                "sections": self.section_count,
                "images": self.image_count,
            },
            "missing_main_image": list(self.missing_main_image),
            "missing_summary": list(self.missing_summary),
            "segmentation_policy": self.segmentation_policy,
        }


class Corpus:
    """Read-only handle over a set of entities, indexed by entity_id."""

    def __init__(self, entities: Sequence[EntityRecord], revision: int = 0):
        self._entities: dict[str, EntityRecord] = {}
        for e in entities:
            if e.entity_id in self._entities:
                raise CorpusError(f"duplicate entity_id {e.entity_id!r}")
            self._entities[e.entity_id] = e
        self.revision = revision

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def __iter__(self) -> Iterable[EntityRecord]:
        return iter(self._entities.values())

    def get(self, entity_id: str) -> EntityRecord:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise CorpusError(f"unknown entity_id {entity_id!r}") from None

    @property
    def entity_ids(self) -> list[str]:
        return list(self._entities)

    def attach_summaries(self, summaries: Mapping[str, str]) -> "Corpus":
        """Return a new revision with the given summaries attached.

        Every key must name an existing entity; offenders are listed in the
        error. Entities not named keep their current summary.
        """
        unknown = [eid for eid in summaries if eid not in self._entities]
        if unknown:
            raise CorpusError(f"unknown entity_ids in summaries: {sorted(unknown)}")
        updated = [
            replace(e, summary=summaries[e.entity_id])
            if e.entity_id in summaries
            else e
            for e in self._entities.values()
        ]
        return Corpus(updated, revision=self.revision + 1)

    def manifest(self) -> CorpusManifest:
        """Validate soft constraints without mutating the corpus."""
        entities = list(self._entities.values())
        return CorpusManifest(
            entity_count=len(entities),
            section_count=sum(len(e.sections) for e in entities),
            image_count=sum(len(e.images) for e in entities),
            missing_main_image=[
                e.entity_id for e in entities if e.main_image is None
            ],
            missing_summary=[e.entity_id for e in entities if not e.summary],
        )


def _entity_from_dict(d: Mapping, line_no: int) -> EntityRecord:
    try:
        sections = tuple(
            SectionRecord(index=s["index"], heading=s.get("heading", ""), body=s["body"])
            for s in d["sections"]
        )
        main = d.get("main_image")
        aux = d.get("aux_images") or []
        return EntityRecord(
            entity_id=d["entity_id"],
            title=d["title"],
            summary=d.get("summary"),
            sections=sections,
            main_image=ImageRef.from_dict(main) if main else None,
            aux_images=tuple(ImageRef.from_dict(a) for a in aux),
        )
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"line {line_no}: malformed entity record: {exc}") from exc


def _entity_to_dict(e: EntityRecord) -> dict:
    return {
        "entity_id": e.entity_id,
        "title": e.title,
        "summary": e.summary,
        "sections": [
            {"index": s.index, "heading": s.heading, "body": s.body}
            for s in e.sections
        ],
        "main_image": e.main_image.to_dict() if e.main_image else None,
        "aux_images": [a.to_dict() for a in e.aux_images],
    }


def load_corpus(path) -> Corpus:
    """Load a JSONL corpus file. Errors name the offending line."""
    entities: list[EntityRecord] = []
    seen_refs: dict[str, ImageRef] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON: {exc}") from exc
            entity = _entity_from_dict(d, line_no)
            for ref in entity.images:
                prior = seen_refs.get(ref.ref_id)
                if prior is not None and prior != ref:
                    raise CorpusError(
                        f"line {line_no}: image ref_id {ref.ref_id!r} redefined "
                        "with a different payload"
                    )
                seen_refs[ref.ref_id] = ref
            entities.append(entity)
    return Corpus(entities)


def persist_corpus(corpus: Corpus, path) -> None:
    """Write the corpus back out in canonical JSONL form.

    ``persist(load(x))`` is byte-identical for input already in this form
    (sorted keys, compact separators, one entity per line).
    """
    with open(path, "w", encoding="utf-8") as fh:
        for entity in corpus:
            fh.write(
                json.dumps(_entity_to_dict(entity), sort_keys=True,
                           separators=(",", ":"), ensure_ascii=False)
            )
            fh.write("\n")


def load_queries(path) -> list[QuerySample]:
    """Load a JSONL query-sample file."""
    samples: list[QuerySample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                sample = QuerySample(
                    sample_id=d["sample_id"],
                    image=ImageRef.from_dict(d["image"]),
                    question=d["question"],
                    gold_entity_id=d.get("gold_entity_id"),
                    gold_section_index=d.get("gold_section_index"),
                    valid_answers=tuple(d.get("valid_answers") or ()),
                    answer_kind=d.get("answer_kind", "string"),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"line {line_no}: malformed query sample: {exc}") from exc
            if sample.sample_id in seen:
                raise CorpusError(f"line {line_no}: duplicate sample_id {sample.sample_id!r}")
            seen.add(sample.sample_id)
            samples.append(sample)
    return samples


@dataclass(frozen=True)
class SegmentationPolicy:
    """Rule-based segmentation settings.

    Articles with explicit heading markers ("# " / "## " prefixed lines)
    split one section per heading; headingless text falls back to greedy
    paragraph packing bounded by ``max_chars`` (and optionally
    ``max_paragraphs``). A single paragraph longer than ``max_chars``
    becomes its own section.
    """

    max_chars: int = 2000
    max_paragraphs: Optional[int] = None
    split_on_headings: bool = True

    def describe(self) -> str:
        return (
            f"headings={self.split_on_headings},max_chars={self.max_chars},"
            f"max_paragraphs={self.max_paragraphs}"
        )


def _pack_paragraphs(text: str, policy: SegmentationPolicy) -> list[str]:
    paragraphs = text.split("\n\n")
    bodies: list[str] = []
    current: list[str] = []

    def flush() -> None:
        if current:
            bodies.append("\n\n".join(current))
            current.clear()

    for para in paragraphs:
        candidate_len = (
            len(para)
            if not current
            else sum(len(p) for p in current) + 2 * len(current) + len(para)
        )
        if current and (
            candidate_len > policy.max_chars
            or (policy.max_paragraphs is not None
                and len(current) >= policy.max_paragraphs)
        ):
            flush()
        current.append(para)
        if len(para) > policy.max_chars:
            # oversized paragraph stands alone
            flush()
    flush()
    return bodies


def segment_article(raw_text: str, policy: SegmentationPolicy = SegmentationPolicy()) -> list[SectionRecord]:
    """Split raw article text into sections, deterministically.

    Joining the bodies of a headingless article with the paragraph boundary
    ("\\n\\n") reproduces the input exactly; heading-split articles
    additionally consume the heading marker lines as boundaries.
    """
    if not raw_text:
        raise CorpusError("cannot segment empty text")

    lines = raw_text.split("\n")
    has_headings = policy.split_on_headings and any(
        ln.startswith("# ") or ln.startswith("## ") for ln in lines
    )

    if not has_headings:
        bodies = _pack_paragraphs(raw_text, policy)
        return [
            SectionRecord(index=i, heading="", body=body)
            for i, body in enumerate(bodies)
        ]

    # one chunk per heading marker; a non-empty preamble keeps an empty heading
    chunks: list[tuple[str, list[str]]] = []
    heading = ""
    body_lines: list[str] = []
    for ln in lines:
        if ln.startswith("# ") or ln.startswith("## "):
            if body_lines and any(s.strip() for s in body_lines):
                chunks.append((heading, body_lines))
            heading = ln.lstrip("#").strip()
            body_lines = []
        else:
            body_lines.append(ln)
    if body_lines and any(s.strip() for s in body_lines):
        chunks.append((heading, body_lines))

    sections: list[SectionRecord] = []
    for heading, body_lines in chunks:
        body = "\n".join(body_lines)
        if len(body) > policy.max_chars:
            for piece in _pack_paragraphs(body, policy):
                sections.append(
                    SectionRecord(index=len(sections), heading=heading, body=piece)
                )
        else:
            sections.append(
                SectionRecord(index=len(sections), heading=heading, body=body)
            )
    if not sections:
        raise CorpusError("segmentation produced no sections (text is all markers?)")
    return sections
