"""Graph-to-report synthesis: triplets, generation prompts, and report text.

Reports come from an LLM when one is configured and reachable, otherwise
from a deterministic template engine driven by the versioned verb-phrase
table in ``data/verb_phrases.json``.
"""

from __future__ import annotations

import json
import logging
import ntpath
import posixpath
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

from provhunt.errors import InvalidInputError, SchemaError
from provhunt.graph import ActionKind, Entity, EntityKind, Subgraph
from provhunt.llm import Completer, LlmTransportError

logger = logging.getLogger(__name__)

N_EXAMPLES = 5

SECTION_TASK = "### Task Description"
SECTION_EXAMPLE_INPUT = "### Example Input"
SECTION_EXAMPLE_REPORT = "### Example Report"
SECTION_INPUT = "### Input"
SECTION_OUTPUT = "### Report"


class Provenance(str, Enum):
    LLM = "llm"
    TEMPLATE = "template"


@lru_cache(maxsize=None)
def _load(name: str) -> dict:
    return json.loads(resources.files("provhunt.data").joinpath(name).read_text(encoding="utf-8"))


def verb_table() -> dict:
    return _load("verb_phrases.json")


def icl_bundle() -> dict:
    return _load("icl_examples.json")


_QUOTED = re.compile(r'^"([^"]+)"')
_EXE_PREFIX = re.compile(r"^.*?\.(?:exe|com|bat|cmd|ps1|sh|py|bin)(?=\s|$)", re.IGNORECASE)


def _executable(cmdline: str) -> str:
    """Executable path of a command line; tolerates quoted paths and spaces."""
    for pattern in (_QUOTED, _EXE_PREFIX):
        m = pattern.match(cmdline)
        if m:
            return m.group(m.lastindex or 0)
    return cmdline.split()[0]


def entity_label(entity: Entity) -> str:
    """Short label: executable basename, file basename, or ip:port verbatim."""
    attr = entity.attribute.strip()
    if entity.kind is EntityKind.SOCKET:
        return attr
    token = _executable(attr) if entity.kind is EntityKind.PROCESS else attr
    base = ntpath.basename(posixpath.basename(token.rstrip("/\\")))
    return base or attr


def _escape(label: str) -> str:
    return (label.replace("\\", "\\\\").replace(",", "\\,").replace("<", "\\<")
            .replace(">", "\\>").replace("\n", "\\n"))


@dataclass(frozen=True)
class Triplet:
    subject_label: str
    action: ActionKind
    object_label: str
    timestamp: int = 0
    object_kind: EntityKind | None = None

    def render(self) -> str:
        return f"<{_escape(self.subject_label)}, {self.action.value}, {_escape(self.object_label)}>"

    def __str__(self):
        return self.render()


def graph_to_triplets(sg: Subgraph) -> list[Triplet]:
    """One triplet per induced event, ascending by timestamp (stable)."""
    events = sorted(sg.events, key=lambda ev: ev.timestamp)
    return [
        Triplet(
            entity_label(sg.entities[ev.subject]),
            ev.action,
            entity_label(sg.entities[ev.object]),
            ev.timestamp,
            sg.entities[ev.object].kind,
        )
        for ev in events
    ]


def render_triplet_lines(triplets: Sequence[Triplet]) -> str:
    # relative step indices rather than wall-clock times
    return "\n".join(f"{i}. {t.render()}" for i, t in enumerate(triplets, start=1))


@dataclass(frozen=True)
class GenerationPrompt:
    task_description: str
    example_triplets: tuple[Triplet, ...]
    example_report: str
    input_triplets: tuple[Triplet, ...]

    def __post_init__(self):
        if not self.task_description or not self.example_triplets or not self.example_report:
            raise InvalidInputError("prompt parts must be non-empty")
        if not self.input_triplets:
            raise InvalidInputError("prompt needs at least one input triplet")

    def render(self) -> str:
        return "\n\n".join([
            SECTION_TASK, self.task_description,
            SECTION_EXAMPLE_INPUT, render_triplet_lines(self.example_triplets),
            SECTION_EXAMPLE_REPORT, self.example_report,
            SECTION_INPUT, render_triplet_lines(self.input_triplets),
            SECTION_OUTPUT,
        ])

    def input_section(self) -> str:
        return render_triplet_lines(self.input_triplets)


def build_generation_prompt(triplets: Sequence[Triplet], example_id: int = 0) -> GenerationPrompt:
    if not 0 <= example_id < N_EXAMPLES:
        raise InvalidInputError(f"example_id must be in [0, {N_EXAMPLES}), got {example_id}")
    if not triplets:
        raise InvalidInputError("cannot build a prompt from an empty triplet list")
    bundle = icl_bundle()
    demo = bundle["examples"][example_id]
    example = tuple(Triplet(s, ActionKind(a), o, i) for i, (s, a, o) in enumerate(demo["triplets"]))
    ordered = tuple(sorted(triplets, key=lambda t: t.timestamp))
    return GenerationPrompt(bundle["task_description"], example, demo["report"], ordered)


def template_synthesize(triplets: Sequence[Triplet]) -> str:
    """Deterministic narrative with exactly one sentence per triplet."""
    if not triplets:
        raise InvalidInputError("template synthesis needs at least one triplet")
    table = verb_table()
    phrases, conn = table["phrases"], table["connectors"]
    ordered = sorted(triplets, key=lambda t: t.timestamp)
    sentences = []
    last = len(ordered) - 1
    for i, t in enumerate(ordered):
        if i == 0:
            lead = conn["first"]
        elif i == last:
            lead = conn["last"]
        else:
            lead = conn["middle"][(i - 1) % len(conn["middle"])]
        kind = f"{t.object_kind.value} " if t.object_kind is not None else ""
        sentences.append(f"{lead} the process {t.subject_label} {phrases[t.action.value]} the {kind}{t.object_label}.")
    return " ".join(sentences)


def generate_report(triplets: Sequence[Triplet], client: Completer | None = None,
                    example_id: int = 0) -> tuple[str, Provenance]:
    """LLM completion when ``client`` answers, template text otherwise."""
    if client is not None and triplets:
        prompt = build_generation_prompt(triplets, example_id)
        try:
            text = client.complete(prompt.render())
            if text and text.strip():
                return text.strip(), Provenance.LLM
            logger.warning("LLM returned empty text; using template")
        except LlmTransportError as exc:
            logger.warning("LLM unavailable (%s); using template", exc)
    return template_synthesize(triplets), Provenance.TEMPLATE


@dataclass
class PairedSample:
    graph: Subgraph
    report: str
    provenance: Provenance = Provenance.TEMPLATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.report, str) or not self.report.strip():
            raise SchemaError("paired sample report must be non-empty")
        self.provenance = Provenance(self.provenance)

    @property
    def pair_id(self) -> str:
        return self.graph.graph_id

    def to_dict(self) -> dict:
        out = {"graph": self.graph.to_dict(), "report": self.report, "provenance": self.provenance.value}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PairedSample":
        try:
            return cls(Subgraph.from_dict(payload["graph"]), payload["report"],
                       Provenance(payload.get("provenance", "template")), dict(payload.get("meta", {})))
        except KeyError as exc:
            raise SchemaError(f"paired sample missing {exc.args[0]!r}") from None


def synthesize_pairs(subgraphs: Iterable[Subgraph], client: Completer | None = None,
                     max_concurrency: int = 4) -> list[PairedSample]:
    """Pair each subgraph with a report; demonstrations rotate by index.

    Subgraphs without events are skipped, since there is nothing to narrate.
    """
    subgraphs = list(subgraphs)
    params = dict(getattr(client, "params", {}) or {})

    def one(item):
        i, sg = item
        triplets = graph_to_triplets(sg)
        if not triplets:
            return None
        example_id = i % N_EXAMPLES
        text, prov = generate_report(triplets, client, example_id)
        meta = {"example_id": example_id, "verb_table_version": verb_table()["version"]}
        if prov is Provenance.LLM:
            meta.update(params)
        return PairedSample(sg, text, prov, meta)

    items = list(enumerate(subgraphs))
    workers = max(1, max_concurrency) if client is not None else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]
    skipped = sum(r is None for r in results)
    if skipped:
        logger.warning("skipped %d subgraphs without events", skipped)
    return [r for r in results if r is not None]

