"""CTI report denoising and corpus relevance filtering.

With an LLM client, reports are rewritten through a three-stage
chain-of-thought prompt. Without one (or when the endpoint fails) a
rule-based fallback strips URLs, e-mail addresses and boilerplate lines
and collapses whitespace; that fallback is deterministic and idempotent.

Pattern files hold one rule per line, prefixed ``ioc:`` or ``ttp:``;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from provhunt.errors import ConfigurationError, ParseError, SchemaError
from provhunt.llm import Completer, LlmTransportError

logger = logging.getLogger(__name__)

STAGES = ("Entity Identification", "Interaction Extraction", "Knowledge Distillation")
BEGIN_MARKER = "<<<CTI_BEGIN>>>"
END_MARKER = "<<<CTI_END>>>"
EMPTY_PLACEHOLDER = "[no actionable content]"

COT_TASK = (
    "You are a senior threat intelligence analyst. The report below was collected from the web "
    "and may contain advertisements, navigation text and other noise. Distill it into a concise, "
    "temporally ordered attack narrative by working through the steps in order."
)
COT_STEPS = (
    "Scan the report and list the core system entities involved in the attack "
    "(processes, files, network endpoints, malicious payloads).",
    "Infer the explicit and implicit interactions among those entities from context, "
    "expressed with audit-style actions such as read, write, execute, fork, connect, send.",
    "Consolidate the interactions into a short narrative that preserves the order of the "
    "attack steps. Output only the narrative under this heading.",
)


@dataclass(frozen=True)
class RawCti:
    id: str
    source: str
    body: str

    def __post_init__(self):
        if not isinstance(self.body, str) or not self.body.strip():
            raise SchemaError(f"report {self.id!r} has an empty body")


@dataclass(frozen=True)
class DenoisedCti:
    id: str
    body: str
    raw: RawCti | None = None
    stage_outputs: dict | None = None
    mode: str = "rules"

    def __post_init__(self):
        if not self.body.strip():
            raise SchemaError(f"denoised report {self.id!r} is empty")


def _escape_body(text: str) -> str:
    out = []
    for i, ch in enumerate(text):
        if ch == "\\":
            out.append("\\\\")
        elif ch == "<" and text.startswith("<<<", i):
            out.append("\\<")
        else:
            out.append(ch)
    return "".join(out)


def _unescape_until(text: str, start: int, stop: str) -> str:
    out, i = [], start
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
            continue
        if text.startswith(stop, i):
            return "".join(out)
        out.append(ch)
        i += 1
    raise ParseError("unterminated report body in prompt")


def build_cot_prompt(raw: RawCti) -> str:
    steps = "\n".join(f"Step {i}: {name}. {desc}" for i, (name, desc) in enumerate(zip(STAGES, COT_STEPS), 1))
    return "\n\n".join([
        "### Task Description", COT_TASK,
        "### Instructions", steps,
        "### Input", f"{BEGIN_MARKER}\n{_escape_body(raw.body)}\n{END_MARKER}",
    ])


def extract_prompt_body(prompt: str) -> str:
    """Recover the original report body embedded by :func:`build_cot_prompt`."""
    start = prompt.find(BEGIN_MARKER + "\n")
    if start < 0:
        raise ParseError("prompt has no report body")
    body = _unescape_until(prompt, start + len(BEGIN_MARKER) + 1, "\n" + END_MARKER)
    return body


_URL = re.compile(r"(?:https?|hxxps?|ftp)://\S+|\bwww\.[^\s/]+\S*", re.IGNORECASE)
_EMAIL = re.compile(r"\b[\w.+-]+@[\w-]+(?:\.[\w-]+)+\b")
_BOILERPLATE = re.compile(
    r"copyright|©|all rights reserved|subscribe|newsletter|cookie|privacy policy|"
    r"terms of (?:use|service)|share this|sign up|follow us|read more",
    re.IGNORECASE,
)
_SPACES = re.compile(r"[ \t\f\v]+")


def rule_based_denoise(text: str) -> str:
    text = _URL.sub(" ", text)
    text = _EMAIL.sub(" ", text)
    lines = []
    for line in text.splitlines():
        if _BOILERPLATE.search(line):
            continue
        line = _SPACES.sub(" ", line).strip()
        if line:
            lines.append(line)
    return "\n".join(lines) or EMPTY_PLACEHOLDER


def _split_stages(text: str) -> dict | None:
    heads = [(m.start(), m.end(), name) for name in STAGES
             for m in [re.search(re.escape(name) + r"[^\n]*\n", text, re.IGNORECASE)] if m]
    if len(heads) != len(STAGES):
        return None
    heads.sort()
    out = {}
    for i, (_, end, name) in enumerate(heads):
        stop = heads[i + 1][0] if i + 1 < len(heads) else len(text)
        out[name] = text[end:stop].strip()
    return out


def denoise(raw: RawCti, client: Completer | None = None) -> DenoisedCti:
    """Total: always returns a result, falling back to rules on any LLM failure."""
    if client is not None:
        try:
            text = client.complete(build_cot_prompt(raw))
            stages = _split_stages(text)
            body = stages[STAGES[-1]] if stages and stages[STAGES[-1]] else text.strip()
            if body:
                return DenoisedCti(raw.id, body, raw, stages, mode="llm")
        except LlmTransportError as exc:
            logger.warning("report %s: LLM unavailable (%s); using rules", raw.id, exc)
    return DenoisedCti(raw.id, rule_based_denoise(raw.body), raw, None, mode="rules")


def denoise_batch(raws: Sequence[RawCti], client: Completer | None = None, max_concurrency: int = 4) -> list[DenoisedCti]:
    if client is None or max_concurrency <= 1:
        return [denoise(r, client) for r in raws]
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        # map() preserves input order
        return list(pool.map(lambda r: denoise(r, client), raws))


@dataclass
class CorpusRules:
    ioc: list = field(default_factory=list)
    ttp: list = field(default_factory=list)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "CorpusRules":
        rules = cls()
        for lineno, line in enumerate(lines, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            prefix, sep, pattern = line.partition(":")
            if not sep or prefix not in ("ioc", "ttp") or not pattern:
                raise ConfigurationError(f"pattern line {lineno}: expected 'ioc:<regex>' or 'ttp:<regex>'")
            try:
                compiled = re.compile(pattern)
            except re.error as exc:
                raise ConfigurationError(f"pattern line {lineno}: {exc}") from None
            getattr(rules, prefix).append(compiled)
        if not rules.ioc or not rules.ttp:
            raise ConfigurationError("rules need at least one ioc: and one ttp: pattern")
        return rules

    @classmethod
    def from_file(cls, path) -> "CorpusRules":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def default(cls) -> "CorpusRules":
        text = resources.files("provhunt.data").joinpath("default_patterns.txt").read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines())

    def matches(self, text: str) -> bool:
        return any(p.search(text) for p in self.ioc) and any(p.search(text) for p in self.ttp)


def filter_corpus(raws: Iterable[RawCti], rules: CorpusRules | Iterable[str] | None = None) -> list[RawCti]:
    """Keep reports matching at least one IoC and one TTP pattern, in order."""
    if rules is None:
        rules = CorpusRules.default()
    elif not isinstance(rules, CorpusRules):
        rules = CorpusRules.from_lines(rules)
    return [r for r in raws if rules.matches(r.body)]


def load_corpus(path) -> list[RawCti]:
    """Read a directory of ``.txt`` files (sorted by name) or a JSONL file."""
    path = Path(path)
    if path.is_dir():
        out = []
        for f in sorted(path.glob("*.txt")):
            body = f.read_text(encoding="utf-8")
            if body.strip():
                out.append(RawCti(f.stem, str(f.name), body))
            else:
                logger.warning("skipping empty report %s", f)
        return out
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out.append(RawCti(str(row["id"]), str(row.get("source", "")), row["body"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad corpus record ({exc})", line=lineno) from None
            except SchemaError as exc:
                raise ParseError(str(exc), line=lineno) from None
    return out


def denoised_jsonl(items: Iterable[DenoisedCti]) -> str:
    lines = []
    for d in items:
        raw = d.raw
        row = {"id": d.id, "source": raw.source if raw else "", "body": raw.body if raw else d.body,
               "denoised": d.body}
        lines.append(json.dumps(row, ensure_ascii=False) + "\n")
    return "".join(lines)


def write_denoised(path, items: Iterable[DenoisedCti]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(denoised_jsonl(items))
