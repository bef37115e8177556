"""Provenance graph data model and audit-log ingestion.

A provenance graph holds typed system entities (processes, files, sockets)
connected by timestamped action edges ``<subject, action, object, ts>``,
where the subject is always a process.

Audit JSONL accepted by :func:`ingest_audit_log`, one record per line::

    {"ts": 5, "subject": {"id": "p1", "kind": "process", "attr": "..."},
     "action": "connect", "object": {"id": "s1", "kind": "socket", "attr": "..."}}

Graph files written by :meth:`ProvenanceGraph.to_json` use the same field
names, with entities sorted by id and events in (ts, input order).
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterable, Mapping

from provhunt.errors import NotFoundError, ParseError, SchemaError

logger = logging.getLogger(__name__)


class EntityKind(str, Enum):
    PROCESS = "process"
    FILE = "file"
    SOCKET = "socket"


class ActionKind(str, Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"
    FORK = "fork"
    OPEN = "open"
    CLOSE = "close"
    DELETE = "delete"
    CONNECT = "connect"
    SEND = "send"
    RECEIVE = "receive"


# Used only under the "coerce" unknown-action policy.
ACTION_SYNONYMS = {
    "recv": ActionKind.RECEIVE,
    "recvfrom": ActionKind.RECEIVE,
    "recvmsg": ActionKind.RECEIVE,
    "sendto": ActionKind.SEND,
    "sendmsg": ActionKind.SEND,
    "exec": ActionKind.EXECUTE,
    "execve": ActionKind.EXECUTE,
    "clone": ActionKind.FORK,
    "vfork": ActionKind.FORK,
    "unlink": ActionKind.DELETE,
    "remove": ActionKind.DELETE,
    "modify": ActionKind.WRITE,
    "create": ActionKind.WRITE,
    "accept": ActionKind.CONNECT,
    "load": ActionKind.READ,
}

UNKNOWN_ACTION_POLICIES = ("reject", "coerce")


def parse_kind(value: Any) -> EntityKind:
    try:
        return EntityKind(str(value).lower())
    except ValueError:
        raise SchemaError(f"unknown entity kind {value!r}") from None


def parse_action(value: Any, policy: str = "reject") -> ActionKind | None:
    """Map a verb onto :class:`ActionKind`.

    Returns ``None`` only under the ``coerce`` policy when the verb has no
    known synonym (the caller drops the record).
    """
    verb = str(value).lower()
    try:
        return ActionKind(verb)
    except ValueError:
        pass
    if policy == "coerce":
        return ACTION_SYNONYMS.get(verb)
    raise SchemaError(f"unknown action {value!r}")


@dataclass(frozen=True)
class Entity:
    id: str
    kind: EntityKind
    attribute: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise SchemaError("entity id must be a non-empty string")
        if not isinstance(self.kind, EntityKind):
            object.__setattr__(self, "kind", parse_kind(self.kind))
        if not isinstance(self.attribute, str) or not self.attribute.strip():
            raise SchemaError(f"entity {self.id!r} has an empty attribute")

    @property
    def text(self) -> str:
        return node_attribute_text(self)


def node_attribute_text(entity: Entity) -> str:
    """Render an entity the way node features are initialised.

    >>> node_attribute_text(Entity("s1", EntityKind.SOCKET, "127.0.0.1:0"))
    'socket: 127.0.0.1:0'
    """
    return f"{entity.kind.value}: {entity.attribute}"


def _strip_kind_prefix(kind: EntityKind, attr: str) -> str:
    prefix = kind.value + ":"
    if attr.lower().startswith(prefix):
        return attr[len(prefix):].strip()
    return attr


@dataclass(frozen=True)
class Event:
    subject: str
    action: ActionKind
    object: str
    timestamp: int

    def key(self):
        return (self.subject, self.action.value, self.object, self.timestamp)


class ProvenanceGraph:
    """Immutable provenance graph.

    Build one with :class:`GraphBuilder`, :func:`ingest_audit_log` or
    :meth:`from_dict`. Adjacency is undirected (in- and out-neighbours).
    """

    def __init__(self, entities: Mapping[str, Entity], events: Iterable[Event]):
        ents = dict(sorted(entities.items()))
        evs = tuple(events)
        adj: dict[str, set] = {eid: set() for eid in ents}
        for ev in evs:
            for end in (ev.subject, ev.object):
                if end not in ents:
                    raise SchemaError(f"event references unknown entity {end!r}")
            if ents[ev.subject].kind is not EntityKind.PROCESS:
                raise SchemaError(f"subject {ev.subject!r} is not a process")
            if ev.subject != ev.object:
                adj[ev.subject].add(ev.object)
                adj[ev.object].add(ev.subject)
        self._entities = MappingProxyType(ents)
        self._events = evs
        self._adjacency = MappingProxyType({k: tuple(sorted(v)) for k, v in adj.items()})

    @property
    def entities(self) -> Mapping[str, Entity]:
        return self._entities

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events

    @property
    def adjacency(self) -> Mapping[str, tuple[str, ...]]:
        return self._adjacency

    def __len__(self):
        return len(self._entities)

    def __contains__(self, entity_id):
        return entity_id in self._entities

    def __repr__(self):
        return f"{type(self).__name__}(nodes={len(self)}, events={len(self._events)})"

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise NotFoundError(f"unknown entity id {entity_id!r}") from None

    def neighbors(self, entity_id: str) -> list[str]:
        """Union of in- and out-neighbours, sorted by id."""
        if entity_id not in self._adjacency:
            raise NotFoundError(f"unknown entity id {entity_id!r}")
        return list(self._adjacency[entity_id])

    def ids_of_kind(self, kind: EntityKind) -> list[str]:
        return [eid for eid, e in self._entities.items() if e.kind is kind]

    def kind_counts(self) -> Counter:
        return Counter(e.kind for e in self._entities.values())

    def induced_events(self, node_ids) -> list[Event]:
        nodes = set(node_ids)
        return [ev for ev in self._events if ev.subject in nodes and ev.object in nodes]

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "entities": [
                {"id": e.id, "kind": e.kind.value, "attr": e.attribute}
                for e in self._entities.values()
            ],
            "events": [
                {"ts": ev.timestamp, "subject": ev.subject, "action": ev.action.value, "object": ev.object}
                for ev in self._events
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("ascii")).hexdigest()

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ProvenanceGraph":
        try:
            raw_entities = payload["entities"]
            raw_events = payload["events"]
        except (KeyError, TypeError):
            raise SchemaError("graph JSON needs 'entities' and 'events' arrays") from None
        entities = {}
        for item in raw_entities:
            ent = Entity(item["id"], parse_kind(item["kind"]), item["attr"])
            if ent.id in entities:
                raise SchemaError(f"duplicate entity id {ent.id!r}")
            entities[ent.id] = ent
        events = [
            Event(item["subject"], parse_action(item["action"]), item["object"], _check_ts(item["ts"]))
            for item in raw_events
        ]
        order = sorted(range(len(events)), key=lambda i: events[i].timestamp)
        return cls(entities, [events[i] for i in order])

    @classmethod
    def from_json(cls, text: str) -> "ProvenanceGraph":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid graph JSON: {exc}") from None
        return cls.from_dict(payload)

    def equivalent(self, other: "ProvenanceGraph") -> bool:
        """Equality on (entity set, event multiset)."""
        return (
            set(self._entities.values()) == set(other.entities.values())
            and Counter(self._events) == Counter(other.events)
        )


def _check_ts(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise SchemaError(f"timestamp must be a non-negative integer, got {value!r}")
    return value


@dataclass
class GraphBuilder:
    """Single-writer accumulator that freezes into a :class:`ProvenanceGraph`."""

    dedup: bool = False
    unknown_action: str = "reject"
    entities: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    dropped: int = 0
    _seen: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        if self.unknown_action not in UNKNOWN_ACTION_POLICIES:
            raise SchemaError(f"unknown_action must be one of {UNKNOWN_ACTION_POLICIES}")

    def add_entity(self, entity: Entity) -> Entity:
        existing = self.entities.get(entity.id)
        if existing is None:
            self.entities[entity.id] = entity
            return entity
        if existing.kind is not entity.kind:
            raise SchemaError(
                f"entity {entity.id!r} seen as {existing.kind.value} and {entity.kind.value}"
            )
        if existing.attribute != entity.attribute:
            logger.warning(
                "attribute conflict for %s: keeping %r, ignoring %r",
                entity.id, existing.attribute, entity.attribute,
            )
        return existing

    def add_event(self, subject: Entity, action: ActionKind, obj: Entity, ts: int) -> None:
        if subject.kind is not EntityKind.PROCESS:
            raise SchemaError(f"subject {subject.id!r} has kind {subject.kind.value}, expected process")
        subject = self.add_entity(subject)
        obj = self.add_entity(obj)
        if subject.kind is not EntityKind.PROCESS:
            raise SchemaError(f"subject {subject.id!r} is not a process")
        ev = Event(subject.id, action, obj.id, ts)
        if self.dedup:
            if ev in self._seen:
                return
            self._seen.add(ev)
        self.events.append(ev)

    def build(self) -> ProvenanceGraph:
        # sorted() is stable, so ties keep input order
        return ProvenanceGraph(self.entities, sorted(self.events, key=lambda ev: ev.timestamp))


def _parse_endpoint(raw, role: str) -> Entity:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{role} must be an object")
    try:
        eid, kind, attr = raw["id"], raw["kind"], raw["attr"]
    except KeyError as exc:
        raise SchemaError(f"{role} is missing field {exc.args[0]!r}") from None
    kind = parse_kind(kind)
    if not isinstance(attr, str):
        raise SchemaError(f"{role}.attr must be a string")
    return Entity(str(eid), kind, _strip_kind_prefix(kind, attr))


def parse_audit_record(record: Mapping, policy: str = "reject"):
    """Validate one audit record; returns ``(subject, action, object, ts)``."""
    if not isinstance(record, Mapping):
        raise SchemaError("record must be a JSON object")
    for key in ("ts", "subject", "action", "object"):
        if key not in record:
            raise SchemaError(f"missing field {key!r}")
    ts = _check_ts(record["ts"])
    subject = _parse_endpoint(record["subject"], "subject")
    if subject.kind is not EntityKind.PROCESS:
        raise SchemaError(f"subject {subject.id!r} has kind {subject.kind.value}, expected process")
    obj = _parse_endpoint(record["object"], "object")
    action = parse_action(record["action"], policy)
    return subject, action, obj, ts


def ingest_audit_log(stream: Iterable, *, dedup: bool = False, unknown_action: str = "reject") -> ProvenanceGraph:
    """Build a graph from audit records (JSON lines or already-decoded dicts).

    Errors carry the 1-based line number of the offending record.
    """
    builder = GraphBuilder(dedup=dedup, unknown_action=unknown_action)
    for lineno, item in enumerate(stream, start=1):
        if isinstance(item, (str, bytes)):
            text = item.decode("utf-8") if isinstance(item, bytes) else item
            if not text.strip():
                continue
            try:
                item = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
        try:
            subject, action, obj, ts = parse_audit_record(item, unknown_action)
            if action is None:
                builder.dropped += 1
                logger.warning("line %d: dropping record with unmappable action %r", lineno, item["action"])
                continue
            builder.add_event(subject, action, obj, ts)
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return builder.build()


@dataclass(frozen=True)
class Subgraph:
    """A node subset of a parent graph together with its induced events."""

    nodes: tuple[str, ...]
    entities: Mapping[str, Entity]
    events: tuple[Event, ...]
    seed_id: str | None = None
    parent_digest: str | None = None
    graph_id: str | None = None

    def __post_init__(self):
        if not self.nodes:
            raise SchemaError("subgraph node set must be non-empty")
        node_set = set(self.nodes)
        if set(self.entities) != node_set:
            raise SchemaError("subgraph entities do not match its node set")
        for ev in self.events:
            if ev.subject not in node_set or ev.object not in node_set:
                raise SchemaError("subgraph event leaves the node set")
        if self.graph_id is None:
            digest = hashlib.sha256("\x1f".join(self.nodes).encode()).hexdigest()[:12]
            object.__setattr__(self, "graph_id", f"{self.seed_id or 'sg'}-{digest}")

    @classmethod
    def induced(cls, graph: ProvenanceGraph, node_ids, *, seed_id=None, graph_id=None) -> "Subgraph":
        nodes = tuple(sorted(set(node_ids)))
        for nid in nodes:
            graph.entity(nid)
        return cls(
            nodes=nodes,
            entities=MappingProxyType({nid: graph.entities[nid] for nid in nodes}),
            events=tuple(graph.induced_events(nodes)),
            seed_id=seed_id,
            parent_digest=graph.digest(),
            graph_id=graph_id,
        )

    def __len__(self):
        return len(self.nodes)

    def kinds(self) -> set:
        return {e.kind for e in self.entities.values()}

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "seed_id": self.seed_id,
            "parent_digest": self.parent_digest,
            "entities": [
                {"id": nid, "kind": self.entities[nid].kind.value, "attr": self.entities[nid].attribute}
                for nid in self.nodes
            ],
            "events": [
                {"ts": ev.timestamp, "subject": ev.subject, "action": ev.action.value, "object": ev.object}
                for ev in self.events
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Subgraph":
        graph = ProvenanceGraph.from_dict(payload)
        return cls(
            nodes=tuple(graph.entities),
            entities=graph.entities,
            events=graph.events,
            seed_id=payload.get("seed_id"),
            parent_digest=payload.get("parent_digest"),
            graph_id=payload.get("graph_id"),
        )

    def as_graph(self) -> ProvenanceGraph:
        return ProvenanceGraph(self.entities, self.events)


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
    return rows


def load_subgraphs(path) -> list[Subgraph]:
    return [Subgraph.from_dict(row) for row in read_jsonl(path)]


def write_subgraphs(path, subgraphs: Iterable[Subgraph]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sg in subgraphs:
            fh.write(sg.to_json() + "\n")
