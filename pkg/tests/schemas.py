"""JSON Schemas for every artifact the pipeline writes, plus binary-header checks."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import jsonschema

ID = {"type": "string", "minLength": 1}
PROB = {"type": "number", "minimum": 0, "maximum": 1}
RATE = {"type": ["number", "null"], "minimum": 0, "maximum": 1}

ENTITY = {
    "type": "object",
    "required": ["id", "kind", "attr"],
    "properties": {"id": ID, "kind": {"enum": ["process", "file", "socket"]}, "attr": ID},
    "additionalProperties": False,
}
EVENT = {
    "type": "object",
    "required": ["ts", "subject", "action", "object"],
    "properties": {"ts": {"type": "integer"}, "subject": ID, "object": ID, "action": {"type": "string"}},
    "additionalProperties": False,
}
GRAPH = {
    "type": "object",
    "required": ["entities", "events"],
    "properties": {"entities": {"type": "array", "items": ENTITY}, "events": {"type": "array", "items": EVENT}},
}
SUBGRAPH = {
    "type": "object",
    "required": ["graph_id", "seed_id", "parent_digest", "entities", "events"],
    "properties": {
        "graph_id": ID, "seed_id": ID, "parent_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "entities": {"type": "array", "items": ENTITY, "minItems": 1}, "events": {"type": "array", "items": EVENT},
    },
}
PAIR = {
    "type": "object",
    "required": ["graph", "report", "provenance"],
    "properties": {"graph": SUBGRAPH, "report": ID, "provenance": {"enum": ["llm", "template"]},
                   "meta": {"type": "object"}},
}
DENOISED = {
    "type": "object",
    "required": ["id", "source", "body", "denoised"],
    "properties": {"id": ID, "source": {"type": "string"}, "body": ID, "denoised": {"type": "string"}},
    "additionalProperties": False,
}
SCORED = {
    "type": "object",
    "required": ["report_id", "similarity", "prob"],
    "properties": {"report_id": ID, "similarity": {"type": "number", "minimum": -1.0001, "maximum": 1.0001},
                   "prob": PROB},
}
DECISION = {
    "type": "object",
    "required": ["graph_id", "matches", "verdict"],
    "properties": {"graph_id": ID, "matches": {"type": "array", "items": SCORED},
                   "verdict": {"enum": ["match", "no-match"]}},
}
COUNTS = {
    "type": "object",
    "required": ["tp", "fp", "tn", "fn"],
    "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "tn", "fn")},
}
METRICS = {
    "type": "object",
    "required": ["recall", "precision", "accuracy", "fpr", "f1", "counts", "undefined", "outcomes"],
    "properties": {
        **{k: RATE for k in ("recall", "precision", "accuracy", "fpr", "f1", "tnr")},
        "counts": COUNTS,
        "undefined": {"type": "object", "additionalProperties": {"type": "string"}},
        "outcomes": {"type": "array", "items": {
            "type": "object",
            "required": ["graph_id", "paired_report", "matched", "paired_matched", "bin"],
            "properties": {"bin": {"enum": ["tp", "fp", "tn", "fn"]}, "paired_matched": {"type": "boolean"}},
        }},
    },
}
ALERTS = {
    "type": "object",
    "required": ["afr", "trr", "total_alerts", "filtered", "true_alerts", "retained_true", "alerts"],
    "properties": {
        "afr": RATE, "trr": RATE,
        **{k: {"type": "integer", "minimum": 0} for k in ("total_alerts", "filtered", "true_alerts", "retained_true")},
        "alerts": {"type": "array", "items": {
            "type": "object",
            "required": ["graph_id", "filtered", "threat", "matches"],
            "properties": {"filtered": {"type": "boolean"}, "threat": {"type": "boolean"},
                           "matches": {"type": "array", "items": SCORED}},
        }},
    },
}
MANIFEST = {
    "type": "object",
    "required": ["tool_version", "config_digest", "stages"],
    "properties": {"stages": {"type": "object", "additionalProperties": {
        "type": "object",
        "required": ["output", "digest", "inputs", "seed", "offline", "extra"],
        "properties": {"digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"}, "offline": {"type": "boolean"}},
    }}},
}


def _jsonl(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def check_jsonl(path, schema, min_rows=1) -> list:
    rows = _jsonl(path)
    assert len(rows) >= min_rows, f"{path}: {len(rows)} rows"
    for row in rows:
        jsonschema.validate(row, schema)
    return rows


def check_json(path, schema) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    jsonschema.validate(doc, schema)
    return doc


def check_loss_log(path, epochs: int) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "gtc", "gtm", "mlm", "mgm", "total", "lr"]
    assert [int(r["epoch"]) for r in rows] == list(range(1, epochs + 1))
    for r in rows:
        for k in ("gtc", "mgm", "total", "lr"):
            assert float(r[k]) >= 0
    return rows


def check_checkpoint(path) -> dict:
    data = Path(path).read_bytes()
    assert data[:4] == b"PHCK"
    version, hlen = struct.unpack("<II", data[4:12])
    header = json.loads(data[12:12 + hlen])
    assert version == header["version"] == 1
    n = sum(math.prod(p["shape"]) for p in header["params"])
    assert len(data) == 12 + hlen + 4 * n
    return header


def check_index(path) -> tuple[int, int]:
    data = Path(path).read_bytes()
    assert data[:7] == b"PHINDEX"
    n, d = struct.unpack_from("<II", data, 7)
    pos = 15
    for _ in range(n):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4 + length
    assert len(data) - pos == 4 * n * d
    return n, d


def check_all(out: dict, workdir, epochs: int) -> None:
    """Validate every artifact produced by ``pipeline_run.run_pipeline``."""
    check_json(out["ingest"], GRAPH)
    subgraphs = check_jsonl(out["sample"], SUBGRAPH)
    pairs = check_jsonl(out["synth"], PAIR)
    assert [p["graph"] for p in pairs] == subgraphs
    check_jsonl(out["denoise"], DENOISED)
    check_checkpoint(out["train"])
    check_loss_log(out["loss_log"], epochs)
    n, _ = check_index(out["index"])
    assert n == len(_jsonl(out["corpus"]))
    decisions = check_jsonl(out["hunt"], DECISION)
    assert [d["graph_id"] for d in decisions] == [s["graph_id"] for s in subgraphs]
    metrics = check_json(out["eval"], METRICS)
    assert sum(metrics["counts"].values()) == len(subgraphs)
    alerts = check_json(out["validate-alerts"], ALERTS)
    assert alerts["total_alerts"] == len(subgraphs)
    check_json(Path(workdir) / "manifest.json", MANIFEST)
