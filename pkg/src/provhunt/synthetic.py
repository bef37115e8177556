"""Seeded generator of synthetic audit logs for fixtures and demos."""

from __future__ import annotations

import numpy as np

from provhunt.graph import ProvenanceGraph, ingest_audit_log

_EXES = [
    "bash", "sshd", "nginx", "firefox.exe", "powershell.exe", "python3", "curl",
    "word.exe", "excel.exe", "svchost.exe", "cron", "vim", "tar", "scp", "java",
]
_DIRS = ["/home/alice", "/tmp", "/etc", "/var/log", "/usr/lib", "C:/Users/bob/Documents", "/opt/app"]
_EXTS = ["txt", "docx", "log", "conf", "so", "dat", "csv", "sh", "py", "zip"]
_WORDS = [
    "payroll", "report", "notes", "config", "backup", "invoice", "draft", "secrets",
    "build", "archive", "budget", "access", "session", "plan", "cache", "index",
]


def make_audit_records(n_nodes: int = 200, seed: int = 0, *, socket_share: float = 0.15,
                       process_share: float = 0.35) -> list[dict]:
    """Return audit records whose graph has exactly ``n_nodes`` entities.

    Every entity takes part in at least one event, so the graph has no
    isolated nodes.
    """
    rng = np.random.default_rng(seed)
    n_sock = max(1, int(n_nodes * socket_share))
    n_proc = max(1, int(n_nodes * process_share))
    n_file = n_nodes - n_sock - n_proc
    if n_file < 1:
        raise ValueError("n_nodes too small for three entity kinds")

    procs = []
    for i in range(n_proc):
        exe = _EXES[rng.integers(len(_EXES))]
        arg = _WORDS[rng.integers(len(_WORDS))]
        procs.append({"id": f"p{i:05d}", "kind": "process", "attr": f"{exe}_{i} --{arg} {int(rng.integers(1, 99))}"})
    files = []
    for i in range(n_file):
        d = _DIRS[rng.integers(len(_DIRS))]
        w = _WORDS[rng.integers(len(_WORDS))]
        e = _EXTS[rng.integers(len(_EXTS))]
        files.append({"id": f"f{i:05d}", "kind": "file", "attr": f"{d}/{w}_{i}.{e}"})
    socks = []
    for i in range(n_sock):
        ip = f"10.{int(rng.integers(0, 256))}.{int(rng.integers(0, 256))}.{int(rng.integers(1, 255))}"
        socks.append({"id": f"s{i:05d}", "kind": "socket", "attr": f"{ip}:{int(rng.integers(20, 65535))}"})

    records = []
    ts = 1_000_000

    def emit(subject, action, obj):
        nonlocal ts
        ts += int(rng.integers(1, 1000))
        records.append({"ts": ts, "subject": subject, "action": action, "object": obj})

    # every socket touches 1-3 processes
    for s in socks:
        for j in rng.choice(n_proc, size=min(n_proc, int(rng.integers(1, 4))), replace=False):
            emit(procs[j], ["connect", "send", "receive"][rng.integers(3)], s)
    # every file touched by at least one process
    for f in files:
        emit(procs[rng.integers(n_proc)], ["read", "write", "open", "execute", "delete"][rng.integers(5)], f)
    for i, p in enumerate(procs):
        for _ in range(int(rng.integers(1, 5))):
            emit(p, ["read", "write", "open", "close"][rng.integers(4)], files[rng.integers(n_file)])
        if n_proc > 1 and rng.random() < 0.5:
            j = int(rng.integers(n_proc))
            if j != i:
                emit(p, "fork", procs[j])
        if rng.random() < 0.3:
            emit(p, ["connect", "send"][rng.integers(2)], socks[rng.integers(n_sock)])
    # shuffle so ingestion has to sort
    order = rng.permutation(len(records))
    return [records[i] for i in order]


def make_graph(n_nodes: int = 200, seed: int = 0, **kwargs) -> ProvenanceGraph:
    return ingest_audit_log(make_audit_records(n_nodes, seed, **kwargs))
