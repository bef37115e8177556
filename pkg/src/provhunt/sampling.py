"""Activity subgraph sampling and seed-anchored subgraph extraction.

Randomness comes from numpy's PCG64 bit generator. Each socket seed gets
its own stream, derived as ``SeedSequence([rng_seed, seed_index])``, so
per-seed sampling is order-independent and can be parallelised without
changing results.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from provhunt.errors import ConfigurationError, NotFoundError
from provhunt.graph import EntityKind, ProvenanceGraph, Subgraph

logger = logging.getLogger(__name__)

KIND_ORDER = (EntityKind.PROCESS, EntityKind.FILE, EntityKind.SOCKET)


@dataclass(frozen=True)
class SamplingConfig:
    min_nodes: int = 10
    max_nodes: int = 20
    rng_seed: int = 0
    layer1_processes: int = 3
    dedup: bool = False
    workers: int = 1

    def __post_init__(self):
        if not (1 <= self.min_nodes <= self.max_nodes):
            raise ConfigurationError(
                f"need 1 <= min_nodes <= max_nodes, got {self.min_nodes}, {self.max_nodes}"
            )
        if self.layer1_processes < 1:
            raise ConfigurationError("layer1_processes must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigurationError("rng_seed must fit in 64 bits")


@dataclass
class SamplingStats:
    seeds: int = 0
    emitted: int = 0
    dropped: Counter = field(default_factory=Counter)


def seed_rng(rng_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([rng_seed, index])))


def _choose(rng: np.random.Generator, items: list, n: int) -> list:
    if n >= len(items):
        return list(items)
    if n <= 0:
        return []
    picks = rng.choice(len(items), size=n, replace=False)
    return [items[i] for i in sorted(picks)]


def type_balanced_sample(candidates, graph: ProvenanceGraph, budget: int, rng: np.random.Generator) -> list[str]:
    """Sample up to ``budget`` ids with per-kind counts as even as availability allows.

    Slots are dealt round-robin over the kinds (in an rng-shuffled order),
    skipping kinds that ran out; ids within a kind are drawn uniformly.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    pools = {k: [] for k in KIND_ORDER}
    for cid in sorted(set(candidates)):
        pools[graph.entity(cid).kind].append(cid)
    order = [KIND_ORDER[i] for i in rng.permutation(len(KIND_ORDER))]
    quota = dict.fromkeys(KIND_ORDER, 0)
    remaining = budget
    while remaining > 0:
        progressed = False
        for kind in order:
            if remaining and quota[kind] < len(pools[kind]):
                quota[kind] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    picked = []
    for kind in KIND_ORDER:
        picked.extend(_choose(rng, pools[kind], quota[kind]))
    return sorted(picked)


def _frontier(graph: ProvenanceGraph, sources, taken: set) -> list[str]:
    out = set()
    for nid in sources:
        out.update(graph.adjacency[nid])
    return sorted(out - taken)


def _sample_one(graph: ProvenanceGraph, seed: str, cfg: SamplingConfig, rng: np.random.Generator):
    sg = {seed}
    procs = [n for n in graph.adjacency[seed] if graph.entities[n].kind is EntityKind.PROCESS]
    if not procs:
        return None, "no_process_neighbor"
    layer1 = _choose(rng, procs, min(len(procs), cfg.layer1_processes))
    sg.update(layer1)

    layer2_pool = _frontier(graph, layer1, sg)
    layer2 = type_balanced_sample(layer2_pool, graph, max(0, cfg.max_nodes - len(sg)), rng)
    sg.update(layer2)

    if len(sg) < cfg.min_nodes:
        layer3_pool = _frontier(graph, layer2, sg)
        lo, hi = cfg.min_nodes - len(sg), cfg.max_nodes - len(sg)
        target = int(rng.integers(lo, hi + 1))
        sg.update(_choose(rng, layer3_pool, target))

    if len(sg) < cfg.min_nodes:
        return None, "undersized"
    if len(sg) > cfg.max_nodes:
        return None, "oversized"
    kinds = {graph.entities[n].kind for n in sg}
    if kinds != set(KIND_ORDER):
        return None, "missing_kinds"
    return sg, None


def sample_activity_subgraphs(graph: ProvenanceGraph, cfg: SamplingConfig | None = None,
                              stats: SamplingStats | None = None) -> list[Subgraph]:
    """Three-layer BFS sampling seeded at every socket node.

    Layer 1 takes up to ``cfg.layer1_processes`` process neighbours of the
    socket, layer 2 a type-balanced sample of their neighbours (budget
    ``max_nodes - |sg|``), and layer 3 tops up from the next frontier only
    when the subgraph is still below ``min_nodes``. Candidates that miss
    the size range or lack one of the three kinds are dropped and counted
    in ``stats.dropped``.
    """
    cfg = cfg or SamplingConfig()
    stats = stats if stats is not None else SamplingStats()
    seeds = graph.ids_of_kind(EntityKind.SOCKET)
    stats.seeds += len(seeds)
    parent = graph.digest()

    def run(item):
        index, seed = item
        return seed, _sample_one(graph, seed, cfg, seed_rng(cfg.rng_seed, index))

    items = list(enumerate(seeds))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    out, seen = [], set()
    for seed, (nodes, reason) in results:
        if nodes is None:
            stats.dropped[reason] += 1
            continue
        key = frozenset(nodes)
        if cfg.dedup and key in seen:
            stats.dropped["duplicate"] += 1
            continue
        seen.add(key)
        node_ids = tuple(sorted(nodes))
        out.append(Subgraph(
            nodes=node_ids,
            entities={n: graph.entities[n] for n in node_ids},
            events=tuple(graph.induced_events(node_ids)),
            seed_id=seed,
            parent_digest=parent,
        ))
    stats.emitted += len(out)
    if stats.dropped:
        logger.info("sampling dropped %s", dict(stats.dropped))
    return out


def extract_seeded_subgraph(graph: ProvenanceGraph, seeds, hops: int = 2) -> Subgraph:
    """Expand seeds to neighbouring seeds and processes within ``hops``.

    Hops are counted on retained nodes: stepping onto a process or another
    seed costs one hop, while passing through a file or socket that is not
    a seed costs nothing (that node is traversed but not kept). Provenance
    edges always touch a process, so pass-through nodes never chain.
    """
    if hops not in (2, 3):
        raise ConfigurationError("hops must be 2 or 3")
    seeds = list(dict.fromkeys(seeds))
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    for s in seeds:
        if s not in graph:
            raise NotFoundError(f"unknown seed id {s!r}")
    seed_set = set(seeds)

    def kept(nid):
        return nid in seed_set or graph.entities[nid].kind is EntityKind.PROCESS

    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    while queue:
        cur = queue.popleft()
        for nb in graph.adjacency[cur]:
            nd = dist[cur] + (1 if kept(nb) else 0)
            if nd > hops or nd >= dist.get(nb, hops + 1):
                continue
            dist[nb] = nd
            # 0-1 BFS: zero-cost steps go to the front
            if kept(nb):
                queue.append(nb)
            else:
                queue.appendleft(nb)
    nodes = sorted(n for n in dist if kept(n))
    label = seeds[0] if len(seeds) == 1 else ",".join(sorted(seeds))
    return Subgraph.induced(graph, nodes, seed_id=label)
