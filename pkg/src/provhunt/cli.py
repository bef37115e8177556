"""Command-line entry point.

Data goes to files (or standard output for hunt/eval without ``--out``);
every diagnostic goes to standard error. Exit codes: 0 success,
1 validation error or bad usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from provhunt import __version__
from provhunt.errors import NotFoundError, ProvHuntError, ValidationError

logger = logging.getLogger("provhunt")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_options(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="pipeline config (TOML or JSON)")
    parser.add_argument("--seed", type=int, default=default, help="seed for sampling and training")
    parser.add_argument("--workdir", default=default, help="artifact directory")
    parser.add_argument("--offline", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="never contact an LLM; use deterministic fallbacks")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="provhunt", description="Cross-modal threat hunting over provenance graphs.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_options(p, suppress=True)
        p.add_argument("--out", help="output path (default: content-addressed file in the workdir)")
        return p

    p = add("ingest", "audit log JSONL -> provenance graph JSON")
    p.add_argument("--logs", help="audit log (JSON lines)")
    p.add_argument("--dedup", action="store_true", help="collapse identical events")
    p.add_argument("--unknown-action", choices=("reject", "coerce"), default="reject")

    p = add("sample", "graph -> socket-seeded activity subgraphs (JSONL)")
    p.add_argument("--graph")
    p.add_argument("--min-nodes", type=int)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--dedup", action="store_true")

    p = add("synth", "subgraphs -> paired samples (JSONL)")
    p.add_argument("--graphs")

    p = add("denoise", "raw CTI corpus -> filtered, denoised reports (JSONL)")
    p.add_argument("--corpus")
    p.add_argument("--patterns", help="ioc:/ttp: regex file (default: built-in)")
    p.add_argument("--no-filter", action="store_true", help="skip IoC/TTP corpus filtering")

    p = add("train", "paired samples -> checkpoint and loss log")
    p.add_argument("--pairs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--d", type=int, help="model width")

    p = add("index", "reports -> vector index")
    p.add_argument("--checkpoint")
    p.add_argument("--reports", help="report JSONL (denoised corpus or paired samples)")

    p = add("hunt", "subgraphs -> hunt report JSONL")
    p.add_argument("--index")
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", help="report JSONL used to build the index")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--candidates", action="store_true", help="also emit every scored candidate")

    p = add("eval", "hunt decisions + ground truth -> metrics JSON")
    p.add_argument("--decisions", required=True)
    p.add_argument("--truth", required=True)

    p = add("validate-alerts", "alert subgraphs + labels -> AFR/TRR JSON")
    p.add_argument("--alerts", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--index")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    return parser


# -- helpers ---------------------------------------------------------------

class Context:
    def __init__(self, args):
        from provhunt.pipeline import PipelineConfig, Workdir

        self.args = args
        cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.workdir:
            cfg = replace(cfg, workdir=args.workdir)
        self.cfg = cfg
        self.offline = bool(args.offline)
        self.workdir = Workdir(cfg.workdir)

    def need(self, value, stage: str, what: str) -> str:
        """Explicit path, else the latest artifact of ``stage`` in the workdir."""
        path = value or self.workdir.latest(stage)
        if not path:
            raise ValidationError(f"no {what} given and none recorded in {self.workdir.root}")
        if not Path(path).exists():
            raise ValidationError(f"{what} not found: {path}")
        return str(path)

    def llm(self):
        if self.offline:
            return None
        from provhunt.llm import LlmClient

        s = self.cfg.llm
        return LlmClient.from_env(model=s.model, temperature=s.temperature, timeout=s.timeout,
                                  max_concurrency=s.max_concurrency)

    def emit(self, stage: str, data: bytes, suffix: str, inputs: dict, extra=None, stdout=False) -> Path | None:
        from provhunt.pipeline import StageRecord, sha256_bytes, sha256_file

        out = self.args.out
        if stdout and out is None:
            sys.stdout.write(data.decode("utf-8"))
            return None
        path = self.workdir.store(stage, data, suffix, out)
        rec = StageRecord(output=str(path), digest=sha256_bytes(data),
                          inputs={k: sha256_file(v) for k, v in inputs.items()},
                          seed=self.cfg.seed, offline=self.offline, extra=extra or {})
        self.workdir.record(stage, rec, self.cfg.digest())
        logger.info("%s: wrote %s", stage, path)
        print(path)
        return path


def _load_model(ctx, checkpoint):
    from provhunt.neural.checkpoint import load_checkpoint

    model, _ = load_checkpoint(ctx.need(checkpoint, "train", "checkpoint"))
    return model


def _retrieval(ctx, args):
    from provhunt.hunting import RetrievalConfig

    r = ctx.cfg.retrieval
    return RetrievalConfig(k=args.k if args.k is not None else r.k, lam=args.lam if args.lam is not None else r.lam)


# -- subcommands -----------------------------------------------------------

def cmd_ingest(ctx, args):
    from provhunt.graph import ingest_audit_log

    logs = args.logs or ctx.cfg.logs
    if not logs or not Path(logs).exists():
        raise ValidationError(f"audit log not found: {logs}")
    with open(logs, encoding="utf-8") as fh:
        graph = ingest_audit_log(fh, dedup=args.dedup, unknown_action=args.unknown_action)
    logger.info("ingested %d entities, %d events", len(graph), len(graph.events))
    ctx.emit("ingest", graph.to_json().encode("utf-8"), ".json", {"logs": logs})


def cmd_sample(ctx, args):
    from provhunt.graph import ProvenanceGraph
    from provhunt.sampling import SamplingStats, sample_activity_subgraphs

    path = ctx.need(args.graph, "ingest", "graph")
    graph = ProvenanceGraph.from_json(Path(path).read_text(encoding="utf-8"))
    scfg = ctx.cfg.sampling
    changes = {k: v for k, v in (("min_nodes", args.min_nodes), ("max_nodes", args.max_nodes)) if v is not None}
    if args.dedup:
        changes["dedup"] = True
    scfg = replace(scfg, **changes)
    stats = SamplingStats()
    subgraphs = sample_activity_subgraphs(graph, scfg, stats)
    logger.info("sampled %d of %d seeds; dropped %s", stats.emitted, stats.seeds, dict(stats.dropped))
    data = "".join(sg.to_json() + "\n" for sg in subgraphs).encode("utf-8")
    ctx.emit("sample", data, ".jsonl", {"graph": path}, {"dropped": dict(stats.dropped), "emitted": stats.emitted})


def cmd_synth(ctx, args):
    from provhunt.graph import load_subgraphs
    from provhunt.synthesis import synthesize_pairs

    path = ctx.need(args.graphs, "sample", "subgraph file")
    client = ctx.llm()
    if client is None:
        logger.info("synth: template engine (offline or no LLM configured)")
    pairs = synthesize_pairs(load_subgraphs(path), client, ctx.cfg.llm.max_concurrency)
    data = "".join(json.dumps(p.to_dict(), ensure_ascii=False) + "\n" for p in pairs).encode("utf-8")
    ctx.emit("synth", data, ".jsonl", {"graphs": path}, {"pairs": len(pairs)})


def cmd_denoise(ctx, args):
    from provhunt.denoise import CorpusRules, denoise_batch, denoised_jsonl, filter_corpus, load_corpus

    corpus = args.corpus or ctx.cfg.corpus
    if not corpus or not Path(corpus).exists():
        raise ValidationError(f"CTI corpus not found: {corpus}")
    raws = load_corpus(corpus)
    if not args.no_filter:
        rules = CorpusRules.from_file(args.patterns) if args.patterns else CorpusRules.default()
        kept = filter_corpus(raws, rules)
        logger.info("corpus filter kept %d of %d reports", len(kept), len(raws))
        raws = kept
    items = denoise_batch(raws, ctx.llm(), ctx.cfg.llm.max_concurrency)
    ctx.emit("denoise", denoised_jsonl(items).encode("utf-8"), ".jsonl", {"corpus": corpus}, {"reports": len(items)})


def cmd_train(ctx, args):
    import torch

    from provhunt.neural.checkpoint import checkpoint_bytes
    from provhunt.synthesis import PairedSample
    from provhunt.graph import read_jsonl
    from provhunt.training import train
    from provhunt.training.trainer import write_loss_log

    path = ctx.need(args.pairs, "synth", "paired-sample file")
    pairs = [PairedSample.from_dict(r) for r in read_jsonl(path)]
    tcfg, mcfg = ctx.cfg.train, ctx.cfg.model
    tchanges = {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size), ("lr", args.lr))
                if v is not None}
    if "epochs" in tchanges and tcfg.warmup_epochs > tchanges["epochs"]:
        tchanges["warmup_epochs"] = max(0, tchanges["epochs"] * 7 // 100)
    tcfg = replace(tcfg, **tchanges)
    if args.d is not None:
        mcfg = replace(mcfg, d=args.d)
    torch.set_num_threads(1)  # fixed thread count keeps reductions bitwise stable
    result = train(pairs, tcfg, mcfg)
    meta = {"seed": tcfg.seed, "train_config": tcfg.to_dict()}
    ck = checkpoint_bytes(result.model, meta)
    ck_path = ctx.emit("train", ck, ".ckpt", {"pairs": path}, {"epochs": tcfg.epochs})
    log_path = ck_path.with_name(ck_path.stem + ".loss.csv")
    write_loss_log(log_path, result.log)
    logger.info("train: loss log %s", log_path)


def cmd_index(ctx, args):
    import torch

    from provhunt.hunting import build_index
    from provhunt.pipeline import load_report_texts

    torch.set_num_threads(1)
    ck = ctx.need(args.checkpoint, "train", "checkpoint")
    reports = ctx.need(args.reports, "denoise", "report file")
    model = _load_model(ctx, ck)
    texts = load_report_texts(reports)
    index = build_index(list(texts), list(texts.values()), model, normalize=ctx.cfg.train.normalize)
    ctx.emit("index", index.to_bytes(), ".idx", {"checkpoint": ck, "reports": reports},
             {"reports_path": str(reports), "checkpoint_path": str(ck)})


def _hunt_inputs(ctx, args):
    from provhunt.hunting import VectorIndex
    from provhunt.pipeline import load_report_texts

    index_path = ctx.need(args.index, "index", "index")
    rec = ctx.workdir.manifest()["stages"].get("index", {}).get("extra", {})
    ck = ctx.need(args.checkpoint or rec.get("checkpoint_path"), "train", "checkpoint")
    corpus = ctx.need(args.corpus or rec.get("reports_path"), "denoise", "report corpus")
    index = VectorIndex.load(index_path)
    texts = load_report_texts(corpus)
    missing = [i for i in index.ids if i not in texts]
    if missing:
        raise ValidationError(f"index ids missing from corpus, e.g. {missing[0]!r}")
    return index_path, ck, corpus, _load_model(ctx, ck), index, texts


def cmd_hunt(ctx, args):
    import torch

    from provhunt.graph import load_subgraphs
    from provhunt.hunting import hunt_many

    torch.set_num_threads(1)
    index_path, ck, corpus, model, index, texts = _hunt_inputs(ctx, args)
    graphs = ctx.need(args.graphs, "sample", "subgraph file")
    decisions = hunt_many(model, index, load_subgraphs(graphs), texts, _retrieval(ctx, args))
    data = "".join(json.dumps(d.to_dict(include_candidates=args.candidates)) + "\n" for d in decisions)
    ctx.emit("hunt", data.encode("utf-8"), ".jsonl",
             {"index": index_path, "checkpoint": ck, "corpus": corpus, "graphs": graphs}, stdout=True)


def cmd_eval(ctx, args):
    from provhunt.hunting import classify, compute_metrics
    from provhunt.pipeline import load_decisions, load_truth

    for p in (args.decisions, args.truth):
        if not Path(p).exists():
            raise ValidationError(f"file not found: {p}")
    counts, outcomes = classify(load_decisions(args.decisions), load_truth(args.truth))
    out = compute_metrics(counts).to_dict()
    out["outcomes"] = [o.to_dict() for o in outcomes]
    data = (json.dumps(out, indent=2) + "\n").encode("utf-8")
    ctx.emit("eval", data, ".json", {"decisions": args.decisions, "truth": args.truth}, stdout=True)


def cmd_validate_alerts(ctx, args):
    import torch

    from provhunt.graph import load_subgraphs
    from provhunt.pipeline import load_alert_labels, validate_alerts

    torch.set_num_threads(1)
    for p in (args.alerts, args.labels):
        if not Path(p).exists():
            raise ValidationError(f"file not found: {p}")
    index_path, ck, corpus, model, index, texts = _hunt_inputs(ctx, args)
    metrics, verdicts = validate_alerts(load_subgraphs(args.alerts), model, index, texts,
                                        load_alert_labels(args.labels), _retrieval(ctx, args))
    out = metrics.to_dict()
    out["alerts"] = verdicts
    data = (json.dumps(out, indent=2) + "\n").encode("utf-8")
    ctx.emit("validate-alerts", data, ".json",
             {"alerts": args.alerts, "labels": args.labels, "index": index_path}, stdout=True)


COMMANDS = {
    "ingest": cmd_ingest, "sample": cmd_sample, "synth": cmd_synth, "denoise": cmd_denoise,
    "train": cmd_train, "index": cmd_index, "hunt": cmd_hunt, "eval": cmd_eval,
    "validate-alerts": cmd_validate_alerts,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        COMMANDS[args.command](ctx, args)
    except (ValidationError, NotFoundError) as exc:
        print(f"provhunt {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ProvHuntError, OSError, RuntimeError) as exc:
        print(f"provhunt {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
