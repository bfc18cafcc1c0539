"""Command-line pipeline orchestration.

Subcommands: ingest, train-link, enrich, train-writer, generate, eval.
Every command reads one config file (``--config`` flag, else the
KGWRITER_CONFIG environment variable, else pure defaults), writes its
artifacts under ``--out-dir``, and finishes by writing a run manifest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing upstream
artifact.
"""

import argparse
import os
import sys


from . import kg, linkpred, metrics, writer
from .config import ConfigError, load_config
from .kg import DataFormatError
from .manifest import RunClock, write_manifest
from .serialize import ModelFormatError

TASKS = ("title2abstract", "abstract2conclusion", "conclusion2title")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEPENDENCY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DependencyError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _require(path, hint):
    if not os.path.exists(path):
        raise DependencyError(f"missing {hint}: {path} (run the upstream command first)")
    return path


def _stopwords(cfg):
    if cfg.stopword_path:
        with open(cfg.stopword_path, encoding="utf-8") as fh:
            return {line.strip() for line in fh if line.strip()}
    return writer.default_stopwords()


def _echo_config(cfg, overrides):
    if overrides:
        pairs = ", ".join(f"{k}={v}" for k, v in sorted(overrides.items()))
        print(f"config overrides: {pairs}")


def _writer_model_path(model_dir, task):
    return os.path.join(model_dir, f"writer_{task}.bin")


# ------------------------------------------------------------------ commands

def cmd_ingest(args, cfg, overrides):
    clock = RunClock()
    g = kg.load_triples(_require(args.triples, "triples file"))
    inputs = {"triples": args.triples}
    n_sentences = 0
    if args.sentences:
        ctx = kg.load_sentences(_require(args.sentences, "sentences file"), g)
        n_sentences = len(ctx.sentences)
        inputs["sentences"] = args.sentences
    os.makedirs(args.out_dir, exist_ok=True)
    graph_path = os.path.join(args.out_dir, "graph.tsv")
    kg.serialize_graph(g, graph_path)
    print(f"ingested {g.n_entities} entities, {g.n_relations} relation subtypes, "
          f"{len(g.triples)} triples, {n_sentences} sentences")
    write_manifest(args.out_dir, "ingest", cfg, overrides, inputs, [graph_path], clock)
    return EXIT_OK


def cmd_train_link(args, cfg, overrides):
    clock = RunClock()
    g = kg.load_triples(_require(args.graph, "graph file"))
    ctx = kg.load_sentences(_require(args.sentences, "sentences file"), g)
    p = linkpred.init_link_params(
        g, ctx, seed=cfg.seed, heads=cfg.heads, head_hidden=cfg.head_hidden,
        entity_dim=cfg.entity_emb, text_emb=cfg.text_emb,
        context_hidden=cfg.context_hidden, alpha=cfg.leaky_relu_alpha,
        margin=cfg.margin)
    history = linkpred.train_margin(g, ctx, p, epochs=args.epochs,
                                    seed=cfg.seed, lr=cfg.learning_rate)
    for i, loss in enumerate(history):
        print(f"epoch {i:4d}  margin loss {loss:.6f}")
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "link_params.bin")
    linkpred.save_link_params(out, p)
    write_manifest(args.out_dir, "train-link", cfg, overrides,
                   {"graph": args.graph, "sentences": args.sentences}, [out], clock)
    return EXIT_OK


def cmd_enrich(args, cfg, overrides):
    clock = RunClock()
    g = kg.load_triples(_require(args.graph, "graph file"))
    ctx = kg.load_sentences(_require(args.sentences, "sentences file"), g)
    p = linkpred.load_link_params(_require(args.params, "trained link-predictor"))
    reps = linkpred.encode_all(g, ctx, p)
    enriched = linkpred.propagate_links(g, reps, cfg.similarity_threshold)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "graph_enriched.tsv")
    kg.serialize_graph(enriched, out)
    added = len(enriched.triples) - len(g.triples)
    print(f"enrichment added {added} predicted triples "
          f"(threshold {cfg.similarity_threshold})")
    write_manifest(args.out_dir, "enrich", cfg, overrides,
                   {"graph": args.graph, "sentences": args.sentences,
                    "params": args.params}, [out], clock)
    return EXIT_OK


def _build_training_pairs(records, cfg, graph):
    """Memories per pair: from the graph when given, else from the record's
    entity name list. Returns (pairs, entity_vocab)."""
    if graph is not None:
        entity_vocab = [(e.external_id, e.surface_name) for e in graph.entities]
        lexicon = kg.build_lexicon(graph)
        pairs = []
        for rec in records:
            src = rec["src"][:cfg.max_len]
            tgt = rec["tgt"][:cfg.max_len]
            matches = kg.match_title_entities(src, graph, lexicon)
            ids = list(dict.fromkeys(eid for eid, _ in matches))
            memories = [
                writer.MemoryEntry(eid, tuple(graph.entities[eid].surface_name.lower().split()),
                                   graph.entities[eid].surface_name,
                                   graph.entities[eid].external_id)
                for eid, _ in linkpred.related_entities(ids, graph, limit=10)]
            pairs.append(writer.TrainPair(src, tgt, memories))
        return pairs, entity_vocab
    names = []
    rows = {}
    for rec in records:
        for name in rec["entities"]:
            if name not in rows:
                rows[name] = len(names)
                names.append(name)
    entity_vocab = [("", n) for n in names]
    pairs = [
        writer.TrainPair(
            rec["src"][:cfg.max_len], rec["tgt"][:cfg.max_len],
            [writer.MemoryEntry(rows[n], tuple(n.lower().split()), n, "")
             for n in rec["entities"]])
        for rec in records]
    return pairs, entity_vocab


def cmd_train_writer(args, cfg, overrides):
    clock = RunClock()
    records = writer.read_corpus(_require(args.corpus, "corpus file"))
    if not records:
        raise DataFormatError(f"{args.corpus}: empty corpus")
    graph = kg.load_triples(_require(args.graph, "graph file")) if args.graph else None
    vocab = writer.build_vocabulary(
        [r["src"] for r in records] + [r["tgt"] for r in records],
        oov_floor=cfg.oov_floor, stop_words=_stopwords(cfg))
    pairs, entity_vocab = _build_training_pairs(records, cfg, graph)
    dims = writer.WriterDims(
        vocab_size=len(vocab), emb_dim=cfg.text_emb, dec_hidden=cfg.decoder_hidden,
        attn_hidden=cfg.attn_hidden, init_hops=cfg.init_hops,
        step_hops=cfg.step_hops, n_memory=len(entity_vocab), max_len=cfg.max_len)
    params = writer.init_writer_params(dims, entity_vocab, seed=cfg.seed)
    writer.train_writer(
        pairs, params, vocab, epochs=args.epochs, seed=cfg.seed,
        lr=cfg.learning_rate, coverage_lambda=cfg.coverage_lambda,
        stop_ppl=args.stop_ppl,
        log_fn=lambda e: print(
            f"epoch {e['epoch']:4d}  loss {e['train_loss']:.4f}  "
            f"train-ppl {e['train_ppl']:.4f}"
            + (f"  ppl {e['ppl']:.4f}" if "ppl" in e else "")))
    os.makedirs(args.out_dir, exist_ok=True)
    out = _writer_model_path(args.out_dir, args.task)
    writer.save_writer_model(out, writer.WriterModel(args.task, vocab, params))
    inputs = {"corpus": args.corpus}
    if args.graph:
        inputs["graph"] = args.graph
    write_manifest(args.out_dir, f"train-writer-{args.task}", cfg, overrides,
                   inputs, [out], clock)
    return EXIT_OK


def cmd_generate(args, cfg, overrides):
    clock = RunClock()
    graph = kg.load_triples(_require(args.graph, "enriched graph"))
    models = {}
    for task in TASKS:
        path = _writer_model_path(args.model_dir, task)
        models[task] = writer.load_writer_model(_require(path, f"{task} writer model"))
    titles = []
    if args.title:
        titles.append(args.title.lower().split())
    if args.titles:
        with open(_require(args.titles, "titles file"), encoding="utf-8") as fh:
            titles.extend(line.lower().split() for line in fh if line.strip())
    if not titles:
        raise UsageError("generate needs --title or --titles")
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "generated.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for title in titles:
            rec = writer.generate_chain(
                title, graph, models, limit=args.related_limit,
                beam=cfg.beam, max_len=cfg.max_len,
                second_abstract=args.second_abstract)
            fh.write(rec.to_json() + "\n")
            print(f"title: {' '.join(title)}")
            print(f"  abstract: {' '.join(rec.abstract)}")
            print(f"  conclusion/future work: {' '.join(rec.conclusion_future_work)}")
            print(f"  new title: {' '.join(rec.new_title)}")
            if rec.error:
                print(f"  error: {rec.error}")
    inputs = {"graph": args.graph}
    for task in TASKS:
        inputs[f"model_{task}"] = _writer_model_path(args.model_dir, task)
    write_manifest(args.out_dir, "generate", cfg, overrides, inputs, [out], clock)
    return EXIT_OK


def _read_tokens(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().lower().split()


def cmd_eval(args, cfg, overrides):
    clock = RunClock()
    inputs = {}
    reports = []
    if args.metric == "overlap":
        src = _read_tokens(_require(args.input_file, "human input file"))
        out = _read_tokens(_require(args.output_file, "system output file"))
        inputs = {"input": args.input_file, "output": args.output_file}
        print(f"{'n':>3} {'overlap %':>10}")
        values = {}
        for n in range(1, args.max_n + 1):
            res = metrics.ngram_overlap(src, out, n)
            label = f"{res.percent:10.2f}" if res.defined else f"{'undef':>10}"
            print(f"{n:>3} {label}")
            values[str(n)] = res.percent if res.defined else None
        reports.append(metrics.MetricReport(
            "ngram_overlap", values, corpus=inputs, parameters={"max_n": args.max_n}))
    elif args.metric == "bleu":
        cand = _read_tokens(_require(args.candidate_file, "candidate file"))
        ref = _read_tokens(_require(args.reference_file, "reference file"))
        inputs = {"candidate": args.candidate_file, "reference": args.reference_file}
        br = metrics.bleu_rouge(cand, ref)
        header = " ".join(f"{f'BLEU{i}':>8}" for i in range(1, 5)) + f" {'ROUGE-L':>8}"
        row = " ".join(f"{v:8.4f}" for v in br.bleu) + f" {br.rouge_l:8.4f}"
        print(header)
        print(row)
        reports.append(metrics.MetricReport(
            "bleu_rouge",
            {**{f"bleu{i + 1}": v for i, v in enumerate(br.bleu)}, "rouge_l": br.rouge_l},
            corpus=inputs, parameters={"max_n": 4}))
    elif args.metric == "repetition":
        tokens = _read_tokens(_require(args.text_file, "text file"))
        with open(_require(args.lexicon_file, "entity lexicon file"), encoding="utf-8") as fh:
            lexicon = [line.strip().lower() for line in fh if line.strip()]
        inputs = {"text": args.text_file, "lexicon": args.lexicon_file}
        rate = metrics.repetition_rate(tokens, entity_lexicon=lexicon)
        print(f"repeated-entity sentence rate: {rate:.4f}")
        reports.append(metrics.MetricReport("repetition_rate", {"rate": rate}, corpus=inputs))
    else:  # perplexity
        model = writer.load_writer_model(_require(args.model, "writer model"))
        records = writer.read_corpus(_require(args.corpus, "corpus file"))
        graph = kg.load_triples(_require(args.graph, "graph file")) if args.graph else None
        pairs, _ = _build_training_pairs(records, cfg, graph)
        inputs = {"model": args.model, "corpus": args.corpus}
        if args.graph:
            inputs["graph"] = args.graph
        mems_by_src = {tuple(p.src): p.memories for p in pairs}

        def provider(src, tgt):
            pair = writer.TrainPair(list(src), list(tgt), mems_by_src[tuple(src)])
            return writer.gold_token_probs(model.params, model.vocab, pair)

        value = metrics.perplexity(provider, [(p.src, p.tgt) for p in pairs])
        print(f"perplexity: {value:.6f}")
        reports.append(metrics.MetricReport("perplexity", {"perplexity": value},
                                            corpus={"corpus": args.corpus}))
    outputs = []
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        out = os.path.join(args.out_dir, f"metric_{args.metric}.json")
        with open(out, "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(r.to_json() + "\n")
        outputs.append(out)
        write_manifest(args.out_dir, f"eval-{args.metric}", cfg, overrides,
                       inputs, outputs, clock)
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser():
    parser = _Parser(prog="kgwriter", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="config file path (or set KGWRITER_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and normalize triples/sentences")
    p.add_argument("--triples", required=True)
    p.add_argument("--sentences")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train-link", help="train the link predictor")
    p.add_argument("--graph", required=True)
    p.add_argument("--sentences", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("enrich", help="propagate links into an enriched graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--sentences", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train-writer", help="train one writer task")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--corpus", required=True)
    p.add_argument("--graph", help="enriched graph for per-pair related entities")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--stop-ppl", type=float)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("generate", help="run the incremental writing chain")
    p.add_argument("--graph", required=True)
    p.add_argument("--model-dir", required=True)
    p.add_argument("--title")
    p.add_argument("--titles", help="file with one title per line")
    p.add_argument("--related-limit", type=int, default=10)
    p.add_argument("--second-abstract", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="automatic metrics")
    p.add_argument("--metric", required=True,
                   choices=("overlap", "bleu", "repetition", "perplexity"))
    p.add_argument("--input-file")
    p.add_argument("--output-file")
    p.add_argument("--max-n", type=int, default=4)
    p.add_argument("--candidate-file")
    p.add_argument("--reference-file")
    p.add_argument("--text-file")
    p.add_argument("--lexicon-file")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--graph")
    p.add_argument("--out-dir")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "train-link": cmd_train_link,
    "enrich": cmd_enrich,
    "train-writer": cmd_train_writer,
    "generate": cmd_generate,
    "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, overrides = load_config(args.config)
        _echo_config(cfg, overrides)
        return COMMANDS[args.command](args, cfg, overrides)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (DataFormatError, ConfigError, ModelFormatError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
