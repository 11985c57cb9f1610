"""Command-line interface: synth | pretrain | finetune | eval | fewshot | ablate | report."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .documents import EntitySchema, load_jsonl, save_jsonl
from .errors import DocmatchError
from .evaluation import (
    ModelPredictor,
    evaluate,
    pretrain_task_arms,
    run_ablation,
    run_few_shot,
)
from .model import ModelConfig, Vocabulary, build_model
from .synth import SynthConfig, default_schema, synthesize, vocabulary_words
from .training import (
    TrainConfig,
    config_hash,
    corpus_hash,
    finetune,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

USAGE_EXIT = 2


def load_config_file(path: str) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and '#' comments are skipped."""
    values: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DocmatchError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class Settings:
    """Config-file values overridden by repeatable --set key=value flags."""

    def __init__(self, args) -> None:
        self.values: dict[str, str] = {}
        if getattr(args, "config", None):
            if not Path(args.config).exists():
                raise _Usage(f"config file not found: {args.config}")
            self.values.update(load_config_file(args.config))
        for item in getattr(args, "set", None) or []:
            if "=" not in item:
                raise _Usage(f"--set expects key=value, got {item!r}")
            key, _, value = item.partition("=")
            self.values[key.strip()] = value.strip()

    def get(self, key: str, default):
        if key not in self.values:
            return default
        raw = self.values[key]
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw


class _Usage(Exception):
    """Bad invocation; exits with the usage code."""


def _schema_from(args) -> EntitySchema:
    if getattr(args, "schema", None):
        return EntitySchema.load(args.schema)
    return default_schema()


def _model_config(settings: Settings, schema: EntitySchema, vocab: Vocabulary) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(vocab),
        n_entity_types=len(schema),
        d=settings.get("d", 128),
        heads=settings.get("heads", 4),
        enc_layers=settings.get("enc_layers", 2),
        dec_layers=settings.get("dec_layers", 2),
        n_queries=settings.get("n_queries", 16),
        resampler=settings.get("resampler", "par"),
        resampler_layers=settings.get("resampler_layers", 2),
    )


def _train_config(settings: Settings, args, phase: str) -> TrainConfig:
    tasks = tuple(
        t for t in settings.get("tasks", "mtf,sod,sad").split(",") if t
    )
    return TrainConfig(
        phase=phase,
        matcher=getattr(args, "matcher", None) or settings.get("matcher", "seq"),
        lr=settings.get("lr", 2e-5),
        weight_decay=settings.get("weight_decay", 0.1),
        batch=args.batch if getattr(args, "batch", None) else None,
        max_steps=args.steps if getattr(args, "steps", None) else None,
        epochs=args.epochs if getattr(args, "epochs", None) else None,
        warmup_frac=settings.get("warmup_frac", 0.05),
        seed=args.seed,
        per_task=settings.get("per_task", 8),
        tasks=tasks,
        freeze_encoder=settings.get("freeze_encoder", False),
        deterministic=settings.get("deterministic", True),
        word_dropout=settings.get("word_dropout", 0.1),
    )


def _load_corpus(path: str):
    if not Path(path).exists():
        raise _Usage(f"corpus file not found: {path}")
    return load_jsonl(path)


def _build_or_load_model(args, settings, schema):
    if getattr(args, "init", None):
        model, _ = load_checkpoint(args.init)
        return model
    vocab = Vocabulary(vocabulary_words())
    return build_model(_model_config(settings, schema, vocab), vocab, schema, seed=args.seed)


def _write_train_outputs(args, model, result, train_cfg, docs) -> None:
    out = Path(args.out)
    meta = {
        "seed": train_cfg.seed,
        "config_hash": config_hash(train_cfg),
        "corpus_hash": corpus_hash(docs),
        "steps": result.steps,
        "final_loss": result.final_loss,
    }
    save_checkpoint(model, meta, out)
    with open(out / "train_log.jsonl", "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"checkpoint -> {out} ({result.steps} steps, final loss {result.final_loss:.4f})")


def cmd_synth(args) -> int:
    settings = Settings(args)
    schema = _schema_from(args)
    mix = {
        "horizontal": settings.get("mix_horizontal", 0.3),
        "vertical": settings.get("mix_vertical", 0.2),
        "table": settings.get("mix_table", 0.5),
    }
    cfg = SynthConfig(
        count=args.count,
        schema=schema,
        layout_mix=mix,
        jitter=settings.get("jitter", 3),
        page=(settings.get("page_w", 1000), settings.get("page_h", 1400)),
        field_dropout=settings.get("field_dropout", 0.15),
    )
    docs = synthesize(cfg, seed=args.seed)
    save_jsonl(docs, args.out)
    if args.schema_out:
        schema.save(args.schema_out)
    print(f"wrote {len(docs)} documents -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    settings = Settings(args)
    schema = _schema_from(args)
    docs = _load_corpus(args.corpus)
    model = _build_or_load_model(args, settings, schema)
    cfg = _train_config(settings, args, "pretrain")
    result = pretrain(model, docs, cfg)
    _write_train_outputs(args, model, result, cfg, docs)
    return 0


def cmd_finetune(args) -> int:
    settings = Settings(args)
    schema = _schema_from(args)
    docs = _load_corpus(args.corpus)
    model = _build_or_load_model(args, settings, schema)
    cfg = _train_config(settings, args, "finetune")
    result = finetune(model, docs, cfg)
    _write_train_outputs(args, model, result, cfg, docs)
    return 0


def cmd_eval(args) -> int:
    import time

    docs = _load_corpus(args.corpus)
    model, meta = load_checkpoint(args.checkpoint)
    started = time.perf_counter()
    report = evaluate(
        ModelPredictor(model),
        docs,
        condition=args.condition,
        mode=args.matcher,
        seed=args.seed,
        provenance=str(meta.get("config_hash", "")),
        strict_spans=args.strict_spans,
    )
    elapsed = time.perf_counter() - started
    Path(args.out).write_text(report.to_json())
    print(
        f"{args.matcher}/{args.condition}: P={report.precision:.4f} "
        f"R={report.recall:.4f} F1={report.f1:.4f} ({report.doc_count} docs) -> {args.out}"
    )
    n_params = sum(p.numel() for p in model.parameters())
    print(f"model: {n_params} parameters; throughput {report.doc_count / elapsed:.1f} docs/s")
    return 0


def cmd_fewshot(args) -> int:
    settings = Settings(args)
    schema = _schema_from(args)
    pool = _load_corpus(args.pool)
    eval_docs = _load_corpus(args.eval)
    vocab = Vocabulary(vocabulary_words())
    model_config = _model_config(settings, schema, vocab)
    init_state = None
    if args.init:
        init_model, _ = load_checkpoint(args.init)
        model_config = init_model.config
        vocab = init_model.vocab
        schema = init_model.schema
        init_state = init_model.state_dict()
    train_cfg = _train_config(settings, args, "finetune")
    shots = [int(s) for s in args.shots.split(",") if s]
    results = run_few_shot(
        pool, eval_docs, model_config, vocab, schema, train_cfg,
        shots=shots, folds=args.folds, seed=args.seed, init_state=init_state,
    )
    Path(args.out).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    for n in shots:
        r = results[str(n)]
        print(f"{n}-shot: {r['mean']:.4f} +/- {r['std']:.4f}  (folds: {args.folds})")
    return 0


def cmd_ablate(args) -> int:
    settings = Settings(args)
    schema = _schema_from(args)
    docs = _load_corpus(args.corpus)
    eval_docs = _load_corpus(args.eval)
    pre_docs = _load_corpus(args.pretrain_corpus) if args.pretrain_corpus else docs
    vocab = Vocabulary(vocabulary_words())
    base = {
        "model_config": _model_config(settings, schema, vocab),
        "vocab": vocab,
        "schema": schema,
        "pretrain_docs": pre_docs,
        "train_docs": docs,
        "eval_docs": eval_docs,
        "pretrain_config": replace(_train_config(settings, args, "pretrain"), max_steps=args.pretrain_steps),
        "finetune_config": replace(_train_config(settings, args, "finetune"), max_steps=args.steps or 100),
        "seed": args.seed,
    }
    if args.grid == "resampler":
        grid = {"pretrain": [False, True], "resampler": ["par", "vanilla", "none"],
                "tasks": [tuple(base["pretrain_config"].tasks)]}
    else:
        grid = {"arms": pretrain_task_arms(resampler=base["model_config"].resampler)}
    rows = run_ablation(grid, base)
    Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    width = max(len(r["tasks"]) for r in rows)
    print(f"{'PT':<4} {'resampler':<10} {'tasks':<{width}} {'F1':>8}  status")
    for r in rows:
        f1 = "-" if r["f1"] is None else f"{r['f1']:.4f}"
        print(f"{str(r['pretrain']):<4} {r['resampler']:<10} {r['tasks']:<{width}} {f1:>8}  {r['status']}")
    return 0


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.reports or []:
        rec = json.loads(Path(path).read_text())
        rows.append(
            {
                "source": Path(path).name,
                "mode": rec["mode"],
                "condition": rec["condition"],
                "precision": rec["precision"],
                "recall": rec["recall"],
                "f1": rec["f1"],
                "docs": rec["doc_count"],
            }
        )
    if rows:
        header = ["source", "mode", "condition", "precision", "recall", "f1", "docs"]
        lines = ["\t".join(header)]
        for r in rows:
            lines.append(
                "\t".join(
                    [r["source"], r["mode"], r["condition"], f"{r['precision']:.4f}",
                     f"{r['recall']:.4f}", f"{r['f1']:.4f}", str(r["docs"])]
                )
            )
        (outdir / "reports.txt").write_text("\n".join(lines) + "\n")
        (outdir / "reports.csv").write_text(
            "\n".join([",".join(header)] + [
                ",".join([r["source"], r["mode"], r["condition"], str(r["precision"]),
                          str(r["recall"]), str(r["f1"]), str(r["docs"])])
                for r in rows
            ]) + "\n"
        )
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [f"{r['mode']}/{r['condition']}\n{r['source']}" for r in rows]
        ax.bar(range(len(rows)), [r["f1"] for r in rows])
        ax.set_xticks(range(len(rows)), labels, fontsize=7)
        ax.set_ylabel("field F1")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        fig.savefig(outdir / "f1.png", dpi=120)
        plt.close(fig)
    if args.train_log:
        steps, losses = [], []
        with open(args.train_log) as fh:
            for line in fh:
                entry = json.loads(line)
                steps.append(entry["step"])
                losses.append(entry["loss"])
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(steps, losses)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        fig.tight_layout()
        fig.savefig(outdir / "loss.png", dpi=120)
        plt.close(fig)
    print(f"report artifacts -> {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docmatch",
        description="Train and evaluate a matching-based key information extractor "
        "on synthetic documents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_seed=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (repeatable)")
        if needs_seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic JSONL corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--schema", help="schema JSON (defaults to the built-in schema)")
    p.add_argument("--schema-out", help="also write the schema JSON here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pre-train on spatial instructions")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="start from an existing checkpoint")
    p.add_argument("--schema")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on extraction prompts")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="start from an existing checkpoint")
    p.add_argument("--schema")
    p.add_argument("--matcher", choices=["bio", "seq"])
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint with field-level F1")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--matcher", choices=["bio", "seq"], default="seq")
    p.add_argument("--condition", choices=["clean", "shuffled"], default="clean")
    p.add_argument("--strict-spans", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="few-shot episodes with mean +/- std per shot count")
    common(p)
    p.add_argument("--pool", required=True, help="JSONL corpus episodes are sampled from")
    p.add_argument("--eval", required=True, help="held-out JSONL corpus")
    p.add_argument("--shots", default="1,2,5,10")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--init", help="checkpoint to start every episode from")
    p.add_argument("--schema")
    p.add_argument("--matcher", choices=["bio", "seq"])
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("ablate", help="run a pretrain/resampler/task ablation grid")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--pretrain-corpus")
    p.add_argument("--grid", choices=["resampler", "tasks"], default="resampler")
    p.add_argument("--steps", type=int, help="fine-tune steps per arm")
    p.add_argument("--pretrain-steps", type=int, default=50)
    p.add_argument("--batch", type=int)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render tables and plots from reports and logs")
    common(p, needs_seed=False)
    p.add_argument("--reports", nargs="*", help="EvalReport JSON files")
    p.add_argument("--train-log", help="training log JSONL")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except DocmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
