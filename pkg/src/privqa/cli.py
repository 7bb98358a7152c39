"""Command-line interface.

Subcommands mirror the pipeline stages: ingest source data, extract and
budget keyword disclosures, build prompts, generate and parse contexts,
train and evaluate the scorer, and run the multi-stage experiments (ood,
sweep, compare, report). Every experiment command accepts --config pointing
at a JSON file of option defaults; explicit flags win over the file.

Exit codes: 0 success, 1 user error (bad arguments or inputs), 2 internal
error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from privqa import __version__
from privqa.contexts import CONTEXT_HEAD, ContextView, ParseError, parse_generation
from privqa.corpus import (
    INGEST_FORMATS,
    AugmentedInstance,
    DatasetFormatError,
    ingest_records,
    load_augmented,
    load_dataset,
    write_augmented,
    write_dataset,
)
from privqa.gateway import (
    MODES,
    PROMPT_STYLE,
    Gateway,
    GatewayError,
    GenerationRequest,
    HttpTransport,
)
from privqa.harness import (
    REGIMES,
    EvalReport,
    ExperimentConfig,
    HarnessError,
    PipelineProvider,
    accuracy,
    build_inputs,
    config_digest,
    eval_view,
    render_report_table,
    run_budget_sweep,
    run_ood,
    run_representation_compare,
    to_train_item,
    write_report,
)
from privqa.keywords import (
    METHOD_NER,
    METHODS,
    ExtractionError,
    corpus_budget_report,
    extract_ner,
    extract_random_span,
    extract_random_words,
    format_budget,
    load_gazetteer,
    load_keyword_sets,
    save_keyword_sets,
    stable_seed,
    subsample_keywords,
)
from privqa.plugin import PluginError
from privqa.promptkit import PromptError, build_prompt, bundled_demo_path, load_demonstrations
from privqa.scorer import ScorerError, load_model, save_model, score_texts, train

USER_ERRORS = (
    DatasetFormatError,
    ExtractionError,
    ParseError,
    PromptError,
    GatewayError,
    HarnessError,
    ScorerError,
    PluginError,
    OSError,
    json.JSONDecodeError,
)


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2; here that means an internal error, so
    usage problems are remapped to 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fill(args: argparse.Namespace, **defaults) -> None:
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _apply_config_file(args: argparse.Namespace) -> None:
    path = getattr(args, "config", None)
    if not path:
        return
    raw = Path(path).read_text(encoding="utf-8")
    cfg = json.loads(raw)
    if not isinstance(cfg, dict):
        raise HarnessError(f"config file {path} must hold a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    _fill(
        args,
        regime="FTC",
        view="Full",
        ratio=1.0,
        method=METHOD_NER,
        seed=0,
        learning_rate=0.05,
        batch_size=8,
        max_epochs=100,
        warmup_steps=200,
        early_stop_patience=5,
        weight_decay=0.01,
        dim=2**18,
        hash_seed=17,
        model="gpt-3.5-turbo",
        mode="replay",
        cache="",
        demos="",
        gazetteer="",
    )
    return ExperimentConfig(
        regime=args.regime,
        view=args.view,
        ratio=float(args.ratio),
        method=args.method,
        seed=int(args.seed),
        learning_rate=float(args.learning_rate),
        batch_size=int(args.batch_size),
        max_epochs=int(args.max_epochs),
        warmup_steps=int(args.warmup_steps),
        early_stop_patience=int(args.early_stop_patience),
        weight_decay=float(args.weight_decay),
        featurizer_dim=int(args.dim),
        hash_seed=int(args.hash_seed),
        model_id=args.model,
        mode=args.mode,
        cache_path=args.cache,
        demo_file=args.demos,
        gazetteer_file=args.gazetteer,
    )


def _load_demos(spec: str):
    p = Path(spec)
    if p.exists():
        return load_demonstrations(p)
    return load_demonstrations(bundled_demo_path(spec))


# ---------------------------------------------------------------------------
# Data commands


def _cmd_ingest(args) -> int:
    dataset = ingest_records(args.input, args.format, args.dataset, args.split)
    write_dataset(dataset, args.output)
    print(f"ingested {len(dataset)} instances -> {args.output}")
    return 0


def _cmd_extract(args) -> int:
    _fill(args, ratio=1.0, seed=0)
    dataset = load_dataset(args.data)
    kmap = {}
    if args.method == METHOD_NER:
        if not args.gazetteer:
            raise ExtractionError("entity extraction needs --gazetteer")
        gazetteer = load_gazetteer(args.gazetteer)
        for inst in dataset.instances:
            ks = extract_ner(inst.question, gazetteer)
            if args.ratio < 1.0 and ks.keywords:
                ks = subsample_keywords(ks, args.ratio, stable_seed(args.seed, inst.id))
            kmap[inst.id] = ks
    else:
        extractor = {
            "RandomSpan": extract_random_span,
            "RandomWords": extract_random_words,
        }[args.method]
        for inst in dataset.instances:
            kmap[inst.id] = extractor(inst.question, args.ratio, stable_seed(args.seed, inst.id))
    save_keyword_sets(kmap, args.output)
    covered = sum(1 for ks in kmap.values() if ks.keywords)
    print(f"extracted keywords for {covered}/{len(dataset)} instances -> {args.output}")
    return 0


def _cmd_budget(args) -> int:
    dataset = load_dataset(args.data)
    kmap = load_keyword_sets(args.keywords)
    report = corpus_budget_report(dataset, kmap)
    print(f"avg keyword words: {report.avg_keyword_words:.2f}")
    print(f"avg question words: {report.avg_question_words:.2f}")
    print(f"privacy budget: {format_budget(report.budget)}")
    return 0


def _cmd_prompt(args) -> int:
    dataset = load_dataset(args.data)
    kmap = load_keyword_sets(args.keywords)
    demos = _load_demos(args.demos)
    inst = dataset.by_id().get(args.id)
    if inst is None:
        raise DatasetFormatError(f"no instance with id {args.id!r}")
    if inst.id not in kmap:
        raise ExtractionError(f"no keywords for instance {args.id!r}")
    prompt = build_prompt(demos, kmap[inst.id].keywords, inst.choices, query_id=inst.id)
    print(prompt.text)
    return 0


def _cmd_generate(args) -> int:
    _fill(args, mode="replay", model="gpt-3.5-turbo", api_url="", credential_env="PRIVQA_API_KEY")
    dataset = load_dataset(args.data)
    kmap = load_keyword_sets(args.keywords)
    demos = _load_demos(args.demos)
    mock = None
    if args.completions:
        mock = json.loads(Path(args.completions).read_text(encoding="utf-8"))
    transport = None
    if args.mode == "live":
        if not args.api_url:
            raise GatewayError("live mode needs --api-url")
        transport = HttpTransport(args.api_url, credential_env=args.credential_env)
    gateway = Gateway(args.cache, transport=transport, mock_completions=mock)
    augmented = []
    for inst in dataset.instances:
        if inst.id not in kmap:
            raise ExtractionError(f"no keywords for instance {inst.id!r}")
        prompt = build_prompt(demos, kmap[inst.id].keywords, inst.choices, query_id=inst.id)
        record = gateway.complete(GenerationRequest(model_id=args.model, prompt=prompt), args.mode)
        text = record.completion
        if CONTEXT_HEAD not in text:
            text = CONTEXT_HEAD + text
        try:
            parsed = parse_generation(text, inst.labels())
        except ParseError as exc:
            raise HarnessError(f"instance {inst.id!r}: {exc}") from exc
        augmented.append(
            AugmentedInstance(instance=inst, context=parsed, generation_id=record.cache_key)
        )
    write_augmented(augmented, args.output)
    print(f"generated {len(augmented)} contexts -> {args.output}")
    return 0


def _cmd_parse(args) -> int:
    dataset = load_dataset(args.data)
    by_id = dataset.by_id()
    augmented = []
    with Path(args.input).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            inst = by_id.get(str(rec.get("id")))
            if inst is None:
                raise DatasetFormatError(f"{args.input}:{lineno}: unknown instance id {rec.get('id')!r}")
            text = str(rec.get("completion", ""))
            if CONTEXT_HEAD not in text:
                text = CONTEXT_HEAD + text
            try:
                parsed = parse_generation(text, inst.labels())
            except ParseError as exc:
                raise HarnessError(f"{args.input}:{lineno}: instance {inst.id!r}: {exc}") from exc
            augmented.append(
                AugmentedInstance(
                    instance=inst,
                    context=parsed,
                    generation_id=str(rec.get("generation_id", "")),
                )
            )
    write_augmented(augmented, args.output)
    print(f"parsed {len(augmented)} generations -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# Model commands


def _cmd_train(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    train_aug = load_augmented(args.train)
    dev_aug = load_augmented(args.dev)
    train_inputs = build_inputs(train_aug, cfg.regime, cfg.context_view())
    dev_inputs = build_inputs(dev_aug, "FTC", eval_view(cfg))
    model, tlog = train(
        cfg.train_config(),
        [to_train_item(ci) for ci in train_inputs],
        [to_train_item(ci) for ci in dev_inputs],
        cfg.featurizer(),
    )
    save_model(model, args.checkpoint)
    if cfg.regime == "FTCR":
        admitted = sum(1 for ci in train_inputs if ci.used_context)
        print(f"context admitted for {admitted}/{len(train_inputs)} training instances")
    print(
        f"best dev accuracy {tlog.best_dev_accuracy * 100:.2f}% at epoch {tlog.best_epoch}"
        f" -> {args.checkpoint}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    model = load_model(args.checkpoint)
    augmented = load_augmented(args.data)
    inputs = build_inputs(augmented, "FTC", eval_view(cfg))
    preds = {}
    gold = {}
    for ci in inputs:
        sv = score_texts(model, ci.labels, ci.texts)
        preds[ci.id] = ci.labels[int(np.argmax(sv.probs))]
        gold[ci.id] = ci.gold
    acc = accuracy(preds, gold)
    print(f"accuracy: {acc * 100:.2f}% ({round(acc * len(gold))}/{len(gold)})")
    if args.report:
        report = EvalReport(
            config=asdict(cfg),
            dataset={"name": "eval", "split": "eval", "sizes": {"eval": len(gold)}},
            metrics={"accuracy": acc, "n": len(gold), "n_correct": round(acc * len(gold))},
            budget=None,
            ftcr=None,
            provenance={
                "config_digest": config_digest(cfg),
                "cache_digest": "",
                "code_version": __version__,
                "prompt_style": PROMPT_STYLE,
            },
            predictions=preds,
        )
        write_report(report, args.report)
        print(f"wrote report -> {args.report}")
    return 0


def _cmd_ood(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    train_aug = load_augmented(args.train)
    dev_aug = load_augmented(args.dev)
    target_aug = load_augmented(args.target)
    train_inputs = build_inputs(train_aug, cfg.regime, cfg.context_view())
    dev_inputs = build_inputs(dev_aug, "FTC", eval_view(cfg))
    model, tlog = train(
        cfg.train_config(),
        [to_train_item(ci) for ci in train_inputs],
        [to_train_item(ci) for ci in dev_inputs],
        cfg.featurizer(),
    )
    preds = {}
    gold = {}
    for ci in build_inputs(target_aug, "FTC", eval_view(cfg)):
        sv = score_texts(model, ci.labels, ci.texts)
        preds[ci.id] = ci.labels[int(np.argmax(sv.probs))]
        gold[ci.id] = ci.gold
    acc = accuracy(preds, gold)
    print(
        f"transfer accuracy: {acc * 100:.2f}% ({round(acc * len(gold))}/{len(gold)});"
        f" dev {tlog.best_dev_accuracy * 100:.2f}%"
    )
    if args.checkpoint:
        save_model(model, args.checkpoint)
        print(f"saved checkpoint -> {args.checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# Experiment commands


def _synthetic_setup(args):
    from privqa.synthetic import SyntheticContextProvider, SyntheticSpec, build_corpus

    _fill(args, seed=0, train_size=500, dev_size=200, test_size=200)
    spec = SyntheticSpec(
        seed=int(args.seed),
        train_size=int(args.train_size),
        dev_size=int(args.dev_size),
        test_size=int(args.test_size),
    )
    return build_corpus(spec), SyntheticContextProvider(spec)


def _pipeline_setup(args, cfg: ExperimentConfig):
    datasets = {
        "train": load_dataset(args.data_train),
        "dev": load_dataset(args.data_dev),
        "test": load_dataset(args.data_test),
    }
    demos = _load_demos(cfg.demo_file) if cfg.demo_file else None
    if demos is None:
        raise HarnessError("pipeline runs need --demos")
    gazetteer = load_gazetteer(cfg.gazetteer_file) if cfg.gazetteer_file else None
    mock = None
    if getattr(args, "completions", None):
        mock = json.loads(Path(args.completions).read_text(encoding="utf-8"))
    if not cfg.cache_path:
        raise HarnessError("pipeline runs need --cache")
    gateway = Gateway(cfg.cache_path, mock_completions=mock)
    provider = PipelineProvider(
        gateway, demos, gazetteer=gazetteer, model_id=cfg.model_id, mode=cfg.mode
    )
    return datasets, provider


def _cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    if args.synthetic:
        datasets, provider = _synthetic_setup(args)
    else:
        datasets, provider = _pipeline_setup(args, cfg)
    ratios = tuple(float(r) for r in args.ratios.split(",")) if args.ratios else (0.25, 0.5, 0.75, 1.0)
    reports = run_budget_sweep(cfg, datasets, provider, ratios)
    print(render_report_table(reports))
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            ratio = report.config["ratio"]
            write_report(report, outdir / f"sweep-ratio{ratio:g}-seed{cfg.seed}.json")
        print(f"wrote {len(reports)} reports -> {outdir}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    if args.synthetic:
        datasets, provider = _synthetic_setup(args)
    else:
        datasets, provider = _pipeline_setup(args, cfg)
    results = run_representation_compare(cfg, datasets, provider)
    print(render_report_table([results[m] for m in results]))
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        for method, report in results.items():
            write_report(report, outdir / f"compare-{method}-seed{cfg.seed}.json")
        print(f"wrote {len(results)} reports -> {outdir}")
    return 0


def _cmd_ood_synthetic(args, cfg: ExperimentConfig) -> int:
    from privqa.synthetic import SyntheticContextProvider, SyntheticSpec, build_corpus

    _fill(args, seed=0, target_seed=1, train_size=500, dev_size=200, test_size=200)
    sizes = dict(
        train_size=int(args.train_size),
        dev_size=int(args.dev_size),
        test_size=int(args.test_size),
    )
    source_spec = SyntheticSpec(seed=int(args.seed), **sizes)
    target_spec = SyntheticSpec(seed=int(args.target_seed), **sizes)
    report = run_ood(
        cfg,
        build_corpus(source_spec),
        build_corpus(target_spec),
        provider=SyntheticContextProvider(source_spec),
        target_provider=SyntheticContextProvider(target_spec),
    )
    print(render_report_table([report]))
    return 0


def _cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        reports.append(
            EvalReport(
                config=data.get("config", {}),
                dataset=data.get("dataset", {}),
                metrics=data.get("metrics", {}),
                budget=data.get("budget"),
                ftcr=data.get("ftcr"),
                provenance=data.get("provenance", {}),
                predictions=data.get("predictions", {}),
            )
        )
    print(render_report_table(reports))
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--view", choices=[v.value for v in ContextView])
    p.add_argument("--ratio", type=float)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--patience", dest="early_stop_patience", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--dim", type=int, help="featurizer dimension")
    p.add_argument("--hash-seed", type=int)
    p.add_argument("--model", help="upstream model id")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--cache", help="gateway response cache path")
    p.add_argument("--demos", help="demonstration file or bundled name")
    p.add_argument("--gazetteer", help="gazetteer file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privqa", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a source-format file to canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=INGEST_FORMATS)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("extract", help="extract disclosed keywords per instance")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--gazetteer")
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("budget", help="report the corpus privacy budget")
    p.add_argument("--data", required=True)
    p.add_argument("--keywords", required=True)
    p.set_defaults(func=_cmd_budget)

    p = sub.add_parser("prompt", help="print the prompt for one instance")
    p.add_argument("--data", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--id", required=True)
    p.set_defaults(func=_cmd_prompt)

    p = sub.add_parser("generate", help="generate contexts through the gateway")
    p.add_argument("--data", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--model")
    p.add_argument("--completions", help="JSON id->completion map for mock mode")
    p.add_argument("--api-url")
    p.add_argument("--credential-env")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("parse", help="parse raw completions into augmented instances")
    p.add_argument("--input", required=True, help="JSONL of {id, completion}")
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("train", help="train the scorer on augmented instances")
    _add_experiment_flags(p)
    p.add_argument("--train", required=True, dest="train")
    p.add_argument("--dev", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on augmented instances")
    _add_experiment_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ood", help="train on one domain, evaluate on another")
    _add_experiment_flags(p)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--target-seed", type=int, help="synthetic target domain seed")
    p.add_argument("--train-size", type=int)
    p.add_argument("--dev-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--train", dest="train")
    p.add_argument("--dev")
    p.add_argument("--target")
    p.add_argument("--checkpoint")
    p.set_defaults(func=_cmd_ood_dispatch)

    p = sub.add_parser("sweep", help="sweep the keyword disclosure ratio")
    _add_experiment_flags(p)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--train-size", type=int)
    p.add_argument("--dev-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--data-train")
    p.add_argument("--data-dev")
    p.add_argument("--data-test")
    p.add_argument("--completions")
    p.add_argument("--ratios", help="comma-separated, default 0.25,0.5,0.75,1.0")
    p.add_argument("--out", help="directory for per-ratio reports")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="compare disclosure representations at matched budget")
    _add_experiment_flags(p)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--train-size", type=int)
    p.add_argument("--dev-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--data-train")
    p.add_argument("--data-dev")
    p.add_argument("--data-test")
    p.add_argument("--completions")
    p.add_argument("--out", help="directory for per-method reports")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="summarize saved report files as a table")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=_cmd_report)

    return parser


def _cmd_ood_dispatch(args) -> int:
    cfg = _experiment_config(args)
    cfg.validate()
    if args.synthetic:
        return _cmd_ood_synthetic(args, cfg)
    for name in ("train", "dev", "target"):
        if getattr(args, name) is None:
            raise HarnessError(f"ood needs --{name} (or --synthetic)")
    return _cmd_ood(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
