"""Experiment harness: regimes, evaluation, and reproducible reports.

A run materializes context-augmented instances (from an oracle provider or
the gateway pipeline), assembles per-choice scorer inputs under a training
regime and ablation view, trains the scorer, and evaluates accuracy on the
test split. Reports carry no timestamps and hash their own configuration and
response cache, so a replayed run writes byte-identical output.

Regimes:
    FTC   every instance trains with its context under the configured view.
    SFT   no instance sees context; the input reduces to question + answer.
    FTCR  an instance trains with context only when the generation's
          preliminary decision was exactly the gold label; rejected
          instances still train, context-free.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from privqa import __version__
from privqa.contexts import (
    CONTEXT_HEAD,
    ContextView,
    ParseError,
    ftcr_admit,
    parse_generation,
)
from privqa.corpus import AugmentedInstance, Dataset, plain_augmented
from privqa.gateway import PROMPT_STYLE, Gateway, GenerationRequest
from privqa.keywords import (
    METHOD_NER,
    METHOD_RANDOM_SPAN,
    METHOD_RANDOM_WORDS,
    KeywordSet,
    corpus_budget_report,
    extract_ner,
    extract_random_span,
    extract_random_words,
    format_budget,
    stable_seed,
    subsample_keywords,
)
from privqa.promptkit import Demonstration, build_prompt
from privqa.scorer import (
    FeaturizerConfig,
    ScorerModel,
    TrainConfig,
    TrainItem,
    choice_texts,
    save_model,
    score_texts,
    train,
)

REGIMES = ("FTC", "SFT", "FTCR")

DEFAULT_SWEEP_RATIOS = (0.25, 0.5, 0.75, 1.0)


class HarnessError(Exception):
    """An experiment was misconfigured or a pipeline step failed."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run's outcome; fully JSON-serializable."""

    regime: str = "FTC"
    view: str = "Full"
    ratio: float = 1.0
    method: str = METHOD_NER
    seed: int = 0
    learning_rate: float = 0.05
    batch_size: int = 8
    max_epochs: int = 100
    warmup_steps: int = 200
    early_stop_patience: int = 5
    weight_decay: float = 0.01
    featurizer_dim: int = 2**18
    hash_seed: int = 17
    model_id: str = "gpt-3.5-turbo"
    mode: str = "replay"
    cache_path: str = ""
    demo_file: str = ""
    gazetteer_file: str = ""

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise HarnessError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        try:
            ContextView(self.view)
        except ValueError:
            raise HarnessError(
                f"unknown view {self.view!r}; expected one of "
                f"{[v.value for v in ContextView]}"
            ) from None
        if not 0.0 <= self.ratio <= 1.0:
            raise HarnessError(f"ratio {self.ratio} outside [0, 1]")

    def context_view(self) -> ContextView:
        return ContextView(self.view)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            warmup_steps=self.warmup_steps,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
            weight_decay=self.weight_decay,
        )

    def featurizer(self) -> FeaturizerConfig:
        return FeaturizerConfig(dim=self.featurizer_dim, hash_seed=self.hash_seed)


def config_digest(config: ExperimentConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Input assembly


@dataclass(frozen=True)
class ChoiceInputs:
    """Scorer-ready per-choice texts for one instance."""

    id: str
    gold: str
    labels: tuple[str, ...]
    texts: tuple[str, ...]
    used_context: bool


def resolve_view(regime: str, view: ContextView, aug: AugmentedInstance) -> ContextView:
    """The view one instance actually trains under, given the regime."""
    if regime == "SFT":
        return ContextView.NO_CONTEXT
    if regime == "FTCR" and not ftcr_admit(aug.context, aug.instance.gold):
        return ContextView.NO_CONTEXT
    return view


def build_inputs(
    augmented: Sequence[AugmentedInstance], regime: str, view: ContextView
) -> list[ChoiceInputs]:
    """Assemble training inputs under a regime.

    FTCR rejections are kept, demoted to context-free inputs, so the training
    set size never depends on decision quality.
    """
    if regime not in REGIMES:
        raise HarnessError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    out = []
    for aug in augmented:
        v = resolve_view(regime, view, aug)
        out.append(
            ChoiceInputs(
                id=aug.instance.id,
                gold=aug.instance.gold,
                labels=aug.instance.labels(),
                texts=choice_texts(aug, v),
                used_context=v is not ContextView.NO_CONTEXT,
            )
        )
    return out


def eval_view(config: ExperimentConfig) -> ContextView:
    """SFT models are evaluated context-free; others under their view."""
    if config.regime == "SFT":
        return ContextView.NO_CONTEXT
    return config.context_view()


def to_train_item(inputs: ChoiceInputs) -> TrainItem:
    return TrainItem(
        id=inputs.id, texts=inputs.texts, gold_index=inputs.labels.index(inputs.gold)
    )


def accuracy(predictions: dict[str, str], gold: dict[str, str]) -> float:
    """Fraction correct; the two maps must cover exactly the same ids."""
    if set(predictions) != set(gold):
        missing = set(gold) - set(predictions)
        extra = set(predictions) - set(gold)
        raise HarnessError(
            f"prediction ids do not match gold ids "
            f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})"
        )
    if not gold:
        raise HarnessError("empty evaluation set")
    return sum(1 for i in gold if predictions[i] == gold[i]) / len(gold)


def summarize_accuracy(values: Sequence[float]) -> dict[str, float]:
    """Mean and population standard deviation over per-seed accuracies."""
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


# ---------------------------------------------------------------------------
# Gateway-backed provider


class PipelineProvider:
    """Materializes contexts through extract, prompt, generate, and parse."""

    def __init__(
        self,
        gateway: Gateway,
        demos: Sequence[Demonstration],
        gazetteer: Sequence[str] | None = None,
        model_id: str = "gpt-3.5-turbo",
        mode: str = "replay",
    ):
        if not demos:
            raise HarnessError("pipeline provider needs at least one demonstration")
        self.gateway = gateway
        self.demos = list(demos)
        self.gazetteer = list(gazetteer or [])
        self.model_id = model_id
        self.mode = mode

    def keyword_map(
        self,
        dataset: Dataset,
        ratio: float,
        seed: int,
        method: str = METHOD_NER,
    ) -> dict[str, KeywordSet]:
        out: dict[str, KeywordSet] = {}
        for inst in dataset.instances:
            inst_seed = stable_seed(seed, inst.id)
            if method == METHOD_NER:
                if not self.gazetteer:
                    raise HarnessError("entity extraction needs a gazetteer")
                ks = extract_ner(inst.question, self.gazetteer)
                if not ks.keywords:
                    raise HarnessError(f"instance {inst.id!r}: no gazetteer match")
                out[inst.id] = subsample_keywords(ks, ratio, inst_seed)
            elif method == METHOD_RANDOM_SPAN:
                out[inst.id] = extract_random_span(inst.question, ratio, inst_seed)
            elif method == METHOD_RANDOM_WORDS:
                out[inst.id] = extract_random_words(inst.question, ratio, inst_seed)
            else:
                raise HarnessError(f"unknown keyword method {method!r}")
        return out

    def provide(
        self,
        dataset: Dataset,
        ratio: float,
        seed: int,
        method: str = METHOD_NER,
    ) -> list[AugmentedInstance]:
        kmap = self.keyword_map(dataset, ratio, seed, method)
        out = []
        for inst in dataset.instances:
            prompt = build_prompt(
                self.demos, kmap[inst.id].keywords, inst.choices, query_id=inst.id
            )
            record = self.gateway.complete(
                GenerationRequest(model_id=self.model_id, prompt=prompt), self.mode
            )
            text = record.completion
            if CONTEXT_HEAD not in text:
                text = CONTEXT_HEAD + text
            try:
                parsed = parse_generation(text, inst.labels())
            except ParseError as exc:
                raise HarnessError(f"instance {inst.id!r}: {exc}") from exc
            out.append(
                AugmentedInstance(
                    instance=inst, context=parsed, generation_id=record.cache_key
                )
            )
        return out


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    """One run's outcome. Deliberately timestamp-free."""

    config: dict
    dataset: dict
    metrics: dict
    budget: dict | None
    ftcr: dict | None
    provenance: dict
    predictions: dict[str, str]


def report_to_dict(report: EvalReport) -> dict:
    return {
        "config": report.config,
        "dataset": report.dataset,
        "metrics": report.metrics,
        "budget": report.budget,
        "ftcr": report.ftcr,
        "provenance": report.provenance,
        "predictions": report.predictions,
    }


def render_report(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(render_report(report), encoding="utf-8")


def _file_digest(path: str | Path) -> str:
    p = Path(path)
    if not str(path) or not p.exists():
        return ""
    return hashlib.sha256(p.read_bytes()).hexdigest()


def render_report_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text summary table, one row per report."""
    rows = [("regime", "view", "method", "ratio", "budget", "accuracy", "n")]
    for r in reports:
        cfg = r.config
        rows.append(
            (
                str(cfg.get("regime", "")),
                str(cfg.get("view", "")),
                str(cfg.get("method", "")),
                f"{cfg.get('ratio', 0.0):g}",
                r.budget["formatted"] if r.budget else "-",
                f"{r.metrics['accuracy'] * 100:.2f}%",
                str(r.metrics["n"]),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Runs


def _require_splits(datasets: dict[str, Dataset], *names: str) -> None:
    for name in names:
        if name not in datasets:
            raise HarnessError(f"missing dataset split {name!r}")


def _materialize(
    config: ExperimentConfig, dataset: Dataset, provider
) -> list[AugmentedInstance]:
    if config.regime == "SFT":
        return [plain_augmented(inst) for inst in dataset.instances]
    if provider is None:
        raise HarnessError(f"regime {config.regime} needs a context provider")
    return provider.provide(dataset, config.ratio, config.seed, config.method)


def _train_model(
    config: ExperimentConfig,
    datasets: dict[str, Dataset],
    provider,
) -> tuple[ScorerModel, object, list[ChoiceInputs]]:
    train_aug = _materialize(config, datasets["train"], provider)
    dev_aug = _materialize(config, datasets["dev"], provider)
    train_inputs = build_inputs(train_aug, config.regime, config.context_view())
    dev_inputs = build_inputs(dev_aug, "FTC", eval_view(config))
    model, tlog = train(
        config.train_config(),
        [to_train_item(ci) for ci in train_inputs],
        [to_train_item(ci) for ci in dev_inputs],
        config.featurizer(),
    )
    return model, tlog, train_inputs


def _predict_split(
    model: ScorerModel, config: ExperimentConfig, dataset: Dataset, provider
) -> tuple[dict[str, str], dict[str, str]]:
    augmented = _materialize(config, dataset, provider)
    inputs = build_inputs(augmented, "FTC", eval_view(config))
    preds = {}
    gold = {}
    for ci in inputs:
        sv = score_texts(model, ci.labels, ci.texts)
        preds[ci.id] = ci.labels[int(np.argmax(sv.probs))]
        gold[ci.id] = ci.gold
    return preds, gold


def _budget_section(
    config: ExperimentConfig, dataset: Dataset, provider
) -> dict | None:
    if config.regime == "SFT" or provider is None:
        return None
    bmap = provider.keyword_map(dataset, config.ratio, config.seed, config.method)
    rep = corpus_budget_report(dataset, bmap)
    return {
        "budget": rep.budget,
        "formatted": format_budget(rep.budget),
        "avg_keyword_words": rep.avg_keyword_words,
        "avg_question_words": rep.avg_question_words,
    }


def _build_report(
    config: ExperimentConfig,
    datasets: dict[str, Dataset],
    tlog,
    train_inputs: list[ChoiceInputs],
    preds: dict[str, str],
    gold: dict[str, str],
    provider,
    eval_name: str,
    eval_split: str,
) -> EvalReport:
    acc = accuracy(preds, gold)
    ftcr = None
    if config.regime == "FTCR":
        ftcr = {
            "admitted": sum(1 for ci in train_inputs if ci.used_context),
            "total": len(train_inputs),
        }
    return EvalReport(
        config=asdict(config),
        dataset={
            "name": eval_name,
            "split": eval_split,
            "sizes": {split: len(ds) for split, ds in sorted(datasets.items())},
        },
        metrics={
            "accuracy": acc,
            "n": len(gold),
            "n_correct": round(acc * len(gold)),
            "best_dev_accuracy": tlog.best_dev_accuracy,
            "best_epoch": tlog.best_epoch,
            "stopped_epoch": tlog.stopped_epoch,
        },
        budget=_budget_section(config, datasets["train"], provider),
        ftcr=ftcr,
        provenance={
            "config_digest": config_digest(config),
            "cache_digest": _file_digest(config.cache_path),
            "code_version": __version__,
            "prompt_style": PROMPT_STYLE,
        },
        predictions=preds,
    )


def _save_outputs(
    report: EvalReport, model: ScorerModel, config: ExperimentConfig, workdir: str | Path
) -> None:
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    save_model(model, wd / f"model-seed{config.seed}.npz")
    write_report(report, wd / f"report-seed{config.seed}.json")


def run_experiment(
    config: ExperimentConfig,
    datasets: dict[str, Dataset],
    provider=None,
    workdir: str | Path | None = None,
) -> EvalReport:
    """Train under the configured regime and evaluate on the test split."""
    config.validate()
    _require_splits(datasets, "train", "dev", "test")
    model, tlog, train_inputs = _train_model(config, datasets, provider)
    preds, gold = _predict_split(model, config, datasets["test"], provider)
    report = _build_report(
        config,
        datasets,
        tlog,
        train_inputs,
        preds,
        gold,
        provider,
        datasets["test"].name,
        datasets["test"].split,
    )
    if workdir is not None:
        _save_outputs(report, model, config, workdir)
    return report


def run_ood(
    config: ExperimentConfig,
    source: dict[str, Dataset],
    target: dict[str, Dataset],
    provider=None,
    target_provider=None,
    workdir: str | Path | None = None,
) -> EvalReport:
    """Train on the source domain, evaluate on the target domain's test split."""
    config.validate()
    _require_splits(source, "train", "dev")
    _require_splits(target, "test")
    model, tlog, train_inputs = _train_model(config, source, provider)
    preds, gold = _predict_split(
        model, config, target["test"], target_provider or provider
    )
    report = _build_report(
        config,
        source,
        tlog,
        train_inputs,
        preds,
        gold,
        provider,
        target["test"].name,
        target["test"].split,
    )
    report.dataset["transfer"] = {
        "source": source["train"].name,
        "target": target["test"].name,
    }
    if workdir is not None:
        _save_outputs(report, model, config, workdir)
    return report


def run_budget_sweep(
    config: ExperimentConfig,
    datasets: dict[str, Dataset],
    provider,
    ratios: Sequence[float] = DEFAULT_SWEEP_RATIOS,
) -> list[EvalReport]:
    """Re-run the full pipeline at each keyword ratio.

    Contexts are regenerated per ratio: a smaller disclosure changes the
    prompt, so cached generations from other ratios never leak in.
    """
    reports = []
    for ratio in ratios:
        reports.append(run_experiment(replace(config, ratio=ratio), datasets, provider))
    return reports


def _keyword_coverage(dataset: Dataset, kmap: dict[str, KeywordSet]) -> Dataset:
    kept = tuple(inst for inst in dataset.instances if kmap[inst.id].keywords)
    return Dataset(name=dataset.name, split=dataset.split, instances=kept)


def run_representation_compare(
    config: ExperimentConfig,
    datasets: dict[str, Dataset],
    provider,
    methods: Sequence[str] = (METHOD_NER, METHOD_RANDOM_SPAN, METHOD_RANDOM_WORDS),
    budget_tolerance: float = 0.01,
) -> dict[str, EvalReport]:
    """Compare disclosure representations at a matched privacy budget.

    The entity-keyword budget on the shared subset (instances with at least
    one gazetteer match) sets the target; the random baselines disclose that
    fraction of each question. A baseline whose realized corpus budget lands
    more than `budget_tolerance` from the target is an error.
    """
    config.validate()
    _require_splits(datasets, "train", "dev", "test")
    ner_maps = {
        split: provider.keyword_map(ds, config.ratio, config.seed, METHOD_NER)
        for split, ds in datasets.items()
    }
    shared = {
        split: _keyword_coverage(ds, ner_maps[split]) for split, ds in datasets.items()
    }
    for split, ds in shared.items():
        if not len(ds):
            raise HarnessError(f"no instances with keywords in split {split!r}")
    target = corpus_budget_report(
        shared["train"], ner_maps["train"]
    ).budget

    out: dict[str, EvalReport] = {}
    for method in methods:
        ratio = config.ratio if method == METHOD_NER else target
        cfg = replace(config, method=method, ratio=ratio)
        if method != METHOD_NER:
            bmap = provider.keyword_map(shared["train"], ratio, cfg.seed, method)
            realized = corpus_budget_report(shared["train"], bmap).budget
            if abs(realized - target) > budget_tolerance:
                raise HarnessError(
                    f"{method} budget {format_budget(realized)} misses target "
                    f"{format_budget(target)} by more than {budget_tolerance:.0%}"
                )
        out[method] = run_experiment(cfg, shared, provider)
    return out
