"""Command-line orchestration.

Subcommands: gen-data, pretrain, pipeline, evaluate, chat. All options live
in a JSON config document; `--seed`, `--out` and `--skip-pretrain` override
the corresponding config values. Exit codes: 0 ok, 2 config error, 3 I/O
error, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .classifier import TrainConfig, load_classifier, save_classifier
from .corpus import CorpusSplit, SyntheticSpec, generate_synthetic, load_corpus, save_corpus
from .encoder import ContrastiveConfig, init_encoder, pretrain, save_encoder
from .errors import ConfigError, MissingArtifactError, SpecError, TodError, ValidationError
from .evaluation import evaluate_records, render_report, save_report
from .generator import (
    INFORM_LABEL,
    SystemState,
    build_lm_training_sequences,
    respond,
    run_system,
)
from .lm import LmConfig, LmTrainConfig, init_lm, lm_train, load_lm, save_lm
from .taxonomy import OTHER_LABEL, default_label_space, load_label_space
from .text import Vocab, build_vocab, segment
from .weak import WeakConfig, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING = 4


@dataclass(frozen=True)
class EncoderSection:
    d: int = 64
    dropout_rate: float = 0.1
    temperature: float = 0.05
    corrupt_rate: float = 0.15
    batch_size: int = 64
    epochs: int = 1
    learning_rate: float = 5e-3
    seed: int = 1


@dataclass(frozen=True)
class WeakSection:
    target_precision: float = 0.9
    dev_fraction: float = 0.1
    pseudo_negative_weight: float = 1.0
    student_epochs: int = 3
    finetune_epochs: int = 30
    finetune_learning_rate: float = 5e-3
    seed: int = 3


@dataclass(frozen=True)
class LmSection:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_window: int = 256
    learning_rate: float = 3e-3
    batch_size: int = 32
    epochs: int = 3
    max_sequences: int = 4000
    seed: int = 4


@dataclass(frozen=True)
class GenerationSection:
    beam_size: int = 4
    max_len: int = 48


@dataclass(frozen=True)
class EvaluationSection:
    predictions: str = ""            # defaults to <out>/predictions.jsonl
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    oracle: bool = True


@dataclass(frozen=True)
class ChatSection:
    dialog_id: str = ""              # empty: first test dialog, else first labeled


@dataclass(frozen=True)
class RunConfig:
    corpus: str = "corpus.jsonl"
    out: str = "out"
    taxonomy: str = ""               # optional taxonomy file
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        n_labeled=200, n_unlabeled=1000, n_entities_per_kb=3,
        label_noise_rate=0.05, seed=0))
    encoder: EncoderSection = field(default_factory=EncoderSection)
    classifier: TrainConfig = field(default_factory=lambda: TrainConfig(seed=2))
    weak: WeakSection = field(default_factory=WeakSection)
    lm: LmSection = field(default_factory=LmSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    chat: ChatSection = field(default_factory=ChatSection)


_SECTION_TYPES = {
    "synthetic": SyntheticSpec,
    "encoder": EncoderSection,
    "classifier": TrainConfig,
    "weak": WeakSection,
    "lm": LmSection,
    "generation": GenerationSection,
    "evaluation": EvaluationSection,
    "chat": ChatSection,
}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    if cls is EvaluationSection and "weights" in data:
        data = dict(data, weights=tuple(data["weights"]))
    return cls(**data)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for key, value in doc.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    config = RunConfig(**kwargs)
    if overrides:
        config = _apply_overrides(config, overrides)
    return config


def _apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    if overrides.get("out"):
        config = replace(config, out=overrides["out"])
    if overrides.get("corpus"):
        config = replace(config, corpus=overrides["corpus"])
    if overrides.get("seed") is not None:
        # One master seed fans out to fixed per-stage offsets.
        s = int(overrides["seed"])
        config = replace(
            config,
            synthetic=replace(config.synthetic, seed=s),
            encoder=replace(config.encoder, seed=s + 1),
            classifier=replace(config.classifier, seed=s + 2),
            weak=replace(config.weak, seed=s + 3),
            lm=replace(config.lm, seed=s + 4),
        )
    return config


def _space(config: RunConfig):
    if config.taxonomy:
        return load_label_space(config.taxonomy)
    return default_label_space()


def _build_vocab(split: CorpusSplit, space) -> Vocab:
    texts = []
    for dialog in split.labeled + split.unlabeled + split.dev:
        for turn in dialog.turns:
            texts.append(turn.user_utterance)
            texts.append(turn.system_response)
        for ent in dialog.local_kb.entities:
            texts.append(ent.name)
            for attr, value in ent.attributes.items():
                texts.append(attr)
                texts.append(value)
    extra = [INFORM_LABEL, OTHER_LABEL]
    for label in list(space.ui_labels) + list(space.si_labels):
        extra.extend(segment(label))
    return build_vocab(texts, extra_tokens=extra)


def cmd_gen_data(config: RunConfig) -> int:
    split = generate_synthetic(config.synthetic, _space(config))
    Path(config.corpus).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(split, config.corpus)
    n = config.synthetic
    print(f"wrote {config.corpus}: {n.n_labeled} labeled / {n.n_unlabeled} unlabeled "
          f"dialogs (+dev/test)")
    return EXIT_OK


def _load_split(config: RunConfig) -> CorpusSplit:
    path = Path(config.corpus)
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    return load_corpus(path, _space(config))


def _pretrained_encoder(config: RunConfig, split: CorpusSplit, vocab: Vocab,
                        skip_pretrain: bool):
    section = config.encoder
    params = init_encoder(len(vocab), d=section.d, seed=section.seed,
                          dropout_rate=section.dropout_rate)
    if skip_pretrain:
        return params
    pool = split.unlabeled if split.unlabeled else split.labeled
    sequences = []
    for dialog in pool:
        for turn in dialog.turns:
            sequences.append(vocab.encode(turn.user_utterance))
            sequences.append(vocab.encode(turn.system_response))
    contrastive = ContrastiveConfig(
        temperature=section.temperature, corrupt_rate=section.corrupt_rate,
        batch_size=section.batch_size, epochs=section.epochs,
        learning_rate=section.learning_rate, seed=section.seed)
    return pretrain(params, sequences, contrastive)


def cmd_pretrain(config: RunConfig, skip_pretrain: bool = False) -> int:
    split = _load_split(config)
    space = _space(config)
    vocab = _build_vocab(split, space)
    params = _pretrained_encoder(config, split, vocab, skip_pretrain)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(out / "encoder.ckpt", params, vocab)
    print(f"wrote {out / 'encoder.ckpt'} (|vocab|={len(vocab)}, d={params.d})")
    return EXIT_OK


def _write_jsonl(path: Path, records: list[dict]) -> None:
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records),
        encoding="utf-8",
    )


def cmd_pipeline(config: RunConfig, skip_pretrain: bool = False) -> int:
    started = time.time()
    split = _load_split(config)
    space = _space(config)
    vocab = _build_vocab(split, space)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    print(f"[1/4] encoder pretraining{' (skipped)' if skip_pretrain else ''}",
          file=sys.stderr)
    encoder = _pretrained_encoder(config, split, vocab, skip_pretrain)
    save_encoder(out / "encoder.ckpt", encoder, vocab)

    print("[2/4] weak supervision pipeline", file=sys.stderr)
    weak_cfg = WeakConfig(
        teacher=config.classifier,
        student=replace(config.classifier, epochs=config.weak.student_epochs),
        finetune=replace(config.classifier, epochs=config.weak.finetune_epochs,
                         learning_rate=config.weak.finetune_learning_rate),
        target_precision=config.weak.target_precision,
        dev_fraction=config.weak.dev_fraction,
        pseudo_negative_weight=config.weak.pseudo_negative_weight,
        seed=config.weak.seed,
    )
    student, provenance = run_pipeline(
        split.labeled, split.unlabeled, space, vocab, encoder, weak_cfg,
        dev=split.dev if split.dev else None,
    )
    save_classifier(out / "student.ckpt", student, space, vocab)
    (out / "provenance.json").write_text(
        json.dumps(provenance, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )

    print("[3/4] language model training", file=sys.stderr)
    lm_cfg = LmConfig(vocab_size=len(vocab), d_model=config.lm.d_model,
                      n_layers=config.lm.n_layers, n_heads=config.lm.n_heads,
                      context_window=config.lm.context_window)
    sequences = build_lm_training_sequences(split.labeled, space, vocab,
                                            config.lm.context_window)
    if len(sequences) > config.lm.max_sequences:
        keep = np.random.default_rng(config.lm.seed).permutation(len(sequences))
        sequences = [sequences[i] for i in keep[: config.lm.max_sequences]]
    lm = lm_train(init_lm(lm_cfg, seed=config.lm.seed), sequences,
                  LmTrainConfig(learning_rate=config.lm.learning_rate,
                                batch_size=config.lm.batch_size,
                                epochs=config.lm.epochs, seed=config.lm.seed))
    save_lm(out / "lm.ckpt", lm, vocab)

    print("[4/4] evaluation on the test split", file=sys.stderr)
    state = SystemState(classifier=student, lm=lm, space=space, vocab=vocab,
                        beam_size=config.generation.beam_size,
                        max_gen_len=config.generation.max_len,
                        other_threshold=config.classifier.other_threshold)
    records = run_system(state, split.test)
    _write_jsonl(out / "predictions.jsonl", records)
    oracle_records = None
    if config.evaluation.oracle:
        oracle_records = run_system(state, split.test, oracle_intents=True)
        _write_jsonl(out / "predictions_oracle.jsonl", oracle_records)
    report = evaluate_records(records, split.test, config.evaluation.weights,
                              oracle_records=oracle_records)
    save_report(report, out / "metrics.json")
    (out / "metrics.txt").write_text(render_report(report), encoding="utf-8")
    print(render_report(report), end="")
    print(f"pipeline done in {time.time() - started:.1f}s; artifacts in {out}",
          file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(config: RunConfig) -> int:
    split = _load_split(config)
    pred_path = Path(config.evaluation.predictions or Path(config.out) / "predictions.jsonl")
    if not pred_path.exists():
        raise FileNotFoundError(f"predictions not found: {pred_path}")
    records = [json.loads(line) for line in
               pred_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    oracle_path = pred_path.with_name(pred_path.stem + "_oracle.jsonl")
    oracle_records = None
    if oracle_path.exists():
        oracle_records = [json.loads(line) for line in
                          oracle_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    try:
        report = evaluate_records(records, split.test, config.evaluation.weights,
                                  oracle_records=oracle_records)
    except TodError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / "metrics.json")
    (out / "metrics.txt").write_text(render_report(report), encoding="utf-8")
    print(render_report(report), end="")
    return EXIT_OK


def _chat_dialog(config: RunConfig, split: CorpusSplit):
    pool = split.test + split.labeled + split.dev + split.unlabeled
    if config.chat.dialog_id:
        for dialog in pool:
            if dialog.dialog_id == config.chat.dialog_id:
                return dialog
        raise ConfigError(f"dialog {config.chat.dialog_id!r} not in corpus")
    if not pool:
        raise ConfigError("corpus has no dialogs to chat against")
    return pool[0]


def cmd_chat(config: RunConfig, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    out = Path(config.out)
    student, space, vocab = load_classifier(out / "student.ckpt")
    lm, _ = load_lm(out / "lm.ckpt")
    split = _load_split(config)
    dialog = _chat_dialog(config, split)
    state = SystemState(classifier=student, lm=lm, space=space, vocab=vocab,
                        beam_size=config.generation.beam_size,
                        max_gen_len=config.generation.max_len,
                        other_threshold=config.classifier.other_threshold)
    history: list[str] = []
    print(f"chatting against KB of dialog {dialog.dialog_id} "
          f"(:kb prints it, :quit exits)", file=stdout)
    for line in stdin:
        line = line.rstrip("\n")
        if line == ":quit":
            return EXIT_OK
        if line == ":kb":
            for ent in dialog.local_kb.entities:
                print(f"  {ent.name} [{ent.entity_type}] {ent.attributes}", file=stdout)
            continue
        if not line.strip():
            continue
        result = respond(state, history, line, dialog.local_kb)
        print(f"  ui={sorted(result.ui)} si={sorted(result.si)} "
              f"slots={sorted(map(str, result.slots))}", file=stdout)
        print(f"  kb={result.kb.triples} constraints={len(result.constraints)}",
              file=stdout)
        print(f"  -> {result.response_text}", file=stdout)
        history.extend(n for n in result.predicted_entities if n not in history)
    return EXIT_OK


def _run(command, config: RunConfig, **kwargs) -> int:
    try:
        return command(config, **kwargs)
    except (ConfigError, SpecError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="todpipe",
        description="Weakly supervised task-oriented dialogue pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "generate a synthetic corpus file"),
        ("pretrain", "contrastively pretrain the sentence encoder"),
        ("pipeline", "run pretraining, weak supervision, LM training, evaluation"),
        ("evaluate", "score a predictions file against the test split"),
        ("chat", "interactive REPL against one dialog's KB"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed overriding per-stage seeds")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--corpus", help="corpus file override")
        if name in ("pretrain", "pipeline"):
            p.add_argument("--skip-pretrain", action="store_true",
                           help="leave the encoder randomly initialized")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, overrides=vars(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "gen-data":
        return _run(cmd_gen_data, config)
    if args.command == "pretrain":
        return _run(cmd_pretrain, config, skip_pretrain=args.skip_pretrain)
    if args.command == "pipeline":
        return _run(cmd_pipeline, config, skip_pretrain=args.skip_pretrain)
    if args.command == "evaluate":
        return _run(cmd_evaluate, config)
    if args.command == "chat":
        return _run(cmd_chat, config)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
