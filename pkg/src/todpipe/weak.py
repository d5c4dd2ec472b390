"""Teacher/student weak supervision over unlabeled dialogues.

Five stages: (1) train a user-intent teacher and a service-intent teacher
on the labeled pool -- the service teacher reads the customer-service
response text, while the deployed student predicts service intents from the
user side; (2) score the unlabeled pool with the UI teacher and keep turns
passing per-class confidence thresholds; (3) re-score the survivors with the
SI teacher and keep the intersection, attaching SI pseudo-labels; (4) train
a fresh student on the pseudo-labeled set; (5) fine-tune the student on the
original labeled pool.

Thresholds are chosen per class by precision-targeted grid search on a
held-out labeled slice: the smallest rho in {0.05, 0.10, ..., 0.95} whose
selections reach the target precision, with 0.95 as the unreachable-target
fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .classifier import (
    HEADS,
    SERVICE_TEXT,
    USER_TEXT,
    ClassifierParams,
    TrainConfig,
    TrainExample,
    compute_class_weights,
    forward,
    forward_batch,
    init_classifier,
    make_examples,
    predict,
    train,
)
from .corpus import Dialog, Turn
from .encoder import EncoderParams
from .errors import ConfigError, EmptyDatasetError
from .evaluation import intent_prf
from .taxonomy import LabelSpace, encode_labels
from .text import Vocab

RHO_GRID = [round(0.05 * k, 2) for k in range(1, 20)]
RHO_FALLBACK = 0.95


@dataclass
class ScoredExample:
    dialog_id: str
    turn_index: int
    probs: dict[str, np.ndarray]
    teacher_role: str
    turn: Turn


@dataclass
class ThresholdPolicy:
    thresholds: dict[str, np.ndarray]

    def head(self, name: str) -> np.ndarray:
        return self.thresholds[name]


@dataclass
class PseudoTurn:
    dialog_id: str
    turn_index: int
    user_utterance: str
    system_response: str
    ui: set[str] = field(default_factory=set)
    si: set[str] = field(default_factory=set)


@dataclass
class WeakDataset:
    turns: list[PseudoTurn]
    stage: str
    report: dict[str, int]

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class WeakConfig:
    teacher: TrainConfig = TrainConfig()
    student: TrainConfig = TrainConfig()
    finetune: TrainConfig = TrainConfig()
    target_precision: float = 0.9
    dev_fraction: float = 0.1
    # Loss weight on classes the teacher was NOT confident about; below 1.0
    # treats their absence as "unknown" rather than a hard negative.
    pseudo_negative_weight: float = 1.0
    # Optionally restrict pseudo-label training to the heads, shielding the
    # pretrained representation from teacher label noise.
    student_freeze_encoder: bool = False
    # Keep the fine-tune epoch with the best dev intent F1 instead of the last.
    finetune_dev_select: bool = True
    seed: int = 0


def _role_field(role: str) -> str:
    if role == "user":
        return USER_TEXT
    if role == "service":
        return SERVICE_TEXT
    raise ConfigError(f"unknown teacher role {role!r}")


def train_teacher(role: str, labeled: list[Dialog], space: LabelSpace, vocab: Vocab,
                  encoder: EncoderParams, config: TrainConfig) -> ClassifierParams:
    """Train a role-specialized teacher; the role decides which side it reads."""
    input_field = _role_field(role)
    if not labeled or not any(d.turns for d in labeled):
        raise EmptyDatasetError("teacher training needs labeled dialogs")
    examples = make_examples(labeled, space, vocab, input_field)
    params = init_classifier(encoder, space, seed=config.seed, input_field=input_field)
    params.class_weights = compute_class_weights(examples, space)
    return train(params, examples, config)


def _turn_text(turn, input_field: str) -> str:
    return turn.user_utterance if input_field == USER_TEXT else turn.system_response


def score_unlabeled(teacher: ClassifierParams, dialogs: list[Dialog],
                    vocab: Vocab) -> list[ScoredExample]:
    """One ScoredExample per turn, ordered by (dialog_id, turn_index)."""
    flat: list[tuple[str, Turn]] = [
        (d.dialog_id, t) for d in dialogs for t in d.turns
    ]
    flat.sort(key=lambda pair: (pair[0], pair[1].turn_index))
    if not flat:
        return []
    sequences = [vocab.encode(_turn_text(t, teacher.input_field)) for _, t in flat]
    probs = forward_batch(teacher, sequences)
    role = "user" if teacher.input_field == USER_TEXT else "service"
    return [
        ScoredExample(
            dialog_id=did,
            turn_index=turn.turn_index,
            probs={name: probs[name][i] for name in HEADS},
            teacher_role=role,
            turn=turn,
        )
        for i, (did, turn) in enumerate(flat)
    ]


def _head_labels(space: LabelSpace, head: str) -> tuple[str, ...]:
    if head == "ui":
        return space.ui_labels
    if head == "si":
        return space.si_labels
    raise ConfigError(f"selection head must be 'ui' or 'si', got {head!r}")


def calibrate_thresholds(teacher: ClassifierParams, validation: list[Dialog],
                         space: LabelSpace, vocab: Vocab,
                         target_precision: float) -> ThresholdPolicy:
    """Per-class rho: smallest grid value whose selections hit target precision."""
    if not 0.0 < target_precision <= 1.0:
        raise ConfigError("target_precision must be in (0, 1]")
    turns = [t for d in validation for t in d.turns]
    if not turns:
        raise EmptyDatasetError("calibration needs a labeled validation split")
    sequences = [vocab.encode(_turn_text(t, teacher.input_field)) for t in turns]
    probs = forward_batch(teacher, sequences)
    gold = {
        name: np.stack([
            encode_labels(space, t.user_intents, t.service_intents, t.slot_labels).head(name)
            for t in turns
        ])
        for name in HEADS
    }
    thresholds = {}
    for name in HEADS:
        scores = probs[name]
        k = scores.shape[1]
        rho = np.full(k, RHO_FALLBACK)
        for c in range(k):
            pos = gold[name][:, c] > 0.5
            for grid_rho in RHO_GRID:
                selected = scores[:, c] >= grid_rho
                n_sel = int(selected.sum())
                if n_sel == 0:
                    continue
                precision = float((selected & pos).sum()) / n_sel
                if precision >= target_precision:
                    rho[c] = grid_rho
                    break
        thresholds[name] = rho
    return ThresholdPolicy(thresholds)


def select(scored: list[ScoredExample], policy: ThresholdPolicy,
           head: str = "ui", space: LabelSpace | None = None,
           stage: str = "d_u") -> WeakDataset:
    """Keep turns with at least one class at or above its threshold.

    Kept turns receive as pseudo-labels exactly the classes whose score
    clears the class threshold.
    """
    rho = policy.head(head)
    kept: list[PseudoTurn] = []
    counts: dict[str, int] = {}
    for ex in scored:
        hits = np.flatnonzero(ex.probs[head] >= rho)
        if hits.size == 0:
            continue
        labels: set[str] = set()
        for c in hits:
            if space is not None:
                name = _head_labels(space, head)[int(c)]
            else:
                name = f"{head}:{int(c)}"
            labels.add(name)
            counts[name] = counts.get(name, 0) + 1
        pseudo = PseudoTurn(
            dialog_id=ex.dialog_id,
            turn_index=ex.turn_index,
            user_utterance=ex.turn.user_utterance,
            system_response=ex.turn.system_response,
        )
        if head == "ui":
            pseudo.ui = labels
        else:
            pseudo.si = labels
        kept.append(pseudo)
    return WeakDataset(turns=kept, stage=stage, report=counts)


def _pseudo_examples(turns: list[PseudoTurn], space: LabelSpace, vocab: Vocab,
                     negative_weight: float) -> list[TrainExample]:
    examples = []
    for pt in turns:
        labels = encode_labels(space, pt.ui, pt.si, set())
        weight: dict[str, float | np.ndarray] = {"slot": 0.0}
        for head, present in (("ui", pt.ui), ("si", pt.si)):
            if not present:
                weight[head] = 0.0
                continue
            vec = np.full(labels.head(head).shape, negative_weight)
            vec[labels.head(head) > 0.5] = 1.0
            weight[head] = vec
        examples.append(TrainExample(vocab.encode(pt.user_utterance), labels, weight))
    return examples


def _digest(params: ClassifierParams) -> str:
    return checkpoint.digest(params.arrays(), "classifier")


def _dev_intent_f1(params: ClassifierParams, dev: list[Dialog], space: LabelSpace,
                   vocab: Vocab, other_threshold: float) -> float:
    """Mean of dev UI and SI micro-F1; the fine-tune model-selection metric."""
    pred_ui, gold_ui, pred_si, gold_si = [], [], [], []
    for dialog in dev:
        for turn in dialog.turns:
            out = forward(params, vocab.encode(turn.user_utterance))
            ui, si, _ = predict(out, other_threshold, space)
            pred_ui.append(ui)
            gold_ui.append(set(turn.user_intents))
            pred_si.append(si)
            gold_si.append(set(turn.service_intents))
    return 0.5 * (intent_prf(pred_ui, gold_ui).f1 + intent_prf(pred_si, gold_si).f1)


def _finetune(student: ClassifierParams, examples: list[TrainExample],
              config: WeakConfig, dev: list[Dialog], space: LabelSpace,
              vocab: Vocab) -> tuple[ClassifierParams, dict]:
    if not config.finetune_dev_select:
        return train(student, examples, config.finetune), {"selected_epoch": None}
    snapshots: list[tuple[float, int, ClassifierParams]] = []

    def keep(epoch: int, params: ClassifierParams) -> None:
        score = _dev_intent_f1(params, dev, space, vocab,
                               config.finetune.other_threshold)
        snapshots.append((score, epoch, params.copy()))

    train(student, examples, config.finetune, epoch_callback=keep)
    best_score, best_epoch, best_params = max(
        snapshots, key=lambda item: (item[0], -item[1]))
    return best_params, {"selected_epoch": best_epoch, "dev_score": best_score}


def run_pipeline(
    labeled: list[Dialog],
    unlabeled: list[Dialog],
    space: LabelSpace,
    vocab: Vocab,
    encoder: EncoderParams,
    config: WeakConfig,
    dev: list[Dialog] | None = None,
) -> tuple[ClassifierParams, dict]:
    """Run the full teacher/student pipeline; returns (student, provenance report).

    When no dev split is supplied, a dev_fraction slice of the labeled pool is
    carved off (seeded) for threshold calibration and removed from teacher and
    fine-tuning data.
    """
    if not labeled:
        raise EmptyDatasetError("pipeline needs labeled dialogs")
    if dev is None or not dev:
        rng = np.random.default_rng(config.seed)
        n_dev = max(1, int(round(config.dev_fraction * len(labeled))))
        order = rng.permutation(len(labeled))
        dev = [labeled[i] for i in order[:n_dev]]
        labeled = [labeled[i] for i in order[n_dev:]]
        if not labeled:
            raise EmptyDatasetError("labeled pool exhausted by the dev carve-out")

    report: dict = {
        "n_labeled_dialogs": len(labeled),
        "n_labeled_turns": sum(len(d.turns) for d in labeled),
        "n_unlabeled_dialogs": len(unlabeled),
        "n_unlabeled_turns": sum(len(d.turns) for d in unlabeled),
        "target_precision": config.target_precision,
        "seeds": {
            "teacher": config.teacher.seed,
            "student": config.student.seed,
            "finetune": config.finetune.seed,
            "pipeline": config.seed,
        },
        "checkpoints": {},
    }

    ui_teacher = train_teacher("user", labeled, space, vocab, encoder, config.teacher)
    report["checkpoints"]["ui_teacher"] = _digest(ui_teacher)
    ui_policy = calibrate_thresholds(ui_teacher, dev, space, vocab, config.target_precision)
    report["ui_thresholds"] = {
        space.ui_labels[c]: float(r) for c, r in enumerate(ui_policy.head("ui"))
    }

    scored_u = score_unlabeled(ui_teacher, unlabeled, vocab)
    d_u = select(scored_u, ui_policy, head="ui", space=space, stage="d_u")
    report["d_u_size"] = len(d_u)
    report["d_u_class_counts"] = d_u.report

    si_teacher = train_teacher("service", labeled, space, vocab, encoder, config.teacher)
    report["checkpoints"]["si_teacher"] = _digest(si_teacher)
    si_policy = calibrate_thresholds(si_teacher, dev, space, vocab, config.target_precision)
    report["si_thresholds"] = {
        space.si_labels[c]: float(r) for c, r in enumerate(si_policy.head("si"))
    }

    # Second gate: survivors of the UI stage must also pass the SI thresholds.
    ui_by_key = {(pt.dialog_id, pt.turn_index): pt for pt in d_u.turns}
    scored_du = [
        ex for ex in score_unlabeled(si_teacher, unlabeled, vocab)
        if (ex.dialog_id, ex.turn_index) in ui_by_key
    ]
    d_hat_si = select(scored_du, si_policy, head="si", space=space, stage="d_hat")
    for pt in d_hat_si.turns:
        pt.ui = ui_by_key[(pt.dialog_id, pt.turn_index)].ui
    d_hat = WeakDataset(turns=d_hat_si.turns, stage="d_hat", report=d_hat_si.report)
    report["d_hat_size"] = len(d_hat)
    report["d_hat_class_counts"] = d_hat.report

    student = init_classifier(encoder, space, seed=config.student.seed,
                              input_field=USER_TEXT)
    labeled_examples = make_examples(labeled, space, vocab, USER_TEXT)
    student.class_weights = compute_class_weights(labeled_examples, space)
    if d_hat.turns:
        pseudo = _pseudo_examples(d_hat.turns, space, vocab,
                                  config.pseudo_negative_weight)
        student = train(student, pseudo, config.student,
                        freeze_encoder=config.student_freeze_encoder)
        report["student_trained_on_d_hat"] = True
    else:
        report["student_trained_on_d_hat"] = False
    report["checkpoints"]["student_pre_finetune"] = _digest(student)

    student, finetune_info = _finetune(student, labeled_examples, config, dev,
                                       space, vocab)
    report["finetune"] = finetune_info
    report["checkpoints"]["student"] = _digest(student)
    return student, report
