"""Three-head intent classifier over the shared sentence encoder.

One linear head per label family (user intents, service intents, slot tree
nodes), trained jointly with per-class weighted binary cross-entropy:

    L_head = sum_i w_i * [ y_i * -ln(sigmoid(x_i)) + (1-y_i) * -ln(1-sigmoid(x_i)) ]
    loss   = L_ui + L_si + L_slot

Prediction applies a 0.5 decision cut per class, falls back to the
catch-all "Other" when every class probability is below the Other
threshold, and decodes the slot head coarse-to-fine: argmax coarse node,
then argmax among that node's children only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .corpus import Dialog
from .encoder import EncoderParams, encode_backward, encode_batch
from .errors import ConfigError, EmptyDatasetError, ShapeMismatchError
from .optim import Adam
from .taxonomy import OTHER_LABEL, LabelSpace, LabelVector, encode_labels
from .text import Vocab

HEADS = ("ui", "si", "slot")

USER_TEXT = "usr"
SERVICE_TEXT = "sys"


@dataclass
class ClassifierParams:
    encoder: EncoderParams
    heads: dict[str, np.ndarray]                  # ui_w (d,K), ui_b (K,), ...
    class_weights: dict[str, np.ndarray]
    input_field: str = USER_TEXT

    def arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.heads)
        out.update(self.encoder.arrays())
        return out

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            encoder=self.encoder.copy(),
            heads={k: v.copy() for k, v in self.heads.items()},
            class_weights={k: v.copy() for k, v in self.class_weights.items()},
            input_field=self.input_field,
        )


@dataclass
class ClassifierOutput:
    logits: dict[str, np.ndarray]
    probs: dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    other_threshold: float = 0.1

    def validate(self) -> None:
        if not 0.0 < self.other_threshold < 1.0:
            raise ConfigError("other_threshold must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("bad batch_size/epochs/learning_rate")


@dataclass
class TrainExample:
    """One turn's text and targets.

    head_weight scales each head's loss for this example; a value may be a
    scalar or a per-class vector (e.g. to supervise only the classes a
    teacher was confident about).
    """

    tokens: list[int]
    labels: LabelVector
    head_weight: dict[str, float | np.ndarray] = field(
        default_factory=lambda: {"ui": 1.0, "si": 1.0, "slot": 1.0}
    )


def init_classifier(encoder: EncoderParams, space: LabelSpace, seed: int = 0,
                    input_field: str = USER_TEXT) -> ClassifierParams:
    rng = np.random.default_rng(seed)
    d = encoder.d
    heads = {}
    for name, k in space.head_sizes().items():
        heads[f"{name}_w"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, k))
        heads[f"{name}_b"] = np.zeros(k)
    weights = {name: np.ones(k) for name, k in space.head_sizes().items()}
    return ClassifierParams(encoder.copy(), heads, weights, input_field)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(params: ClassifierParams, tokens: list[int]) -> ClassifierOutput:
    """Deterministic eval-mode forward pass for one token sequence."""
    h, _ = encode_batch(params.encoder, [tokens])
    logits = {name: h[0] @ params.heads[f"{name}_w"] + params.heads[f"{name}_b"]
              for name in HEADS}
    return ClassifierOutput(logits=logits, probs={k: _sigmoid(v) for k, v in logits.items()})


def forward_batch(params: ClassifierParams, sequences: list[list[int]]) -> dict[str, np.ndarray]:
    h, _ = encode_batch(params.encoder, sequences)
    return {name: _sigmoid(h @ params.heads[f"{name}_w"] + params.heads[f"{name}_b"])
            for name in HEADS}


def bce_loss(logits: np.ndarray, labels: np.ndarray, class_weights: np.ndarray) -> float:
    """Weighted binary cross-entropy, computed in its saturation-safe form."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if logits.shape != labels.shape or logits.shape != class_weights.shape:
        raise ShapeMismatchError(
            f"logits {logits.shape}, labels {labels.shape}, weights {class_weights.shape}"
        )
    per_class = np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    return float(np.sum(class_weights * per_class))


def joint_loss(
    output: ClassifierOutput, gold: LabelVector, class_weights: dict[str, np.ndarray]
) -> tuple[float, dict[str, float]]:
    per_head = {
        name: bce_loss(output.logits[name], gold.head(name), class_weights[name])
        for name in HEADS
    }
    return float(sum(per_head.values())), per_head


def compute_class_weights(examples: list[TrainExample], space: LabelSpace) -> dict[str, np.ndarray]:
    """Inverse class frequency per head, normalized to mean 1."""
    sizes = space.head_sizes()
    weights = {}
    for name, k in sizes.items():
        counts = np.zeros(k)
        total = 0
        for ex in examples:
            if ex.head_weight.get(name, 1.0) > 0:
                counts += ex.labels.head(name)
                total += 1
        if total == 0 or not counts.any():
            weights[name] = np.ones(k)
            continue
        freq = counts / total
        w = np.empty(k)
        positive = counts > 0
        w[positive] = 1.0 / freq[positive]
        # classes without a single positive carry no recall signal; give them
        # the least emphasis seen among the real classes
        w[~positive] = w[positive].min()
        weights[name] = w / w.mean()
    return weights


def train(params: ClassifierParams, examples: list[TrainExample],
          config: TrainConfig, epoch_callback=None,
          freeze_encoder: bool = False) -> ClassifierParams:
    """Minibatch Adam on the joint loss; encoder and heads update together.

    `epoch_callback(epoch, params)`, when given, observes the live parameters
    after each epoch (for dev-based checkpoint selection). With
    `freeze_encoder` the embedding/projection stay fixed and only the heads
    learn; pseudo-label training uses this so label noise cannot distort the
    pretrained representation.
    """
    config.validate()
    if not examples:
        raise EmptyDatasetError("no training examples")
    out = params.copy()
    if config.epochs == 0:
        return out
    rng = np.random.default_rng(config.seed)
    adam = Adam(config.learning_rate)
    arrays = out.arrays()
    n = len(examples)
    sizes = {name: examples[0].labels.head(name).shape[0] for name in HEADS}
    targets = {name: np.stack([ex.labels.head(name) for ex in examples]) for name in HEADS}
    head_w = {
        name: np.stack([
            np.broadcast_to(np.asarray(ex.head_weight.get(name, 1.0), dtype=np.float64),
                            (sizes[name],))
            for ex in examples
        ])
        for name in HEADS
    }
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [examples[i].tokens for i in idx]
            h, cache = encode_batch(out.encoder, batch, train=True, rng=rng)
            grads: dict[str, np.ndarray] = {}
            dh = np.zeros_like(h)
            scale = 1.0 / len(idx)
            for name in HEADS:
                w = out.heads[f"{name}_w"]
                b = out.heads[f"{name}_b"]
                logits = h @ w + b
                y = targets[name][idx]
                dlogits = out.class_weights[name][None, :] * (_sigmoid(logits) - y)
                dlogits *= head_w[name][idx] * scale
                grads[f"{name}_w"] = h.T @ dlogits
                grads[f"{name}_b"] = dlogits.sum(axis=0)
                dh += dlogits @ w.T
            if not freeze_encoder:
                grads.update(encode_backward(out.encoder, cache, dh))
            adam.step(arrays, grads)
        if epoch_callback is not None:
            epoch_callback(epoch, out)
    return out


def predict(
    output: ClassifierOutput, other_threshold: float, space: LabelSpace
) -> tuple[set[str], set[str], set]:
    """Label sets per head with the "Other" fallback and hierarchical slots."""
    if not 0.0 < other_threshold < 1.0:
        raise ConfigError("other_threshold must be in (0, 1)")

    def flat_head(probs: np.ndarray, names: tuple[str, ...]) -> set[str]:
        if probs.size == 0 or probs.max() < other_threshold:
            return {OTHER_LABEL}
        return {names[i] for i in np.flatnonzero(probs >= 0.5)}

    ui = flat_head(output.probs["ui"], space.ui_labels)
    si = flat_head(output.probs["si"], space.si_labels)

    slot_probs = output.probs["slot"]
    tree = space.tree
    n_coarse = len(tree.coarse)
    coarse_probs = slot_probs[:n_coarse]
    if coarse_probs.max() < other_threshold:
        return ui, si, {OTHER_LABEL}
    coarse_name = tree.coarse[int(np.argmax(coarse_probs))]
    kids = tree.children(coarse_name)
    if not kids:
        return ui, si, {(coarse_name, None)}
    fine_ids = [tree.fine_id(k, coarse_name) for k in kids]
    best = int(np.argmax(slot_probs[fine_ids]))
    if slot_probs[fine_ids[best]] >= 0.5:
        return ui, si, {(coarse_name, kids[best])}
    return ui, si, {(coarse_name, None)}


def make_examples(dialogs: list[Dialog], space: LabelSpace, vocab: Vocab,
                  input_field: str = USER_TEXT) -> list[TrainExample]:
    examples = []
    for dialog in dialogs:
        for turn in dialog.turns:
            text = turn.user_utterance if input_field == USER_TEXT else turn.system_response
            labels = encode_labels(space, turn.user_intents, turn.service_intents,
                                   turn.slot_labels)
            examples.append(TrainExample(tokens=vocab.encode(text), labels=labels))
    return examples


def save_classifier(path, params: ClassifierParams, space: LabelSpace, vocab: Vocab) -> None:
    arrays = dict(params.arrays())
    for name in HEADS:
        arrays[f"cw_{name}"] = params.class_weights[name]
    meta = {
        "d": params.encoder.d,
        "dropout_rate": params.encoder.dropout_rate,
        "input_field": params.input_field,
        "ui_labels": list(space.ui_labels),
        "si_labels": list(space.si_labels),
        "tokens": vocab.tokens,
    }
    checkpoint.save(path, arrays, kind="classifier", meta=meta)


def load_classifier(path) -> tuple[ClassifierParams, LabelSpace, Vocab]:
    arrays, _, meta = checkpoint.load(path, expect_kind="classifier")
    encoder = EncoderParams(arrays["emb"], arrays["proj"], arrays["bias"],
                            dropout_rate=meta["dropout_rate"])
    heads = {k: arrays[k] for k in arrays if k.endswith(("_w", "_b")) and not k.startswith("cw_")}
    weights = {name: arrays[f"cw_{name}"] for name in HEADS}
    space = LabelSpace(ui_labels=tuple(meta["ui_labels"]), si_labels=tuple(meta["si_labels"]))
    params = ClassifierParams(encoder, heads, weights, meta["input_field"])
    return params, space, Vocab(list(meta["tokens"]))
