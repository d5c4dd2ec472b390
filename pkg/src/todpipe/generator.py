"""Context serialization, entity prediction, and KB-grounded response decoding.

A turn's generation context is one flat token sequence:

    <ui> UI labels (sorted)  <si> SI labels (sorted)  <ent> entity names
    <usr> user utterance     <kb> triples as entity/attribute/value runs
    <sys>

and training sequences extend it with the gold response plus <eos>, the
cross-entropy loss masked to positions after <sys>. A second sequence form
teaches autoregressive entity prediction: <usr> utterance <ent> history
entities, continued by the current entities and closed with another <usr>;
loss runs over the positions after <ent>.

When the KB lookup produced exact results, the predicted service intents are
replaced by the single "inform" intention before serialization, and each KB
value becomes a hard decoding constraint so it appears verbatim in the
response.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beam import generate
from .classifier import ClassifierParams, forward, predict
from .corpus import Dialog, LocalKB, Turn
from .errors import OversizeContextError
from .kb import KbQuery, KbResult, lookup
from .lm import LmParams, lm_prefill, lm_step
from .taxonomy import OTHER_LABEL, LabelSpace
from .text import (
    ENT_ID,
    EOS_ID,
    KB_ID,
    PAD_ID,
    SI_ID,
    SYS_ID,
    UI_ID,
    UNK_ID,
    USR_ID,
    Vocab,
)

INFORM_LABEL = "inform"

GENERATION_BANNED = (PAD_ID, UNK_ID, UI_ID, SI_ID, ENT_ID, USR_ID, KB_ID, SYS_ID)
ENTITY_DECODE_BANNED = (PAD_ID, UNK_ID, UI_ID, SI_ID, ENT_ID, KB_ID, SYS_ID, EOS_ID)


def serialize_context(
    ui: set[str],
    si: set[str],
    entities: list[str],
    utterance: str,
    kb_result: KbResult,
    vocab: Vocab,
    max_context: int | None = None,
) -> list[int]:
    """Flat marker-delimited context; canonical (label sets are sorted).

    If the sequence exceeds `max_context`, tokens are dropped from the left,
    oldest first; the block from <usr> onward must survive or
    OversizeContextError is raised.
    """
    tokens: list[int] = [UI_ID]
    for label in sorted(ui):
        tokens.extend(vocab.encode(label))
    tokens.append(SI_ID)
    for label in sorted(si):
        tokens.extend(vocab.encode(label))
    tokens.append(ENT_ID)
    for name in entities:
        tokens.extend(vocab.encode(name))
    usr_pos = len(tokens)
    tokens.append(USR_ID)
    tokens.extend(vocab.encode(utterance))
    tokens.append(KB_ID)
    for ent_name, attr, value in kb_result.triples:
        tokens.extend(vocab.encode(ent_name))
        tokens.extend(vocab.encode(attr))
        tokens.extend(vocab.encode(value))
    tokens.append(SYS_ID)
    if max_context is not None and len(tokens) > max_context:
        if len(tokens) - usr_pos > max_context:
            raise OversizeContextError(
                f"context needs {len(tokens) - usr_pos} tokens from <usr> on, "
                f"budget is {max_context}"
            )
        tokens = tokens[len(tokens) - max_context:]
    return tokens


def _dedup(names: list[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for n in names:
        if n not in seen:
            seen.add(n)
            out.append(n)
    return out


def gold_kb_result(turn: Turn, local_kb: LocalKB, space: LabelSpace,
                   history_entities: list[str] = ()) -> KbResult:
    """KB result the engine produces for a turn's gold slots and entities."""
    entity_name = turn.mentioned_entities[0] if turn.mentioned_entities else None
    merged = KbResult()
    seen: set[tuple[str, str, str]] = set()
    history = list(history_entities) + list(turn.mentioned_entities)
    for coarse, fine in sorted(turn.slot_labels, key=lambda p: (p[0], p[1] or "")):
        result = lookup(
            local_kb,
            KbQuery(coarse, fine, entity_name, frozenset(turn.user_intents)),
            history,
            space,
        )
        for triple in result.triples:
            if triple not in seen:
                seen.add(triple)
                merged.triples.append(triple)
        merged.exact = merged.exact or result.exact
    return merged


def apply_inform_substitution(si: set[str], kb_result: KbResult) -> set[str]:
    """Exact KB results collapse the service intents to {"inform"}."""
    if kb_result.exact and kb_result.triples:
        return {INFORM_LABEL}
    return set(si)


def build_lm_training_sequences(
    dialogs: list[Dialog],
    space: LabelSpace,
    vocab: Vocab,
    context_window: int = 256,
) -> list[tuple[list[int], list[int]]]:
    """(token ids, target mask) pairs: response sequences and entity sequences."""
    sequences = []
    for dialog in dialogs:
        # raw mention sequence: resolution is recency-sensitive, so no dedup
        history: list[str] = []
        for turn in dialog.turns:
            kb_result = gold_kb_result(turn, dialog.local_kb, space, history)
            si_used = apply_inform_substitution(turn.service_intents, kb_result)
            ents = _dedup(history + turn.mentioned_entities)
            target = vocab.encode(turn.system_response) + [EOS_ID]
            budget = context_window - len(target)
            try:
                ctx = serialize_context(
                    turn.user_intents, si_used, ents, turn.user_utterance,
                    kb_result, vocab, max_context=budget if budget > 0 else 0,
                )
            except OversizeContextError:
                ctx = None
            if ctx is not None:
                ids = ctx + target
                mask = [0] * len(ctx) + [1] * len(target)
                sequences.append((ids, mask))

            ent_prefix = [USR_ID] + vocab.encode(turn.user_utterance) + [ENT_ID]
            ent_body: list[int] = []
            seen_names = _dedup(history)
            for name in seen_names:
                ent_body.extend(vocab.encode(name))
            for name in turn.mentioned_entities:
                if name not in seen_names:
                    ent_body.extend(vocab.encode(name))
            ent_ids = ent_prefix + ent_body + [USR_ID]
            if len(ent_ids) <= context_window:
                ent_mask = [0] * len(ent_prefix) + [1] * (len(ent_body) + 1)
                sequences.append((ent_ids, ent_mask))

            history = history + turn.mentioned_entities
    return sequences


def predict_entities(
    params: LmParams,
    vocab: Vocab,
    history_entities: list[str],
    utterance: str,
    local_kb: LocalKB,
    max_steps: int = 64,
    max_names: int = 8,
) -> list[str]:
    """Greedy decode of the current turn's entity names; KB-filtered.

    Decoding runs after the <ent> marker until a <usr> terminator or the step
    cap; whatever is decoded is matched against KB entity names (longest
    match, left to right) and anything else is discarded.
    """
    prompt = [USR_ID] + vocab.encode(utterance) + [ENT_ID]
    for name in history_entities:
        prompt.extend(vocab.encode(name))
    budget = params.config.context_window - len(prompt) - 1
    if budget <= 0:
        return []
    ids = np.asarray([prompt], dtype=np.int64)
    logits, cache = lm_prefill(params, ids)
    decoded: list[int] = []
    for _ in range(min(max_steps, budget)):
        row = logits[0].copy()
        row[list(ENTITY_DECODE_BANNED)] = -np.inf
        nxt = int(np.argmax(row))
        if nxt == USR_ID:
            break
        decoded.append(nxt)
        logits = lm_step(params, cache, np.asarray([nxt], dtype=np.int64))

    name_tokens = [(ent.name, tuple(vocab.encode(ent.name))) for ent in local_kb.entities]
    name_tokens.sort(key=lambda pair: -len(pair[1]))
    found: list[str] = []
    i = 0
    while i < len(decoded):
        for name, toks in name_tokens:
            if toks and tuple(decoded[i : i + len(toks)]) == toks:
                if name not in found:
                    found.append(name)
                i += len(toks)
                break
        else:
            i += 1
    return found[:max_names]


@dataclass
class SystemState:
    classifier: ClassifierParams
    lm: LmParams
    space: LabelSpace
    vocab: Vocab
    beam_size: int = 4
    max_gen_len: int = 48
    other_threshold: float = 0.1


@dataclass
class TurnResult:
    ui: set[str]
    si: set[str]                      # pre-substitution prediction
    si_used: set[str]                 # fed to the generator
    slots: set
    predicted_entities: list[str]
    kb: KbResult
    constraints: list[list[int]]
    response_text: str
    response_tokens: list[int] = field(default_factory=list)
    score: float = 0.0
    forced_completion: bool = False
    probs: dict[str, list[float]] = field(default_factory=dict)

    def log_record(self, dialog_id: str, turn_index: int) -> dict:
        return {
            "dialog_id": dialog_id,
            "turn_index": turn_index,
            "ui": sorted(self.ui),
            "si_pre": sorted(self.si),
            "si_post": sorted(self.si_used),
            "slots": [list(p) for p in sorted(
                (s for s in self.slots if isinstance(s, tuple)),
                key=lambda p: (p[0], p[1] or ""))]
            + ([OTHER_LABEL] if OTHER_LABEL in self.slots else []),
            "kb_triples": [list(t) for t in self.kb.triples],
            "kb_exact": self.kb.exact,
            "constraints": [list(c) for c in self.constraints],
            "entities": list(self.predicted_entities),
            "probs": self.probs,
            "score": self.score,
            "forced_completion": self.forced_completion,
            "response": self.response_text,
        }


def _kb_from_slots(
    slots: set, entity_name: str | None, ui: set[str],
    history: list[str], local_kb: LocalKB, space: LabelSpace,
) -> KbResult:
    merged = KbResult()
    seen: set[tuple[str, str, str]] = set()
    pairs = sorted((s for s in slots if isinstance(s, tuple)),
                   key=lambda p: (p[0], p[1] or ""))
    for coarse, fine in pairs:
        result = lookup(local_kb, KbQuery(coarse, fine, entity_name, frozenset(ui)),
                        history, space)
        for triple in result.triples:
            if triple not in seen:
                seen.add(triple)
                merged.triples.append(triple)
        merged.exact = merged.exact or result.exact
    return merged


def respond(
    state: SystemState,
    history_entities: list[str],
    utterance: str,
    local_kb: LocalKB,
    oracle: tuple[set[str], set[str], set, list[str]] | None = None,
) -> TurnResult:
    """Full turn: classify, resolve KB, substitute intents, decode with forcing.

    `oracle`, when given, supplies gold (ui, si, slots, mentioned entities)
    in place of the classifier and entity predictor.
    """
    probs: dict[str, list[float]] = {}
    if oracle is None:
        output = forward(state.classifier, state.vocab.encode(utterance))
        ui, si, slots = predict(output, state.other_threshold, state.space)
        # exact KB-name mentions in the utterance take priority over the
        # autoregressive predictions; both feed the same resolution rule
        mentioned = [e.name for e in local_kb.entities if e.name in utterance]
        entities = _dedup(mentioned + predict_entities(
            state.lm, state.vocab, history_entities, utterance, local_kb))
        probs = {name: [float(p) for p in output.probs[name]]
                 for name in output.probs}
    else:
        ui, si, slots, entities = oracle
        ui, si, slots = set(ui), set(si), set(slots)
        entities = list(entities)

    entity_name = entities[0] if entities else None
    kb_result = _kb_from_slots(slots, entity_name, ui, history_entities,
                               local_kb, state.space)
    si_used = apply_inform_substitution(si, kb_result)
    constraints = []
    for value in kb_result.values():
        toks = state.vocab.encode(value)
        if toks:
            constraints.append(toks)

    max_context = state.lm.config.context_window - state.max_gen_len - 2
    context = serialize_context(
        ui, si_used, _dedup(history_entities + entities), utterance,
        kb_result, state.vocab, max_context=max_context,
    )
    tokens, info = generate(state.lm, context, constraints, state.beam_size,
                            state.max_gen_len, banned_ids=GENERATION_BANNED,
                            return_info=True)
    return TurnResult(
        ui=ui, si=si, si_used=si_used, slots=slots,
        predicted_entities=entities, kb=kb_result, constraints=constraints,
        response_text=state.vocab.decode(tokens), response_tokens=tokens,
        score=info["score"], forced_completion=info["fallback"], probs=probs,
    )


def run_system(
    state: SystemState, dialogs: list[Dialog], oracle_intents: bool = False,
) -> list[dict]:
    """Respond to every turn of every dialog; history entities follow gold.

    Returns one record per turn combining the prediction dump and the
    generation log.
    """
    records = []
    for dialog in dialogs:
        # raw mention sequence; resolution prefers the most recent mention
        history: list[str] = []
        for turn in dialog.turns:
            oracle = None
            if oracle_intents:
                oracle = (turn.user_intents, turn.service_intents,
                          turn.slot_labels, turn.mentioned_entities)
            result = respond(state, history, turn.user_utterance,
                             dialog.local_kb, oracle=oracle)
            records.append(result.log_record(dialog.dialog_id, turn.turn_index))
            history = history + list(turn.mentioned_entities)
    return records
