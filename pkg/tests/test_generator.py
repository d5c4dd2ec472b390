import numpy as np
import pytest

from todpipe.corpus import Dialog, EntityRecord, LocalKB, SyntheticSpec, Turn, generate_synthetic
from todpipe.errors import OversizeContextError
from todpipe.generator import (
    ENTITY_DECODE_BANNED,
    GENERATION_BANNED,
    INFORM_LABEL,
    SystemState,
    apply_inform_substitution,
    build_lm_training_sequences,
    gold_kb_result,
    predict_entities,
    respond,
    run_system,
    serialize_context,
)
from todpipe.kb import KbResult
from todpipe.lm import LmConfig, LmTrainConfig, init_lm, lm_train
from todpipe.classifier import TrainConfig, init_classifier, make_examples, compute_class_weights, train
from todpipe.encoder import init_encoder
from todpipe.taxonomy import ASK_ENTITY, OTHER_LABEL, default_label_space
from todpipe.text import ENT_ID, EOS_ID, KB_ID, SI_ID, SYS_ID, UI_ID, USR_ID, build_vocab

SPACE = default_label_space()


def corpus_vocab(split):
    texts = []
    for dialog in split.labeled + split.dev + split.test:
        for turn in dialog.turns:
            texts.append(turn.user_utterance)
            texts.append(turn.system_response)
        for ent in dialog.local_kb.entities:
            texts.append(ent.name)
            for attr, value in ent.attributes.items():
                texts.extend([attr, value])
    return build_vocab(texts, extra_tokens=[INFORM_LABEL, OTHER_LABEL])


@pytest.fixture(scope="module")
def vocab():
    return corpus_vocab(generate_synthetic(SyntheticSpec(20, 0, 2, 0.0, seed=21)))


def test_serialize_all_empty_is_pure_markers(vocab):
    tokens = serialize_context(set(), set(), [], "", KbResult(), vocab)
    assert tokens == [UI_ID, SI_ID, ENT_ID, USR_ID, KB_ID, SYS_ID]


def test_serialize_golden_layout(vocab):
    kb_result = KbResult(triples=[("畅享套餐A", "月费", "58元")], exact=True)
    tokens = serialize_context({"查询费用"}, {INFORM_LABEL}, ["畅享套餐A"],
                               "月费是多少", kb_result, vocab)
    expect = ([UI_ID] + vocab.encode("查询费用")
              + [SI_ID] + vocab.encode(INFORM_LABEL)
              + [ENT_ID] + vocab.encode("畅享套餐A")
              + [USR_ID] + vocab.encode("月费是多少")
              + [KB_ID] + vocab.encode("畅享套餐A") + vocab.encode("月费") + vocab.encode("58元")
              + [SYS_ID])
    assert tokens == expect


def test_serialize_label_order_canonical(vocab):
    a = serialize_context({"查询费用", "自述情况"}, set(), [], "x", KbResult(), vocab)
    b = serialize_context({"自述情况", "查询费用"}, set(), [], "x", KbResult(), vocab)
    assert a == b


def test_serialize_truncates_from_left(vocab):
    long_utt = "月费" * 10
    full = serialize_context({"查询费用"}, set(), ["畅享套餐A"], long_utt, KbResult(), vocab)
    usr_pos = full.index(USR_ID)
    budget = len(full) - usr_pos
    truncated = serialize_context({"查询费用"}, set(), ["畅享套餐A"], long_utt,
                                  KbResult(), vocab, max_context=budget)
    assert truncated == full[-budget:]
    assert truncated[0] == USR_ID


def test_serialize_oversize_raises(vocab):
    with pytest.raises(OversizeContextError):
        serialize_context(set(), set(), [], "月费" * 30, KbResult(), vocab,
                          max_context=10)


def test_inform_substitution_on_exact_result():
    result = KbResult(triples=[("e", "月费", "8元")], exact=True)
    assert apply_inform_substitution({"告知信息"}, result) == {INFORM_LABEL}


def test_inform_substitution_skips_inexact_or_empty():
    assert apply_inform_substitution({"确认需求"}, KbResult()) == {"确认需求"}
    inexact = KbResult(triples=[("e", "月费", "8元")], exact=False)
    assert apply_inform_substitution({"确认需求"}, inexact) == {"确认需求"}


def test_inform_substitution_idempotent():
    result = KbResult(triples=[("e", "月费", "8元")], exact=True)
    once = apply_inform_substitution({"引导办理"}, result)
    assert apply_inform_substitution(once, result) == once


def test_training_sequences_mask_shapes(vocab):
    split = generate_synthetic(SyntheticSpec(5, 0, 2, 0.0, seed=3))
    seqs = build_lm_training_sequences(split.labeled, SPACE, vocab, 256)
    assert seqs, "no sequences built"
    for ids, mask in seqs:
        assert len(ids) == len(mask)
        assert set(mask) <= {0, 1}
        assert mask[0] == 0
        if SYS_ID in ids:
            sys_pos = ids.index(SYS_ID)
            assert all(m == 0 for m in mask[: sys_pos + 1])
            assert all(m == 1 for m in mask[sys_pos + 1:])
            assert ids[-1] == EOS_ID
        else:
            # entity sequence: loss starts right after the <ent> marker
            ent_pos = ids.index(ENT_ID)
            assert all(m == 0 for m in mask[: ent_pos + 1])
            assert all(m == 1 for m in mask[ent_pos + 1:])
            assert ids[-1] == USR_ID


def test_gold_kb_result_resolves_anaphora(vocab):
    kb = LocalKB([EntityRecord("畅享套餐A", "plan", {"月费": "58元", "流量": "10GB",
                                                     "通话时长": "300分钟",
                                                     "开通规则": "次月生效"})])
    turn = Turn(1, "那它的月费是多少", "58元。", {"查询费用"}, {"告知信息"},
                {(ASK_ENTITY, "Fee")}, [], [("畅享套餐A", "月费", "58元")])
    result = gold_kb_result(turn, kb, SPACE, history_entities=["畅享套餐A"])
    assert result.triples == [("畅享套餐A", "月费", "58元")]
    assert result.exact


@pytest.fixture(scope="module")
def trained_system():
    split = generate_synthetic(SyntheticSpec(40, 0, 2, 0.0, seed=17))
    vocab = corpus_vocab(split)
    enc = init_encoder(len(vocab), d=32, seed=0, dropout_rate=0.1)
    clf = init_classifier(enc, SPACE, seed=0)
    examples = make_examples(split.labeled, SPACE, vocab)
    clf.class_weights = compute_class_weights(examples, SPACE)
    clf = train(clf, examples, TrainConfig(epochs=25, seed=0))
    cfg = LmConfig(vocab_size=len(vocab), d_model=32, n_layers=2, n_heads=2,
                   context_window=256)
    seqs = build_lm_training_sequences(split.labeled, SPACE, vocab, 256)
    lm = lm_train(init_lm(cfg, seed=0), seqs,
                  LmTrainConfig(batch_size=16, epochs=6, seed=0))
    state = SystemState(classifier=clf, lm=lm, space=SPACE, vocab=vocab,
                        beam_size=3, max_gen_len=40)
    return state, split


def test_predict_entities_only_returns_kb_names(trained_system):
    state, split = trained_system
    dialog = split.test[0]
    names = predict_entities(state.lm, state.vocab, [], dialog.turns[0].user_utterance,
                             dialog.local_kb)
    kb_names = set(dialog.local_kb.names())
    assert all(n in kb_names for n in names)
    assert len(names) <= 8


def test_predict_entities_untrained_model_terminates(vocab):
    cfg = LmConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2,
                   context_window=128)
    lm = init_lm(cfg, seed=0)
    kb = LocalKB([EntityRecord("畅享套餐A", "plan", {"月费": "8元"})])
    names = predict_entities(lm, vocab, [], "", kb, max_steps=16)
    assert isinstance(names, list)
    assert all(n == "畅享套餐A" for n in names)


def test_predict_entities_memorization_fixture():
    """Each trigger phrase always precedes one entity; after overfitting, the
    entity is decoded from its trigger."""
    entities = [("红卡", "问红卡的事"), ("蓝卡", "问蓝卡的事"), ("金卡", "问金卡的事")]
    kb = LocalKB([EntityRecord(name, "plan", {"月费": "8元"}) for name, _ in entities])
    dialogs = []
    for i in range(12):
        name, trigger = entities[i % len(entities)]
        turn = Turn(0, trigger, "好的。", {"查询费用"}, {"告知信息"},
                    {(ASK_ENTITY, "Fee")}, [name], [])
        dialogs.append(Dialog(f"fix-{i}", [turn], kb, labeled=True))
    texts = [t for _, t in entities] + [n for n, _ in entities] + ["好的。月费8元"]
    vocab = build_vocab(texts, extra_tokens=[INFORM_LABEL, OTHER_LABEL])
    cfg = LmConfig(vocab_size=len(vocab), d_model=24, n_layers=1, n_heads=2,
                   context_window=64)
    seqs = build_lm_training_sequences(dialogs, SPACE, vocab, 64)
    lm = lm_train(init_lm(cfg, seed=1), seqs,
                  LmTrainConfig(learning_rate=5e-3, batch_size=8, epochs=60, seed=1))
    for name, trigger in entities:
        assert predict_entities(lm, vocab, [], trigger, kb) == [name]


def test_respond_forces_kb_value_with_oracle_intents(trained_system):
    state, split = trained_system
    checked = 0
    for dialog in split.test:
        history = []
        for turn in dialog.turns:
            if turn.gold_kb_triples:
                result = respond(
                    state, history, turn.user_utterance, dialog.local_kb,
                    oracle=(turn.user_intents, turn.service_intents,
                            turn.slot_labels, turn.mentioned_entities))
                for _, _, value in turn.gold_kb_triples:
                    assert value in result.response_text
                checked += 1
            history = list(dict.fromkeys(history + turn.mentioned_entities))
    assert checked >= 5


def test_respond_predicted_path_forces_fee_value(trained_system):
    """Classifier-driven turn: a fee question about an entity under discussion
    resolves through the history and the fee value is forced verbatim."""
    state, split = trained_system
    checked = 0
    for dialog in split.test:
        for entity in dialog.local_kb.entities:
            result = respond(state, [entity.name], f"{entity.name}的月费是多少",
                             dialog.local_kb)
            if "查询费用" in result.ui:
                checked += 1
                assert entity.attributes["月费"] in result.response_text
        if checked >= 4:
            break
    assert checked >= 3


def test_respond_other_everywhere_means_no_kb_and_no_constraints(trained_system):
    state, split = trained_system
    dialog = split.test[0]
    result = respond(state, [], "谢谢再见", dialog.local_kb,
                     oracle=({OTHER_LABEL}, {OTHER_LABEL}, {OTHER_LABEL}, []))
    assert result.kb.triples == []
    assert result.constraints == []


def test_respond_deterministic(trained_system):
    state, split = trained_system
    dialog = split.test[0]
    utt = dialog.turns[0].user_utterance
    a = respond(state, [], utt, dialog.local_kb)
    b = respond(state, [], utt, dialog.local_kb)
    assert a.response_text == b.response_text
    assert a.ui == b.ui and a.si == b.si


def test_respond_never_emits_markers(trained_system):
    state, split = trained_system
    dialog = split.test[0]
    result = respond(state, [], dialog.turns[0].user_utterance, dialog.local_kb)
    assert not set(result.response_tokens) & set(GENERATION_BANNED)
    assert EOS_ID not in result.response_tokens


def test_run_system_one_record_per_turn(trained_system):
    state, split = trained_system
    records = run_system(state, split.test[:3])
    keys = [(r["dialog_id"], r["turn_index"]) for r in records]
    expect = [(d.dialog_id, t.turn_index) for d in split.test[:3] for t in d.turns]
    assert keys == expect
    for record in records:
        assert {"ui", "si_pre", "si_post", "kb_triples", "constraints",
                "score", "response"} <= set(record)
