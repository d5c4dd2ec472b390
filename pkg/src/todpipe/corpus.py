"""Dialogue corpus data model, line-delimited file I/O, synthetic generation.

A corpus file is UTF-8, one dialog per line. Each line is a JSON object:

    {"dialog_id": str, "labeled": bool,
     "kb":    [{"name": str, "type": str, "attrs": {str: str}}, ...],
     "turns": [{"idx": int, "usr": str, "sys": str,
                "ui": [str], "si": [str], "slots": [[str, str|null]],
                "ents": [str], "kb_gold": [[str, str, str]]}, ...],
     "split": "dev" | "test"}          # optional; absent for train dialogs

Unknown fields are rejected. Dialogs without a "split" field belong to the
labeled pool when "labeled" is true and to the unlabeled pool otherwise, so
the field is only ever written for dev/test dialogs and files written by
save_corpus round-trip byte-identically through load_corpus.

The synthetic generator produces schema-compatible telecom customer-service
dialogs (plans, data packages, fees) with gold intent/slot/entity/KB
annotations drawn from the default taxonomy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, SpecError, ValidationError
from .taxonomy import (
    ASK_ENTITY,
    ASK_INTRODUCTION,
    OTHER_LABEL,
    TALK_ABOUT_SELF,
    LabelSpace,
    default_label_space,
)


@dataclass
class EntityRecord:
    name: str
    entity_type: str
    attributes: dict[str, str]


@dataclass
class LocalKB:
    entities: list[EntityRecord] = field(default_factory=list)

    def get(self, name: str) -> EntityRecord | None:
        for ent in self.entities:
            if ent.name == name:
                return ent
        return None

    def names(self) -> list[str]:
        return [e.name for e in self.entities]


@dataclass
class Turn:
    turn_index: int
    user_utterance: str
    system_response: str
    user_intents: set[str] = field(default_factory=set)
    service_intents: set[str] = field(default_factory=set)
    slot_labels: set[tuple[str, str | None]] = field(default_factory=set)
    mentioned_entities: list[str] = field(default_factory=list)
    gold_kb_triples: list[tuple[str, str, str]] = field(default_factory=list)


@dataclass
class Dialog:
    dialog_id: str
    turns: list[Turn]
    local_kb: LocalKB
    labeled: bool


@dataclass
class CorpusSplit:
    labeled: list[Dialog] = field(default_factory=list)
    unlabeled: list[Dialog] = field(default_factory=list)
    dev: list[Dialog] = field(default_factory=list)
    test: list[Dialog] = field(default_factory=list)

    def all_dialogs(self) -> list[Dialog]:
        return self.labeled + self.unlabeled + self.dev + self.test


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_dialog(dialog: Dialog, space: LabelSpace | None = None) -> None:
    if not dialog.dialog_id:
        raise ValidationError("dialog_id must be nonempty")
    names = dialog.local_kb.names()
    if len(set(names)) != len(names):
        raise ValidationError(f"{dialog.dialog_id}: duplicate entity name in local KB")
    for ent in dialog.local_kb.entities:
        if not ent.name:
            raise ValidationError(f"{dialog.dialog_id}: entity with empty name")
    prev = -1
    for turn in dialog.turns:
        if turn.turn_index <= prev:
            raise ValidationError(
                f"{dialog.dialog_id}: turn_index {turn.turn_index} not strictly increasing"
            )
        prev = turn.turn_index
        for triple in turn.gold_kb_triples:
            ent_name, attr, value = triple
            ent = dialog.local_kb.get(ent_name)
            if ent is None or ent.attributes.get(attr) != value:
                raise ValidationError(
                    f"{dialog.dialog_id} turn {turn.turn_index}: gold KB triple "
                    f"{triple!r} does not resolve in the local KB"
                )
        if not dialog.labeled:
            if (
                turn.user_intents
                or turn.service_intents
                or turn.slot_labels
                or turn.mentioned_entities
                or turn.gold_kb_triples
            ):
                raise ValidationError(
                    f"{dialog.dialog_id}: unlabeled dialog carries annotations"
                )
        if space is not None:
            for label in turn.user_intents:
                if label != OTHER_LABEL and label not in space.ui_labels:
                    raise ValidationError(
                        f"{dialog.dialog_id}: unknown UI label {label!r}"
                    )
            for label in turn.service_intents:
                if label != OTHER_LABEL and label not in space.si_labels:
                    raise ValidationError(
                        f"{dialog.dialog_id}: unknown SI label {label!r}"
                    )
            for coarse, fine in turn.slot_labels:
                kids = space.tree.children(coarse)  # raises on bad coarse
                if fine is not None and fine not in kids:
                    raise ValidationError(
                        f"{dialog.dialog_id}: slot {(coarse, fine)!r} not in tree"
                    )


def validate_split(split: CorpusSplit, space: LabelSpace | None = None) -> None:
    seen: set[str] = set()
    for dialog in split.all_dialogs():
        if dialog.dialog_id in seen:
            raise ValidationError(f"duplicate dialog_id {dialog.dialog_id!r}")
        seen.add(dialog.dialog_id)
        validate_dialog(dialog, space)
    for dialog in split.unlabeled:
        if dialog.labeled:
            raise ValidationError(
                f"{dialog.dialog_id}: labeled dialog in the unlabeled pool"
            )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_DIALOG_FIELDS = {"dialog_id", "labeled", "kb", "turns", "split"}
_TURN_FIELDS = {"idx", "usr", "sys", "ui", "si", "slots", "ents", "kb_gold"}
_KB_FIELDS = {"name", "type", "attrs"}


def _reject_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    obj: dict = {}
    for key, value in pairs:
        if key in obj:
            raise ValidationError(f"duplicate key {key!r} in record")
        obj[key] = value
    return obj


def _slot_sort_key(pair: tuple[str, str | None]) -> tuple[str, str]:
    return (pair[0], pair[1] or "")


def dialog_to_obj(dialog: Dialog, split_tag: str | None = None) -> dict:
    obj: dict = {
        "dialog_id": dialog.dialog_id,
        "labeled": dialog.labeled,
        "kb": [
            {"name": e.name, "type": e.entity_type, "attrs": dict(e.attributes)}
            for e in dialog.local_kb.entities
        ],
        "turns": [
            {
                "idx": t.turn_index,
                "usr": t.user_utterance,
                "sys": t.system_response,
                "ui": sorted(t.user_intents),
                "si": sorted(t.service_intents),
                "slots": [list(p) for p in sorted(t.slot_labels, key=_slot_sort_key)],
                "ents": list(t.mentioned_entities),
                "kb_gold": [list(tr) for tr in t.gold_kb_triples],
            }
            for t in dialog.turns
        ],
    }
    if split_tag is not None:
        obj["split"] = split_tag
    return obj


def _require(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, typ):
        raise SchemaError(f"{where}: field {key!r} has wrong type")
    return value


def obj_to_dialog(obj: dict, where: str = "record") -> tuple[Dialog, str | None]:
    unknown = set(obj) - _DIALOG_FIELDS
    if unknown:
        raise SchemaError(f"{where}: unknown fields {sorted(unknown)}")
    dialog_id = _require(obj, "dialog_id", str, where)
    labeled = _require(obj, "labeled", bool, where)
    kb_entries = _require(obj, "kb", list, where)
    turn_entries = _require(obj, "turns", list, where)
    split_tag = obj.get("split")
    if split_tag is not None and split_tag not in ("labeled", "unlabeled", "dev", "test"):
        raise SchemaError(f"{where}: bad split tag {split_tag!r}")

    entities = []
    for entry in kb_entries:
        if not isinstance(entry, dict):
            raise SchemaError(f"{where}: kb entry is not an object")
        if set(entry) - _KB_FIELDS:
            raise SchemaError(f"{where}: unknown kb fields {sorted(set(entry) - _KB_FIELDS)}")
        attrs = _require(entry, "attrs", dict, where)
        for k, v in attrs.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise SchemaError(f"{where}: kb attrs must map string to string")
        entities.append(
            EntityRecord(
                name=_require(entry, "name", str, where),
                entity_type=_require(entry, "type", str, where),
                attributes=dict(attrs),
            )
        )

    turns = []
    for entry in turn_entries:
        if not isinstance(entry, dict):
            raise SchemaError(f"{where}: turn entry is not an object")
        if set(entry) - _TURN_FIELDS:
            raise SchemaError(
                f"{where}: unknown turn fields {sorted(set(entry) - _TURN_FIELDS)}"
            )
        idx = _require(entry, "idx", int, where)
        slots: set[tuple[str, str | None]] = set()
        for pair in _require(entry, "slots", list, where):
            if not isinstance(pair, list) or len(pair) != 2:
                raise SchemaError(f"{where}: slot entry must be a [coarse, fine] pair")
            coarse, fine = pair
            if not isinstance(coarse, str) or not (fine is None or isinstance(fine, str)):
                raise SchemaError(f"{where}: slot pair has wrong types")
            slots.add((coarse, fine))
        triples = []
        for tr in _require(entry, "kb_gold", list, where):
            if not isinstance(tr, list) or len(tr) != 3 or not all(isinstance(x, str) for x in tr):
                raise SchemaError(f"{where}: kb_gold entry must be [entity, attr, value]")
            triples.append(tuple(tr))
        turns.append(
            Turn(
                turn_index=idx,
                user_utterance=_require(entry, "usr", str, where),
                system_response=_require(entry, "sys", str, where),
                user_intents=set(_require(entry, "ui", list, where)),
                service_intents=set(_require(entry, "si", list, where)),
                slot_labels=slots,
                mentioned_entities=list(_require(entry, "ents", list, where)),
                gold_kb_triples=triples,
            )
        )
    return Dialog(dialog_id=dialog_id, turns=turns, local_kb=LocalKB(entities), labeled=labeled), split_tag


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def save_corpus(split: CorpusSplit, path: str | Path, space: LabelSpace | None = None) -> None:
    """Write a corpus split to one line-delimited file; inverse of load_corpus."""
    validate_split(split, space)
    lines = []
    for dialog in split.labeled:
        lines.append(_dump_line(dialog_to_obj(dialog)))
    for dialog in split.unlabeled:
        lines.append(_dump_line(dialog_to_obj(dialog)))
    for dialog in split.dev:
        lines.append(_dump_line(dialog_to_obj(dialog, "dev")))
    for dialog in split.test:
        lines.append(_dump_line(dialog_to_obj(dialog, "test")))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_corpus(path: str | Path, space: LabelSpace | None = None) -> CorpusSplit:
    """Parse and validate a corpus file.

    Raises ParseError (bad JSON, with line number), SchemaError (missing or
    unknown fields), ValidationError (invariant violations).
    """
    split = CorpusSplit()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: malformed record: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: record is not an object")
        dialog, split_tag = obj_to_dialog(obj, where=f"line {lineno}")
        if split_tag == "dev":
            split.dev.append(dialog)
        elif split_tag == "test":
            split.test.append(dialog)
        elif split_tag == "unlabeled" or (split_tag is None and not dialog.labeled):
            split.unlabeled.append(dialog)
        else:
            split.labeled.append(dialog)
    validate_split(split, space)
    return split


def strip_labels(dialogs: list[Dialog]) -> list[Dialog]:
    """Copies with all annotation fields emptied and labeled=False. Idempotent."""
    stripped = []
    for dialog in dialogs:
        turns = [
            Turn(turn_index=t.turn_index, user_utterance=t.user_utterance,
                 system_response=t.system_response)
            for t in dialog.turns
        ]
        kb = LocalKB([replace(e, attributes=dict(e.attributes)) for e in dialog.local_kb.entities])
        stripped.append(Dialog(dialog.dialog_id, turns, kb, labeled=False))
    return stripped


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_labeled: int
    n_unlabeled: int
    n_entities_per_kb: int = 3
    label_noise_rate: float = 0.0
    seed: int = 0


_ENTITY_BASES = {
    "plan": ["畅享套餐", "全球通套餐", "神州行套餐", "动感地带套餐"],
    "package_plan": ["包年优惠计划", "亲情网计划", "宽带融合计划"],
    "mobile_package": ["流量加油包", "夜间流量包", "国际漫游包"],
}
_INTRO_FINE_BY_TYPE = {
    "plan": "Plan",
    "package_plan": "Package plan",
    "mobile_package": "Mobile package",
}
_SUFFIXES = list("ABCDEFGH")

_FEES = ["8元", "18元", "28元", "38元", "58元", "88元", "128元"]
_DATA = ["1GB", "3GB", "5GB", "10GB", "20GB", "40GB", "100GB"]
_MINUTES = ["50分钟", "100分钟", "200分钟", "300分钟", "500分钟", "1000分钟"]
_RULES = ["当月生效", "次月生效", "申请后24小时生效", "营业厅办理后生效", "发送短信即可开通"]

_PREFIXES = ["", "", "", "你好，", "喂您好，", "麻烦问一下，", "那个，", "请问一下，"]
_TAILS = ["", "", "", "，谢谢", "，麻烦了", "，急用", "，谢谢啦"]

# Query phrasings: a small common head per class plus a broad synonym tail.
# Tail phrasings are drawn uniformly (many variants, each rare), so a small
# labeled sample undercovers the tail vocabulary while a large unlabeled pool
# covers it densely, mostly inside composite turns that restate a common
# phrasing in rare words.
_FEE_P = ["{e}的月费是多少", "{e}的资费标准是什么", "用{e}一个月要交多少钱",
          "{e}月租贵不贵",
          "{e}包月价格是多少", "{e}每月花销大概多少", "{e}收钱是怎么算的",
          "{e}每个月扣多少话费", "{e}的费用高不高", "用{e}一个月得付多少",
          "{e}缴纳金额是几块", "{e}的账单一般多少", "{e}花费贵么",
          "{e}价位怎么样", "{e}成本高吗", "用{e}要掏多少银子",
          "{e}充值额度要多少", "{e}消费水平如何"]
_DATA_P = ["{e}包含多少流量", "{e}有多少G流量", "{e}的流量是多少",
           "{e}里面有几个G",
           "{e}上网流量够不够用", "{e}有多少兆", "{e}刷视频的量大不大",
           "{e}网络用量有多少", "{e}套餐内流量几何", "{e}给的流量足不足",
           "{e}上网额度是多大", "{e}浏览网页的流量多吗", "{e}能用几个G的网",
           "{e}流量池有多深"]
_MIN_P = ["{e}有多少分钟通话", "{e}包含多少通话时长", "{e}的通话时间有几多分钟",
          "{e}打电话的分钟数是多少",
          "{e}能打多久电话", "{e}语音时长是多少", "{e}通话额度有几许",
          "{e}免费通话给多少", "{e}拨打时间够不够", "{e}聊天分钟数多不多"]
_RULE_P = ["{e}怎么开通", "{e}的开通规则是什么", "{e}如何办理开通",
           "{e}的生效规则是怎样的",
           "{e}什么时候生效", "{e}有什么使用限制", "{e}要怎么取消退订",
           "{e}开通有什么条件", "{e}办理手续麻烦吗", "{e}退订规则给我说一下",
           "{e}注销流程是什么样", "{e}解约需要违约金吗", "{e}变更的门槛高不高",
           "{e}停用步骤复杂吗", "{e}合约期限有规定吗", "{e}审核要等多长时间"]
_INTRO_P = ["给我介绍一下{e}", "{e}是什么业务帮我介绍下", "能不能推荐介绍一下{e}",
            "{e}具体是干什么用的",
            "详细说明一下{e}", "给我讲讲{e}", "说说{e}的内容", "{e}是个什么东西",
            "{e}值得办吗给我说说", "{e}有什么亮点", "科普一下{e}",
            "{e}的卖点在哪", "{e}适合我吗分析分析", "{e}好在哪里",
            "{e}是干嘛的", "给我普及下{e}"]
_SELF_P = ["我现在的套餐流量总是不够用", "我每个月话费实在太高了", "我手机最近老是欠费停机",
           "我的套餐这个月就到期了",
           "我经常出差想要点优惠", "我家里宽带和手机想一起办",
           "我嫌现在用的这个不太划算", "我想换个更合适我的",
           "我的号码用了很多年了", "我最近手机信号总是不太好",
           "我大学刚毕业预算有限", "我爸妈年纪大了用不了复杂的",
           "我平时主要靠微信联系", "我下个月要出国一段时间"]
_TRANS_P = ["帮我办理{e}", "我要开通{e}", "给我把{e}办了吧", "直接帮我上{e}",
            "我想换成{e}", "帮我升级到{e}", "给我订一个{e}", "马上给我开一下{e}",
            "帮忙把{e}办一下", "我决定了就办{e}", "替我申请{e}", "立刻激活{e}",
            "给我加装{e}", "现在就给我换{e}"]
_CHAT_P = ["谢谢你啊", "好的知道了", "嗯嗯拜拜", "没有别的问题了", "辛苦了",
           "行吧就这样", "先这样吧", "明白了多谢", "没事了挂了吧", "你们服务挺好的"]
_COMBO_P = ["我每个月话费太高了，{e}的月费是多少", "我流量总不够用，{e}的月费贵吗是多少"]

# Anaphoric forms ask about the entity under discussion without naming it.
_ANA_HEADS = ["那这个业务", "那它", "那这个"]

_FEE_A = ["{e}的月费是{v}。", "您好，{e}每月资费为{v}。", "{e}的月租是{v}，按月扣取。",
          "查询到{e}每月收费{v}。"]
_DATA_A = ["{e}每月包含{v}流量。", "您好，{e}的流量是每月{v}。", "{e}里面有{v}流量。"]
_MIN_A = ["{e}每月含{v}通话。", "您好，{e}包含{v}的通话时长。"]
_RULE_A = ["{e}的开通规则是{v}。", "您好，{e}{v}。", "这边查到{e}是{v}的。"]
_INTRO_A = ["{e}是我们的热门业务，月费{fee}，每月包含{data}流量。",
            "为您介绍：{e}月费{fee}，含{data}流量，欢迎办理。"]
_SELF_A = ["了解您的情况了，请问您想办理什么业务？", "好的，我帮您看看有什么合适的业务。",
           "收到，您可以考虑更换一下套餐。"]
_TRANS_A = ["好的，已为您提交{e}的开通申请。", "没问题，马上为您办理{e}。",
            "收到，这边为您提交{e}的办理单。"]
_CHAT_A = ["感谢您的来电，祝您生活愉快，再见。", "不客气，再见。", "应该的，再见。"]

_TURN_KINDS = ["fee", "data", "minutes", "rules", "intro", "self", "transact", "chat", "combo"]
_TURN_WEIGHTS = [0.17, 0.13, 0.08, 0.13, 0.14, 0.11, 0.09, 0.09, 0.06]

_QUERY_POOLS = {"fee": _FEE_P, "data": _DATA_P, "minutes": _MIN_P,
                "rules": _RULE_P, "intro": _INTRO_P}
_HEAD_POOL = 4          # leading phrasings of each pool are the common ones
_TAIL_ALONE_PROB = 0.12     # rare phrasing on its own
_COMPOSITE_PROB = 0.05      # common phrasing restated with a rare one
_ANAPHORA_PROB = 0.3        # entity referenced via history, not by name


def _pick(rng: np.random.Generator, items: list[str]) -> str:
    return items[int(rng.integers(len(items)))]


def _pick_zipf(rng: np.random.Generator, items: list[str]) -> str:
    weights = 1.0 / np.arange(1.0, len(items) + 1.0)
    weights /= weights.sum()
    return items[int(rng.choice(len(items), p=weights))]


def _make_kb(rng: np.random.Generator, n_entities: int) -> LocalKB:
    combos = [(t, base, suf) for t, bases in _ENTITY_BASES.items()
              for base in bases for suf in _SUFFIXES]
    picks = rng.choice(len(combos), size=min(n_entities, len(combos)), replace=False)
    entities = []
    for i in picks:
        etype, base, suf = combos[int(i)]
        entities.append(
            EntityRecord(
                name=base + suf,
                entity_type=etype,
                attributes={
                    "月费": _pick(rng, _FEES),
                    "流量": _pick(rng, _DATA),
                    "通话时长": _pick(rng, _MINUTES),
                    "开通规则": _pick(rng, _RULES),
                },
            )
        )
    return LocalKB(entities)


def _decorate(rng: np.random.Generator, usr: str) -> str:
    return _pick(rng, _PREFIXES) + usr + _pick(rng, _TAILS)


def _query_utterance(rng: np.random.Generator, kind: str, ent_name: str,
                     anaphoric: bool) -> str:
    pool = _QUERY_POOLS[kind]
    head = pool[:_HEAD_POOL]
    tail = pool[_HEAD_POOL:]
    roll = rng.random()
    second = None
    if tail and roll < _TAIL_ALONE_PROB:
        first = _pick(rng, tail)
    elif tail and roll < _TAIL_ALONE_PROB + _COMPOSITE_PROB:
        first = _pick_zipf(rng, head)
        second = _pick(rng, tail)
    else:
        first = _pick_zipf(rng, head)
    if anaphoric:
        usr = _pick(rng, _ANA_HEADS) + first.format(e="")
    else:
        usr = first.format(e=ent_name)
    if second is not None:
        usr = usr + "，" + second.format(e="它" if not anaphoric else "")
    return usr


def _make_turn(rng: np.random.Generator, kind: str, idx: int, kb: LocalKB,
               last_entity: str | None) -> Turn:
    ent = None
    if kb.entities:
        ent = kb.entities[int(rng.integers(len(kb.entities)))]
    if ent is None and kind not in ("self", "chat"):
        kind = "self" if rng.random() < 0.6 else "chat"

    anaphoric = False
    if kind in _QUERY_POOLS and last_entity is not None and rng.random() < _ANAPHORA_PROB:
        anaphoric = True
        ent = kb.get(last_entity)

    if kind in ("fee", "data", "minutes", "rules"):
        attr = {"fee": "月费", "data": "流量", "minutes": "通话时长",
                "rules": "开通规则"}[kind]
        answers = {"fee": _FEE_A, "data": _DATA_A, "minutes": _MIN_A,
                   "rules": _RULE_A}[kind]
        ui = {"fee": "查询费用", "data": "查询流量", "minutes": "查询流量",
              "rules": "查询规则"}[kind]
        fine = {"fee": "Fee", "data": "Mobile Package", "minutes": "Mobile Package",
                "rules": "Rules"}[kind]
        value = ent.attributes[attr]
        return Turn(idx, _decorate(rng, _query_utterance(rng, kind, ent.name, anaphoric)),
                    _pick(rng, answers).format(e=ent.name, v=value),
                    {ui}, {"告知信息"}, {(ASK_ENTITY, fine)},
                    [] if anaphoric else [ent.name], [(ent.name, attr, value)])
    if kind == "intro":
        fee, data = ent.attributes["月费"], ent.attributes["流量"]
        fine = _INTRO_FINE_BY_TYPE[ent.entity_type]
        return Turn(idx, _decorate(rng, _query_utterance(rng, kind, ent.name, anaphoric)),
                    _pick(rng, _INTRO_A).format(e=ent.name, fee=fee, data=data),
                    {"要求介绍"}, {"告知信息"}, {(ASK_INTRODUCTION, fine)},
                    [] if anaphoric else [ent.name],
                    [(ent.name, "月费", fee), (ent.name, "流量", data)])
    if kind == "self":
        return Turn(idx, _decorate(rng, _pick_zipf(rng, _SELF_P)), _pick(rng, _SELF_A),
                    {"自述情况"}, {"确认需求"}, {(TALK_ABOUT_SELF, None)}, [], [])
    if kind == "transact":
        return Turn(idx, _decorate(rng, _pick_zipf(rng, _TRANS_P).format(e=ent.name)),
                    _pick(rng, _TRANS_A).format(e=ent.name),
                    {"办理业务"}, {"引导办理"}, set(), [ent.name], [])
    if kind == "chat":
        return Turn(idx, _decorate(rng, _pick_zipf(rng, _CHAT_P)), _pick(rng, _CHAT_A),
                    {OTHER_LABEL}, {"问候致意"}, set(), [], [])
    if kind == "combo":
        v = ent.attributes["月费"]
        return Turn(idx, _decorate(rng, _pick(rng, _COMBO_P).format(e=ent.name)),
                    _pick(rng, _FEE_A).format(e=ent.name, v=v),
                    {"自述情况", "查询费用"}, {"告知信息"},
                    {(TALK_ABOUT_SELF, None), (ASK_ENTITY, "Fee")},
                    [ent.name], [(ent.name, "月费", v)])
    raise ValueError(f"unknown turn kind {kind!r}")


def _make_dialog(rng: np.random.Generator, dialog_id: str, n_entities: int) -> Dialog:
    kb = _make_kb(rng, n_entities)
    n_turns = int(rng.integers(2, 6))
    kinds = rng.choice(len(_TURN_KINDS), size=n_turns, p=_TURN_WEIGHTS)
    turns = []
    last_entity = None
    for i, k in enumerate(kinds):
        turn = _make_turn(rng, _TURN_KINDS[int(k)], i, kb, last_entity)
        turns.append(turn)
        if turn.mentioned_entities:
            last_entity = turn.mentioned_entities[-1]
    return Dialog(dialog_id, turns, kb, labeled=True)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _flip_one_label(rng: np.random.Generator, turn: Turn, space: LabelSpace) -> None:
    heads = []
    if turn.user_intents:
        heads.append("ui")
    if turn.service_intents:
        heads.append("si")
    if not heads:
        return
    head = heads[int(rng.integers(len(heads)))]
    current = sorted(turn.user_intents if head == "ui" else turn.service_intents)
    victim = current[int(rng.integers(len(current)))]
    pool = list(space.ui_labels if head == "ui" else space.si_labels) + [OTHER_LABEL]
    candidates = [p for p in pool if p != victim and p not in current]
    if not candidates:
        return
    replacement = candidates[int(rng.integers(len(candidates)))]
    target = turn.user_intents if head == "ui" else turn.service_intents
    target.discard(victim)
    target.add(replacement)


def generate_synthetic(spec: SyntheticSpec, space: LabelSpace | None = None) -> CorpusSplit:
    """Deterministic synthetic corpus for a fixed spec (seed included).

    Dev and test splits are derived as 15% of n_labeled each (rounded), kept
    noise-free; label noise perturbs exactly round(rate * n_labeled_turns)
    turns of the labeled train split, flipping one label per perturbed turn.
    """
    if spec.n_labeled < 0 or spec.n_unlabeled < 0 or spec.n_entities_per_kb < 0:
        raise SpecError("counts must be nonnegative")
    if not 0.0 <= spec.label_noise_rate <= 1.0:
        raise SpecError("label_noise_rate must be in [0, 1]")
    space = space or default_label_space()
    rng = np.random.default_rng(spec.seed)

    n_dev = _round_half_up(0.15 * spec.n_labeled)
    n_test = _round_half_up(0.15 * spec.n_labeled)
    split = CorpusSplit()
    for i in range(spec.n_labeled):
        split.labeled.append(_make_dialog(rng, f"train-{i:05d}", spec.n_entities_per_kb))
    for i in range(spec.n_unlabeled):
        dialog = _make_dialog(rng, f"unlab-{i:05d}", spec.n_entities_per_kb)
        split.unlabeled.append(strip_labels([dialog])[0])
    for i in range(n_dev):
        split.dev.append(_make_dialog(rng, f"dev-{i:05d}", spec.n_entities_per_kb))
    for i in range(n_test):
        split.test.append(_make_dialog(rng, f"test-{i:05d}", spec.n_entities_per_kb))

    train_turns = [t for d in split.labeled for t in d.turns]
    n_noisy = _round_half_up(spec.label_noise_rate * len(train_turns))
    if n_noisy:
        chosen = rng.choice(len(train_turns), size=n_noisy, replace=False)
        for i in sorted(int(c) for c in chosen):
            _flip_one_label(rng, train_turns[i], space)

    validate_split(split, space)
    return split
