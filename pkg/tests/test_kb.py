import pytest

from todpipe.corpus import EntityRecord, LocalKB
from todpipe.errors import UnknownNodeError, ValidationError
from todpipe.kb import KbQuery, KbResult, lookup, resolve_entity
from todpipe.taxonomy import (
    ASK_ENTITY,
    ASK_INTRODUCTION,
    TALK_ABOUT_SELF,
    default_label_space,
)

SPACE = default_label_space()


@pytest.fixture
def kb():
    return LocalKB([
        EntityRecord("畅享套餐A", "plan",
                     {"月费": "58元", "流量": "10GB", "通话时长": "300分钟",
                      "开通规则": "次月生效"}),
        EntityRecord("流量加油包B", "mobile_package",
                     {"月费": "8元", "流量": "3GB", "通话时长": "50分钟",
                      "开通规则": "当月生效"}),
    ])


def test_resolve_exact_name(kb):
    record = resolve_entity(kb, "流量加油包B", [])
    assert record is not None and record.name == "流量加油包B"


def test_resolve_falls_back_to_most_recent_history(kb):
    record = resolve_entity(kb, "不存在的", ["畅享套餐A", "流量加油包B"])
    assert record.name == "流量加油包B"
    record = resolve_entity(kb, None, ["流量加油包B", "畅享套餐A"])
    assert record.name == "畅享套餐A"


def test_resolve_history_skips_unknown_names(kb):
    record = resolve_entity(kb, None, ["畅享套餐A", "幽灵套餐"])
    assert record.name == "畅享套餐A"


def test_resolve_empty_kb():
    assert resolve_entity(LocalKB([]), "畅享套餐A", ["畅享套餐A"]) is None


def test_lookup_self_category_returns_nothing(kb):
    result = lookup(kb, KbQuery(TALK_ABOUT_SELF, None, "畅享套餐A"), ["畅享套餐A"], SPACE)
    assert result.triples == [] and result.exact is False


def test_lookup_entity_fee(kb):
    result = lookup(kb, KbQuery(ASK_ENTITY, "Fee", "畅享套餐A"), [], SPACE)
    assert result.exact is True
    assert result.triples == [("畅享套餐A", "月费", "58元")]


def test_lookup_entity_mobile_package_covers_data_and_minutes(kb):
    result = lookup(kb, KbQuery(ASK_ENTITY, "Mobile Package", "流量加油包B"), [], SPACE)
    assert set(result.triples) == {("流量加油包B", "流量", "3GB"),
                                   ("流量加油包B", "通话时长", "50分钟")}
    assert result.exact is True


def test_lookup_entity_without_fine_covers_mapped_attributes(kb):
    result = lookup(kb, KbQuery(ASK_ENTITY, None, "畅享套餐A"), [], SPACE)
    assert set(a for _, a, _ in result.triples) == {"月费", "流量", "通话时长", "开通规则"}


def test_lookup_unresolved_entity_empty(kb):
    result = lookup(kb, KbQuery(ASK_ENTITY, "Fee", "幽灵"), [], SPACE)
    assert result.triples == [] and result.exact is False


def test_lookup_introduction_returns_all_attributes(kb):
    result = lookup(kb, KbQuery(ASK_INTRODUCTION, "Plan", "畅享套餐A"), [], SPACE)
    assert result.exact is False
    assert set(result.triples) == {
        ("畅享套餐A", "月费", "58元"), ("畅享套餐A", "流量", "10GB"),
        ("畅享套餐A", "通话时长", "300分钟"), ("畅享套餐A", "开通规则", "次月生效"),
    }


def test_lookup_introduction_single_entity_kb_is_relevant():
    kb = LocalKB([EntityRecord("夜间流量包C", "mobile_package", {"月费": "18元"})])
    result = lookup(kb, KbQuery(ASK_INTRODUCTION, None, None), [], SPACE)
    assert result.triples == [("夜间流量包C", "月费", "18元")]


def test_lookup_triples_exist_in_kb(kb):
    for coarse, fine in ((ASK_ENTITY, "Fee"), (ASK_ENTITY, "Rules"),
                         (ASK_INTRODUCTION, "Plan")):
        result = lookup(kb, KbQuery(coarse, fine, "畅享套餐A"), [], SPACE)
        for name, attr, value in result.triples:
            record = kb.get(name)
            assert record is not None and record.attributes[attr] == value


def test_lookup_rejects_bad_nodes(kb):
    with pytest.raises(UnknownNodeError):
        lookup(kb, KbQuery("Ask the Void", None, None), [], SPACE)
    with pytest.raises(ValidationError):
        lookup(kb, KbQuery(ASK_ENTITY, "Plan", None), [], SPACE)


def test_lookup_pure(kb):
    q = KbQuery(ASK_ENTITY, "Fee", None)
    a = lookup(kb, q, ["畅享套餐A"], SPACE)
    b = lookup(kb, q, ["畅享套餐A"], SPACE)
    assert a.triples == b.triples and a.exact == b.exact


def test_kbresult_values():
    result = KbResult(triples=[("e", "a", "v1"), ("e", "b", "v2")], exact=True)
    assert result.values() == ["v1", "v2"]
