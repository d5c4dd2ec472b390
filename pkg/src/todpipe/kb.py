"""Dialog-local KB resolution and slot-driven lookup.

Entity resolution is deliberately literal: an exact name match wins,
otherwise the most recently mentioned history entity that exists in the KB,
otherwise nothing. Lookup routes on the coarse slot category: entity queries
return the attributes mapped to the fine leaf (exact results), introduction
requests return every attribute of the relevant entity (inexact), and
self-description turns never touch the KB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import EntityRecord, LocalKB
from .errors import ValidationError
from .taxonomy import ASK_ENTITY, ASK_INTRODUCTION, TALK_ABOUT_SELF, LabelSpace


@dataclass(frozen=True)
class KbQuery:
    coarse: str
    fine: str | None = None
    entity_name: str | None = None
    user_intents: frozenset[str] = frozenset()


@dataclass
class KbResult:
    triples: list[tuple[str, str, str]] = field(default_factory=list)
    exact: bool = False

    def values(self) -> list[str]:
        return [v for _, _, v in self.triples]


def resolve_entity(local_kb: LocalKB, name: str | None,
                   history_entities: list[str]) -> EntityRecord | None:
    """Exact name match, else most recent history entity present in the KB."""
    if name is not None:
        record = local_kb.get(name)
        if record is not None:
            return record
    for hist_name in reversed(history_entities):
        record = local_kb.get(hist_name)
        if record is not None:
            return record
    return None


def lookup(local_kb: LocalKB, query: KbQuery, history_entities: list[str],
           space: LabelSpace) -> KbResult:
    """Answer a slot query against the dialog-local KB."""
    tree = space.tree
    kids = tree.children(query.coarse)  # raises UnknownNodeError on bad coarse
    if query.fine is not None and query.fine not in kids:
        raise ValidationError(f"{query.fine!r} is not a child of {query.coarse!r}")

    if query.coarse == TALK_ABOUT_SELF:
        return KbResult()

    if query.coarse == ASK_ENTITY:
        record = resolve_entity(local_kb, query.entity_name, history_entities)
        if record is None:
            return KbResult()
        if query.fine is not None:
            wanted = space.attribute_map.get(query.fine, ())
        else:
            wanted = tuple(a for leaf in kids for a in space.attribute_map.get(leaf, ()))
        triples = [
            (record.name, attr, value)
            for attr, value in record.attributes.items()
            if attr in wanted
        ]
        return KbResult(triples=triples, exact=bool(triples))

    if query.coarse == ASK_INTRODUCTION:
        record = resolve_entity(local_kb, query.entity_name, history_entities)
        if record is None and len(local_kb.entities) == 1:
            record = local_kb.entities[0]
        if record is None:
            return KbResult()
        triples = [(record.name, attr, value) for attr, value in record.attributes.items()]
        return KbResult(triples=triples, exact=False)

    return KbResult()
