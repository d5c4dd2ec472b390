"""Coarse-to-fine slot tree and the user/service intent label sets.

The slot tree is fixed: three coarse query categories, two of which fan out
into three fine leaves each.  Node ids are assigned in listing order, coarse
0..2 then fine 3..8.  The two similarly named leaves ("Mobile package" under
introductions, "Mobile Package" under entity queries) are deliberately
distinct nodes.

User-intent (UI) and service-intent (SI) label sets are corpus-defined and
loaded from a taxonomy file; the catch-all label "Other" is reserved and is
never an explicit class in any head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, UnknownLabelError, UnknownNodeError, ValidationError

OTHER_LABEL = "Other"

TALK_ABOUT_SELF = "Talk about NA(myself)"
ASK_INTRODUCTION = "Ask for Introduction"
ASK_ENTITY = "Ask an Entity"

COARSE_NODES = (TALK_ABOUT_SELF, ASK_INTRODUCTION, ASK_ENTITY)
FINE_CHILDREN = {
    TALK_ABOUT_SELF: (),
    ASK_INTRODUCTION: ("Plan", "Package plan", "Mobile package"),
    ASK_ENTITY: ("Rules", "Mobile Package", "Fee"),
}
N_SLOT_NODES = 9

# Which KB attribute names answer each entity-query leaf.
DEFAULT_ATTRIBUTE_MAP = {
    "Rules": ["开通规则"],
    "Mobile Package": ["流量", "通话时长"],
    "Fee": ["月费"],
}

DEFAULT_UI_LABELS = ["办理业务", "查询流量", "查询规则", "查询费用", "自述情况", "要求介绍"]
DEFAULT_SI_LABELS = ["告知信息", "问候致意", "引导办理", "确认需求"]


@dataclass(frozen=True)
class IntentTree:
    """The fixed coarse-to-fine slot tree with integer node ids."""

    coarse: tuple[str, ...] = COARSE_NODES
    fine: tuple[str, ...] = sum((FINE_CHILDREN[c] for c in COARSE_NODES), ())

    def coarse_id(self, name: str) -> int:
        try:
            return self.coarse.index(name)
        except ValueError:
            raise UnknownNodeError(f"unknown coarse node: {name!r}") from None

    def fine_id(self, name: str, parent: str) -> int:
        kids = self.children(parent)
        if name not in kids:
            raise UnknownNodeError(f"{name!r} is not a child of {parent!r}")
        offset = 0
        for c in self.coarse:
            if c == parent:
                break
            offset += len(FINE_CHILDREN[c])
        return len(self.coarse) + offset + kids.index(name)

    def children(self, coarse_name: str) -> tuple[str, ...]:
        if coarse_name not in FINE_CHILDREN:
            raise UnknownNodeError(f"unknown coarse node: {coarse_name!r}")
        return FINE_CHILDREN[coarse_name]

    def parent_of(self, fine_node_id: int) -> int:
        node = len(self.coarse)
        for ci, c in enumerate(self.coarse):
            for _ in FINE_CHILDREN[c]:
                if node == fine_node_id:
                    return ci
                node += 1
        raise UnknownNodeError(f"node id {fine_node_id} is not a fine node")

    def fine_mask(self, coarse_name: str) -> np.ndarray:
        """Length-9 binary mask; ones exactly on the children of `coarse_name`."""
        mask = np.zeros(N_SLOT_NODES)
        for name in self.children(coarse_name):
            mask[self.fine_id(name, coarse_name)] = 1.0
        return mask


@dataclass(frozen=True)
class LabelSpace:
    """Ordered UI/SI label lists plus the slot tree.

    "Other" never appears in the explicit lists; it is accepted in data and
    encodes to the all-zero vector.
    """

    ui_labels: tuple[str, ...]
    si_labels: tuple[str, ...]
    tree: IntentTree = field(default_factory=IntentTree)
    attribute_map: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_ATTRIBUTE_MAP.items()}
    )

    def __post_init__(self) -> None:
        for name, labels in (("ui", self.ui_labels), ("si", self.si_labels)):
            if len(set(labels)) != len(labels):
                raise ValidationError(f"duplicate {name} label")
            if OTHER_LABEL in labels:
                raise ValidationError(f"{OTHER_LABEL!r} must not be an explicit {name} class")

    @property
    def n_ui(self) -> int:
        return len(self.ui_labels)

    @property
    def n_si(self) -> int:
        return len(self.si_labels)

    @property
    def n_slot(self) -> int:
        return N_SLOT_NODES

    def head_sizes(self) -> dict[str, int]:
        return {"ui": self.n_ui, "si": self.n_si, "slot": self.n_slot}


@dataclass
class LabelVector:
    """Per-head binary target vectors."""

    ui: np.ndarray
    si: np.ndarray
    slot: np.ndarray

    def head(self, name: str) -> np.ndarray:
        return getattr(self, name)


def encode_labels(
    space: LabelSpace,
    ui: set[str],
    si: set[str],
    slots: set[tuple[str, str | None]],
) -> LabelVector:
    """Binary vectors for the given label sets.

    Setting a fine slot also sets its parent coarse slot; "Other" contributes
    no bits. Unknown names raise UnknownLabelError.
    """
    ui_vec = np.zeros(space.n_ui)
    si_vec = np.zeros(space.n_si)
    slot_vec = np.zeros(space.n_slot)
    for name, labels, vec in (("ui", ui, ui_vec), ("si", si, si_vec)):
        ordered = space.ui_labels if name == "ui" else space.si_labels
        for label in labels:
            if label == OTHER_LABEL:
                continue
            try:
                vec[ordered.index(label)] = 1.0
            except ValueError:
                raise UnknownLabelError(f"unknown {name} label: {label!r}") from None
    tree = space.tree
    for coarse_name, fine_name in slots:
        slot_vec[tree.coarse_id(coarse_name)] = 1.0
        if fine_name is not None:
            slot_vec[tree.fine_id(fine_name, coarse_name)] = 1.0
    return LabelVector(ui=ui_vec, si=si_vec, slot=slot_vec)


def decode_labels(
    space: LabelSpace, vec: LabelVector
) -> tuple[set[str], set[str], set[tuple[str, str | None]]]:
    """Inverse of encode_labels over canonical (hierarchy-respecting) sets."""
    ui = {space.ui_labels[i] for i in np.flatnonzero(vec.ui >= 0.5)}
    si = {space.si_labels[i] for i in np.flatnonzero(vec.si >= 0.5)}
    tree = space.tree
    slots: set[tuple[str, str | None]] = set()
    for ci, coarse_name in enumerate(tree.coarse):
        if vec.slot[ci] < 0.5:
            continue
        fine_set = {
            name
            for name in tree.children(coarse_name)
            if vec.slot[tree.fine_id(name, coarse_name)] >= 0.5
        }
        if fine_set:
            slots.update((coarse_name, f) for f in fine_set)
        else:
            slots.add((coarse_name, None))
    return ui, si, slots


def default_label_space() -> LabelSpace:
    return LabelSpace(ui_labels=tuple(DEFAULT_UI_LABELS), si_labels=tuple(DEFAULT_SI_LABELS))


def save_label_space(space: LabelSpace, path: str | Path) -> None:
    doc = {
        "ui_labels": list(space.ui_labels),
        "si_labels": list(space.si_labels),
        "slot_tree": {c: list(space.tree.children(c)) for c in space.tree.coarse},
        "attribute_map": {k: list(v) for k, v in space.attribute_map.items()},
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def load_label_space(path: str | Path) -> LabelSpace:
    """Load a taxonomy file; the slot tree is validated against the fixed one."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"taxonomy file is not valid JSON: {exc}") from exc
    for key in ("ui_labels", "si_labels"):
        if key not in doc or not isinstance(doc[key], list):
            raise SchemaError(f"taxonomy file missing list field {key!r}")
    tree = IntentTree()
    if "slot_tree" in doc:
        expected = {c: list(tree.children(c)) for c in tree.coarse}
        if doc["slot_tree"] != expected:
            raise ValidationError("slot_tree in taxonomy file does not match the fixed tree")
    attr_map = doc.get("attribute_map", DEFAULT_ATTRIBUTE_MAP)
    fine_names = set(tree.fine)
    for k in attr_map:
        if k not in fine_names:
            raise ValidationError(f"attribute_map key {k!r} is not a fine slot node")
    return LabelSpace(
        ui_labels=tuple(doc["ui_labels"]),
        si_labels=tuple(doc["si_labels"]),
        attribute_map={k: tuple(v) for k, v in attr_map.items()},
    )
