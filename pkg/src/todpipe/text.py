"""Tokenization and vocabulary.

Tokenization is character-level for CJK text with a whitespace-delimited
fallback for runs of ASCII letters/digits, so "畅享套餐A的月费是58元/月"
becomes 畅/享/套/餐/A/的/月/费/是/58/元//','月.  The underscore is always a
standalone token because it doubles as the corruption symbol.

Ten token ids are reserved in every vocabulary:

    0 <pad>   1 <unk>   2 _       3 <ui>    4 <si>
    5 <ent>   6 <usr>   7 <kb>    8 <sys>   9 <eos>

Ids 3..9 are the serialization markers used by the response generator;
tokenizing corpus text can never produce them (angle brackets split into
single-character tokens).
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAD_ID = 0
UNK_ID = 1
CORRUPT_ID = 2
UI_ID = 3
SI_ID = 4
ENT_ID = 5
USR_ID = 6
KB_ID = 7
SYS_ID = 8
EOS_ID = 9

RESERVED_TOKENS = (
    "<pad>", "<unk>", "_", "<ui>", "<si>", "<ent>", "<usr>", "<kb>", "<sys>", "<eos>",
)
MARKER_IDS = (UI_ID, SI_ID, ENT_ID, USR_ID, KB_ID, SYS_ID)


def _is_word_char(ch: str) -> bool:
    return ch.isascii() and ch.isalnum()


def segment(text: str) -> list[str]:
    """Split text into tokens: ASCII alnum runs grouped, all else per char.

    Whitespace separates tokens and is dropped.
    """
    tokens: list[str] = []
    run: list[str] = []
    for ch in text:
        if _is_word_char(ch):
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def detokenize(tokens: list[str]) -> str:
    """Inverse of :func:`segment` up to whitespace normalization.

    A single space is inserted between adjacent ASCII word tokens; all other
    adjacent tokens are concatenated directly.
    """
    parts: list[str] = []
    prev_word = False
    for tok in tokens:
        is_word = bool(tok) and all(_is_word_char(c) for c in tok)
        if prev_word and is_word:
            parts.append(" ")
        parts.append(tok)
        prev_word = is_word
    return "".join(parts)


@dataclass
class Vocab:
    """Bijective token <-> id map with the reserved prefix above."""

    tokens: list[str]
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, text: str) -> list[int]:
        """Deterministic token-id sequence; unknown tokens map to <unk>."""
        return [self.index.get(t, UNK_ID) for t in segment(text)]

    def decode(self, ids: list[int]) -> str:
        return detokenize([self.tokens[i] for i in ids])


def build_vocab(texts: list[str], extra_tokens: list[str] = ()) -> Vocab:
    """Build a vocabulary over all tokens occurring in `texts`.

    Non-reserved tokens are sorted by codepoint so the id assignment is a
    pure function of the token set, not of corpus order.
    """
    seen: set[str] = set()
    for text in texts:
        seen.update(segment(text))
    for tok in extra_tokens:
        seen.add(tok)
    seen.difference_update(RESERVED_TOKENS)
    return Vocab(list(RESERVED_TOKENS) + sorted(seen))
