"""Beam search decoding, plain and lexically constrained.

The constrained decoder is a banked search: hypotheses are grouped into
banks by the number of constraint tokens matched so far (completed
constraints count in full, partial matches by their matched-prefix length,
tracked with KMP automata so progress survives overlaps and false starts).
Each step keeps `beam_size` survivors per bank. A hypothesis may terminate
with <eos> only once every constraint is satisfied; if nothing terminates
within the budget, the best partial hypothesis is completed by appending
every unmet constraint verbatim, which makes constraint satisfaction
unconditional.

Scoring is length-normalized log-probability (the <eos> step counts as an
emitted token). Ties are broken toward the lexicographically smaller token
sequence, with a shorter prefix winning over its extensions, so decoding is
a total order and fully deterministic. With no constraints the banked search
has a single bank and reproduces plain beam search token for token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConstraintTooLongError
from .lm import DecodeCache, LmParams, lm_prefill, lm_step
from .text import EOS_ID, PAD_ID


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _norm_score(total: float, n_tokens: int) -> float:
    return total / n_tokens if n_tokens else 0.0


@dataclass(order=True)
class _Finished:
    sort_key: tuple = field(init=False, repr=False)
    score: float
    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        self.sort_key = (-self.score, self.tokens)


@dataclass
class _Hyp:
    tokens: tuple[int, ...]
    total: float
    states: tuple[int, ...] = ()       # per-constraint KMP state
    sat: tuple[bool, ...] = ()

    @property
    def norm(self) -> float:
        return _norm_score(self.total, len(self.tokens))


def _partial_key(hyp: _Hyp) -> tuple:
    return (-hyp.norm, hyp.tokens)


def _live_bound(live: list[_Hyp], max_len: int) -> float:
    """Best finished score any live hypothesis could still reach.

    Log-probs are nonpositive, so a hypothesis with accumulated total T can
    finish no higher than T / (max_len + 1); beating this bound strictly
    makes further search steps pointless.
    """
    return max(h.total for h in live) / (max_len + 1)


def kmp_failure(pattern: list[int]) -> list[int]:
    fail = [0] * len(pattern)
    k = 0
    for i in range(1, len(pattern)):
        while k and pattern[i] != pattern[k]:
            k = fail[k - 1]
        if pattern[i] == pattern[k]:
            k += 1
        fail[i] = k
    return fail


def constraint_dfa(pattern: list[int], vocab_size: int) -> np.ndarray:
    """Transition table (len+1, vocab): longest pattern prefix matched next."""
    m = len(pattern)
    fail = kmp_failure(pattern)
    table = np.zeros((m + 1, vocab_size), dtype=np.int64)
    table[0, pattern[0]] = 1
    for s in range(1, m + 1):
        fallback = table[fail[s - 1]] if s > 0 else table[0]
        table[s] = fallback
        if s < m:
            table[s, pattern[s]] = s + 1
    return table


def _prepare(params: LmParams, context: list[int]) -> tuple[np.ndarray, DecodeCache]:
    ctx = list(context) if context else [PAD_ID]
    ids = np.asarray([ctx], dtype=np.int64)
    logits, cache = lm_prefill(params, ids)
    return logits, cache


def _candidate_order(scores: np.ndarray, parent_rank: np.ndarray,
                     flat_valid: np.ndarray, vocab: int) -> np.ndarray:
    """Flat candidate indices sorted by (-score, lexicographic prefix, token)."""
    idx = np.flatnonzero(flat_valid)
    parents = idx // vocab
    tokens = idx % vocab
    order = np.lexsort((tokens, parent_rank[parents], -scores.ravel()[idx]))
    return idx[order]


def _lex_ranks(hyps: list[_Hyp]) -> np.ndarray:
    order = sorted(range(len(hyps)), key=lambda i: hyps[i].tokens)
    ranks = np.empty(len(hyps), dtype=np.int64)
    for rank, i in enumerate(order):
        ranks[i] = rank
    return ranks


def beam_search(
    params: LmParams,
    context: list[int],
    beam_size: int,
    max_len: int,
    eos_id: int = EOS_ID,
    banned_ids: tuple[int, ...] = (),
) -> list[int]:
    """Standard length-normalized beam search; returns content tokens (no eos)."""
    if beam_size < 1 or max_len < 0:
        raise ConfigError("beam_size must be >= 1 and max_len >= 0")
    if eos_id in banned_ids:
        raise ConfigError("eos cannot be banned")
    vocab = params.config.vocab_size
    logits, cache = _prepare(params, context)
    live: list[_Hyp] = [_Hyp(tokens=(), total=0.0)]
    finished: list[_Finished] = []
    last_live = live

    for step in range(max_len + 1):
        logp = _log_softmax(logits)
        for i, hyp in enumerate(live):
            total = hyp.total + logp[i, eos_id]
            finished.append(_Finished(_norm_score(total, len(hyp.tokens) + 1), hyp.tokens))
        if step == max_len:
            break
        if finished and max(f.score for f in finished) > _live_bound(live, max_len):
            break
        scores = np.array([h.total for h in live])[:, None] + logp
        valid = np.ones((len(live), vocab), dtype=bool)
        valid[:, eos_id] = False
        for t in banned_ids:
            valid[:, t] = False
        valid &= np.isfinite(logp)
        order = _candidate_order(scores, _lex_ranks(live), valid.ravel(), vocab)
        chosen = order[:beam_size]
        if chosen.size == 0:
            break
        parents = chosen // vocab
        tokens = chosen % vocab
        live = [
            _Hyp(tokens=live[p].tokens + (t,), total=float(scores[p, t]))
            for p, t in zip(parents, tokens)
        ]
        last_live = live
        cache = cache.select(parents)
        logits = lm_step(params, cache, tokens)

    if finished:
        return list(min(finished).tokens)
    best = min(last_live, key=_partial_key)
    return list(best.tokens)


def generate(
    params: LmParams,
    context: list[int],
    constraints: list[list[int]],
    beam_size: int,
    max_len: int,
    eos_id: int = EOS_ID,
    banned_ids: tuple[int, ...] = (),
    return_info: bool = False,
) -> list[int] | tuple[list[int], dict]:
    """Banked constrained beam search; every constraint appears contiguously
    in the returned tokens, unconditionally.

    With return_info=True also returns {"score": length-normalized log-prob
    of the chosen hypothesis, "fallback": whether the verbatim-completion
    guarantee clause produced the output}.
    """
    if beam_size < 1 or max_len < 0:
        raise ConfigError("beam_size must be >= 1 and max_len >= 0")
    if eos_id in banned_ids:
        raise ConfigError("eos cannot be banned")
    for c in constraints:
        if not c:
            raise ConfigError("constraints must be nonempty token sequences")
        if len(c) > max_len:
            raise ConstraintTooLongError(
                f"constraint of length {len(c)} exceeds max_len {max_len}"
            )
    vocab = params.config.vocab_size
    n_con = len(constraints)
    lengths = np.array([len(c) for c in constraints], dtype=np.int64)
    dfas = [constraint_dfa(c, vocab) for c in constraints]

    logits, cache = _prepare(params, context)
    live: list[_Hyp] = [_Hyp(tokens=(), total=0.0,
                             states=(0,) * n_con, sat=(False,) * n_con)]
    finished: list[_Finished] = []
    last_live = live

    for step in range(max_len + 1):
        logp = _log_softmax(logits)
        for i, hyp in enumerate(live):
            if all(hyp.sat):
                total = hyp.total + logp[i, eos_id]
                finished.append(
                    _Finished(_norm_score(total, len(hyp.tokens) + 1), hyp.tokens)
                )
        if step == max_len:
            break
        if finished and max(f.score for f in finished) > _live_bound(live, max_len):
            break
        n = len(live)
        scores = np.array([h.total for h in live])[:, None] + logp
        valid = np.ones((n, vocab), dtype=bool)
        valid[:, eos_id] = False
        for t in banned_ids:
            valid[:, t] = False
        valid &= np.isfinite(logp)

        # Bank of every candidate: satisfied constraints count in full,
        # open ones by the KMP state reached with the candidate token.
        bank = np.zeros((n, vocab), dtype=np.int64)
        new_states = []
        for k in range(n_con):
            states_k = np.array([h.states[k] for h in live], dtype=np.int64)
            rows = dfas[k][states_k]
            sat_k = np.array([h.sat[k] for h in live], dtype=bool)
            contrib = np.where(sat_k[:, None], lengths[k], rows)
            bank += contrib
            new_states.append((rows, sat_k))

        order = _candidate_order(scores, _lex_ranks(live), valid.ravel(), vocab)
        survivors: list[tuple[int, int]] = []
        quota: dict[int, int] = {}
        flat_bank = bank.ravel()
        for flat in order:
            b = int(flat_bank[flat])
            if quota.get(b, 0) >= beam_size:
                continue
            quota[b] = quota.get(b, 0) + 1
            survivors.append((int(flat) // vocab, int(flat) % vocab))
        if not survivors:
            break
        parents = np.array([p for p, _ in survivors], dtype=np.int64)
        tokens = np.array([t for _, t in survivors], dtype=np.int64)
        next_live = []
        for p, t in zip(parents, tokens):
            parent = live[p]
            states = []
            sat = []
            for k in range(n_con):
                rows, sat_k = new_states[k]
                if sat_k[p]:
                    states.append(0)
                    sat.append(True)
                else:
                    s = int(rows[p, t])
                    hit = s == lengths[k]
                    states.append(0 if hit else s)
                    sat.append(bool(hit))
            next_live.append(
                _Hyp(tokens=parent.tokens + (int(t),), total=float(scores[p, t]),
                     states=tuple(states), sat=tuple(sat))
            )
        live = next_live
        last_live = live
        cache = cache.select(parents)
        logits = lm_step(params, cache, tokens)

    if finished:
        best_finished = min(finished)
        tokens_out = list(best_finished.tokens)
        if return_info:
            return tokens_out, {"score": best_finished.score, "fallback": False}
        return tokens_out

    # Guarantee clause: complete the best partial hypothesis by appending
    # every unmet constraint verbatim.
    best = min(last_live, key=_partial_key)
    out = list(best.tokens)
    for k, c in enumerate(constraints):
        if not best.sat[k]:
            out.extend(c)
    if return_info:
        return out, {"score": best.norm, "fallback": True}
    return out
