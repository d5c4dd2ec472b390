"""Trainable sentence encoder and contrastive pretraining.

The encoder is deliberately small: mean-pooled token embeddings followed by
an affine projection and tanh. That keeps every gradient in closed form and
finite-difference checkable while still giving the contrastive objective and
the corruption augmentation something to shape.

Two views of an utterance are produced by independently replacing tokens
with the corruption symbol and applying independent dropout masks; the
in-batch InfoNCE objective pulls the paired views together:

    l_i = -log( exp(cos(a_i, b_i)/tau) / sum_j exp(cos(a_i, b_j)/tau) )
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import ConfigError, DegenerateInputError
from .optim import Adam
from .text import CORRUPT_ID, PAD_ID, Vocab


@dataclass
class EncoderParams:
    emb: np.ndarray          # (vocab, d)
    proj: np.ndarray         # (d, d)
    bias: np.ndarray         # (d,)
    dropout_rate: float = 0.1

    @property
    def d(self) -> int:
        return self.emb.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"emb": self.emb, "proj": self.proj, "bias": self.bias}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.emb.copy(), self.proj.copy(), self.bias.copy(),
                             self.dropout_rate)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.05
    corrupt_rate: float = 0.15
    batch_size: int = 64
    epochs: int = 1
    learning_rate: float = 5e-3
    seed: int = 0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.corrupt_rate <= 1.0:
            raise ConfigError("corrupt_rate must be in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("bad batch_size/epochs/learning_rate")


def init_encoder(vocab_size: int, d: int = 64, seed: int = 0,
                 dropout_rate: float = 0.1) -> EncoderParams:
    rng = np.random.default_rng(seed)
    return EncoderParams(
        emb=rng.normal(0.0, 0.1, size=(vocab_size, d)),
        proj=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)),
        bias=np.zeros(d),
        dropout_rate=dropout_rate,
    )


def corrupt_view(tokens: list[int], rate: float, rng: np.random.Generator) -> list[int]:
    """Each position independently replaced by the corruption id with prob `rate`."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("corruption rate must be in [0, 1]")
    if not tokens:
        return []
    hits = rng.random(len(tokens)) < rate
    return [CORRUPT_ID if h else t for t, h in zip(tokens, hits)]


def _pad_batch(sequences: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    seqs = [s if s else [PAD_ID] for s in sequences]
    max_len = max(len(s) for s in seqs)
    ids = np.full((len(seqs), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), max_len))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def encode_batch(
    params: EncoderParams,
    sequences: list[list[int]],
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Encode a batch; returns (B, d) vectors plus a cache for backward.

    Empty sequences are encoded as a single pad token. Train mode applies
    inverted dropout to the token embeddings and requires an rng.
    """
    if train and params.dropout_rate > 0 and rng is None:
        raise ConfigError("train-mode encoding requires an rng")
    ids, mask = _pad_batch(sequences)
    x = params.emb[ids] * mask[..., None]
    keep = None
    if train and params.dropout_rate > 0:
        p = params.dropout_rate
        keep = (rng.random(x.shape) >= p) / (1.0 - p)
        x = x * keep
    counts = mask.sum(axis=1)
    z = x.sum(axis=1) / counts[:, None]
    h = np.tanh(z @ params.proj + params.bias)
    cache = {"ids": ids, "mask": mask, "keep": keep, "counts": counts, "z": z, "h": h}
    return h, cache


def encode(params: EncoderParams, tokens: list[int], train: bool = False,
           rng: np.random.Generator | None = None) -> np.ndarray:
    h, _ = encode_batch(params, [tokens], train=train, rng=rng)
    return h[0]


def encode_backward(params: EncoderParams, cache: dict, dh: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss wrt encoder parameters given d(loss)/d(h)."""
    h, z = cache["h"], cache["z"]
    du = dh * (1.0 - h * h)
    dbias = du.sum(axis=0)
    dproj = z.T @ du
    dz = du @ params.proj.T
    dx = dz[:, None, :] * (cache["mask"] / cache["counts"][:, None])[..., None]
    if cache["keep"] is not None:
        dx = dx * cache["keep"]
    demb = np.zeros_like(params.emb)
    flat_ids = cache["ids"].ravel()
    np.add.at(demb, flat_ids, dx.reshape(-1, params.d))
    return {"emb": demb, "proj": dproj, "bias": dbias}


def contrastive_loss(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    loss, _, _ = contrastive_loss_and_grad(a, b, tau)
    return loss


def contrastive_loss_and_grad(
    a: np.ndarray, b: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """In-batch InfoNCE over cosine similarities; also returns d/da, d/db."""
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    if a.shape != b.shape or a.ndim != 2:
        raise ConfigError("encodings must be two equal-shape (n, d) arrays")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < 1e-300) or np.any(nb < 1e-300):
        raise DegenerateInputError("zero-norm encoding")
    ah = a / na[:, None]
    bh = b / nb[:, None]
    n = a.shape[0]
    scores = ah @ bh.T / tau
    m = scores.max(axis=1, keepdims=True)
    expo = np.exp(scores - m)
    z = expo.sum(axis=1)
    log_z = m[:, 0] + np.log(z)
    loss = float(np.mean(log_z - np.diag(scores)))

    d_scores = (expo / z[:, None] - np.eye(n)) / n
    dah = d_scores @ bh / tau
    dbh = d_scores.T @ ah / tau
    da = (dah - (dah * ah).sum(axis=1, keepdims=True) * ah) / na[:, None]
    db = (dbh - (dbh * bh).sum(axis=1, keepdims=True) * bh) / nb[:, None]
    return loss, da, db


def pretrain(
    params: EncoderParams,
    sequences: list[list[int]],
    config: ContrastiveConfig,
) -> EncoderParams:
    """Contrastive pretraining over tokenized utterances; pure in (inputs, config)."""
    config.validate()
    if not sequences:
        raise ConfigError("pretraining needs at least one utterance")
    out = params.copy()
    if config.epochs == 0:
        return out
    rng = np.random.default_rng(config.seed)
    adam = Adam(config.learning_rate)
    arrays = out.arrays()
    n = len(sequences)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = [sequences[i] for i in order[start : start + config.batch_size]]
            view_a = [corrupt_view(s, config.corrupt_rate, rng) for s in batch]
            view_b = [corrupt_view(s, config.corrupt_rate, rng) for s in batch]
            enc_a, cache_a = encode_batch(out, view_a, train=True, rng=rng)
            enc_b, cache_b = encode_batch(out, view_b, train=True, rng=rng)
            _, da, db = contrastive_loss_and_grad(enc_a, enc_b, config.temperature)
            grads_a = encode_backward(out, cache_a, da)
            grads_b = encode_backward(out, cache_b, db)
            grads = {k: grads_a[k] + grads_b[k] for k in grads_a}
            adam.step(arrays, grads)
    return out


def save_encoder(path, params: EncoderParams, vocab: Vocab) -> None:
    meta = {"d": params.d, "dropout_rate": params.dropout_rate, "tokens": vocab.tokens}
    checkpoint.save(path, params.arrays(), kind="encoder", meta=meta)


def load_encoder(path) -> tuple[EncoderParams, Vocab]:
    arrays, _, meta = checkpoint.load(path, expect_kind="encoder")
    params = EncoderParams(arrays["emb"], arrays["proj"], arrays["bias"],
                           dropout_rate=meta["dropout_rate"])
    return params, Vocab(list(meta["tokens"]))
