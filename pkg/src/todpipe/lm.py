"""Small causal transformer language model, trained from scratch in numpy.

Pre-norm decoder blocks (layernorm -> causal multi-head attention -> residual,
layernorm -> GELU MLP -> residual), learned positional embeddings, and an
output projection tied to the token embedding table. Everything is float64
and the backward pass is written out by hand so gradients can be checked
against central finite differences.

Training minimizes mean next-token cross-entropy over the positions selected
by a per-token loss mask; serialization contexts are conditioning only, so
their positions carry no loss.

`lm_prefill` / `lm_step` implement incremental decoding with per-layer
key/value caches and produce logits identical to the full forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .errors import ConfigError
from .optim import Adam
from .text import PAD_ID, Vocab

_LN_EPS = 1e-5
_NEG_INF = -1e30
_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_window: int = 256

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.d_model, self.n_layers,
               self.n_heads, self.context_window) < 1:
            raise ConfigError("all model dimensions must be positive")


@dataclass
class LmParams:
    arrays: dict[str, np.ndarray]
    config: LmConfig

    def copy(self) -> "LmParams":
        return LmParams({k: v.copy() for k, v in self.arrays.items()}, self.config)


@dataclass(frozen=True)
class LmTrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("bad batch_size/epochs/learning_rate")


def init_lm(config: LmConfig, seed: int = 0) -> LmParams:
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.d_model
    arrays: dict[str, np.ndarray] = {
        "emb": rng.normal(0.0, 0.05, size=(config.vocab_size, d)),
        "pos": rng.normal(0.0, 0.05, size=(config.context_window, d)),
        "lnf_g": np.ones(d),
        "lnf_b": np.zeros(d),
    }
    for i in range(config.n_layers):
        p = f"l{i}."
        for name in ("wq", "wk", "wv", "wo"):
            arrays[p + name] = rng.normal(0.0, 0.05, size=(d, d))
        for name in ("bq", "bk", "bv", "bo"):
            arrays[p + name] = np.zeros(d)
        arrays[p + "ln1_g"] = np.ones(d)
        arrays[p + "ln1_b"] = np.zeros(d)
        arrays[p + "ln2_g"] = np.ones(d)
        arrays[p + "ln2_b"] = np.zeros(d)
        arrays[p + "w1"] = rng.normal(0.0, 0.05, size=(d, 4 * d))
        arrays[p + "b1"] = np.zeros(4 * d)
        arrays[p + "w2"] = rng.normal(0.0, 0.05, size=(4 * d, d))
        arrays[p + "b2"] = np.zeros(d)
    return LmParams(arrays, config)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + _LN_EPS)
    xhat = xc / std
    return g * xhat + b, (xhat, std, g)


def _layernorm_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, std, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = (dxhat
          - dxhat.mean(axis=-1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) / std
    return dx, dg, db


def _gelu(x: np.ndarray):
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


# ---------------------------------------------------------------------------
# Full forward / backward
# ---------------------------------------------------------------------------


def lm_forward(params: LmParams, ids: np.ndarray) -> tuple[np.ndarray, list]:
    """Logits (B, T, V) for a batch of token id rows, plus the backward cache."""
    cfg = params.config
    a = params.arrays
    b, t = ids.shape
    if t > cfg.context_window:
        raise ConfigError(f"sequence length {t} exceeds context window")
    x = a["emb"][ids] + a["pos"][:t]
    causal = np.triu(np.ones((t, t), dtype=bool), k=1)
    layer_caches = []
    for i in range(cfg.n_layers):
        p = f"l{i}."
        ahat, ln1 = _layernorm(x, a[p + "ln1_g"], a[p + "ln1_b"])
        q = _split_heads(ahat @ a[p + "wq"] + a[p + "bq"], cfg.n_heads)
        k = _split_heads(ahat @ a[p + "wk"] + a[p + "bk"], cfg.n_heads)
        v = _split_heads(ahat @ a[p + "wv"] + a[p + "bv"], cfg.n_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        att = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        att = np.where(causal, _NEG_INF, att)
        probs = _softmax(att)
        ctx = _merge_heads(np.matmul(probs, v))
        proj = ctx @ a[p + "wo"] + a[p + "bo"]
        x_attn = x + proj
        mhat, ln2 = _layernorm(x_attn, a[p + "ln2_g"], a[p + "ln2_b"])
        u1 = mhat @ a[p + "w1"] + a[p + "b1"]
        gact, gtan = _gelu(u1)
        u2 = gact @ a[p + "w2"] + a[p + "b2"]
        x_out = x_attn + u2
        layer_caches.append(
            {"ahat": ahat, "ln1": ln1, "q": q, "k": k, "v": v, "probs": probs,
             "ctx": ctx, "ln2": ln2, "mhat": mhat, "u1": u1, "gact": gact,
             "gtan": gtan, "scale": scale}
        )
        x = x_out
    xf, lnf = _layernorm(x, a["lnf_g"], a["lnf_b"])
    logits = xf @ a["emb"].T
    cache = [ids, layer_caches, xf, lnf]
    return logits, cache


def lm_backward(params: LmParams, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = params.config
    a = params.arrays
    ids, layer_caches, xf, lnf = cache
    d = cfg.d_model
    grads = {key: np.zeros_like(val) for key, val in a.items()}

    flat_dlogits = dlogits.reshape(-1, cfg.vocab_size)
    grads["emb"] += flat_dlogits.T @ xf.reshape(-1, d)
    dxf = dlogits @ a["emb"]
    dx, dg, db = _layernorm_backward(dxf, lnf)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        c = layer_caches[i]
        # MLP branch
        du2 = dx
        grads[p + "w2"] += c["gact"].reshape(-1, 4 * d).T @ du2.reshape(-1, d)
        grads[p + "b2"] += du2.reshape(-1, d).sum(axis=0)
        dgact = du2 @ a[p + "w2"].T
        du1 = _gelu_backward(dgact, c["u1"], c["gtan"])
        grads[p + "w1"] += c["mhat"].reshape(-1, d).T @ du1.reshape(-1, 4 * d)
        grads[p + "b1"] += du1.reshape(-1, 4 * d).sum(axis=0)
        dmhat = du1 @ a[p + "w1"].T
        dx_attn, dg2, db2 = _layernorm_backward(dmhat, c["ln2"])
        grads[p + "ln2_g"] += dg2
        grads[p + "ln2_b"] += db2
        dx_attn = dx_attn + dx  # residual
        # Attention branch
        dproj = dx_attn
        grads[p + "wo"] += c["ctx"].reshape(-1, d).T @ dproj.reshape(-1, d)
        grads[p + "bo"] += dproj.reshape(-1, d).sum(axis=0)
        dctx = _split_heads(dproj @ a[p + "wo"].T, cfg.n_heads)
        dprobs = np.matmul(dctx, c["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(c["probs"].transpose(0, 1, 3, 2), dctx)
        datt = c["probs"] * (dprobs - (dprobs * c["probs"]).sum(axis=-1, keepdims=True))
        datt = datt * c["scale"]
        dq = np.matmul(datt, c["k"])
        dk = np.matmul(datt.transpose(0, 1, 3, 2), c["q"])
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        dahat = np.zeros_like(c["ahat"])
        for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
            grads[p + name] += c["ahat"].reshape(-1, d).T @ dmat.reshape(-1, d)
            grads[p + "b" + name[1]] += dmat.reshape(-1, d).sum(axis=0)
            dahat += dmat @ a[p + name].T
        dx_in, dg1, db1 = _layernorm_backward(dahat, c["ln1"])
        grads[p + "ln1_g"] += dg1
        grads[p + "ln1_b"] += db1
        dx = dx_in + dx_attn  # residual

    t = ids.shape[1]
    grads["pos"][:t] += dx.sum(axis=0)
    np.add.at(grads["emb"], ids.ravel(), dx.reshape(-1, d))
    return grads


def lm_loss_and_grads(
    params: LmParams, ids: np.ndarray, target_mask: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean masked next-token cross-entropy and its parameter gradients.

    `target_mask[b, j]` selects token `ids[b, j]` (j >= 1) as a prediction
    target; positions with mask 0 contribute nothing.
    """
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    tmask = target_mask[:, 1:].astype(np.float64)
    count = tmask.sum()
    if count == 0:
        raise ConfigError("loss mask selects no positions")
    logits, cache = lm_forward(params, inputs)
    probs = _softmax(logits)
    b_idx, t_idx = np.nonzero(tmask)
    picked = probs[b_idx, t_idx, targets[b_idx, t_idx]]
    loss = float(-np.sum(np.log(picked)) / count)
    dlogits = probs * tmask[..., None]
    dlogits[b_idx, t_idx, targets[b_idx, t_idx]] -= tmask[b_idx, t_idx]
    dlogits /= count
    return loss, lm_backward(params, cache, dlogits)


def lm_loss(params: LmParams, ids: np.ndarray, target_mask: np.ndarray) -> float:
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    tmask = target_mask[:, 1:].astype(np.float64)
    count = tmask.sum()
    if count == 0:
        raise ConfigError("loss mask selects no positions")
    logits, _ = lm_forward(params, inputs)
    probs = _softmax(logits)
    b_idx, t_idx = np.nonzero(tmask)
    picked = probs[b_idx, t_idx, targets[b_idx, t_idx]]
    return float(-np.sum(np.log(picked)) / count)


def _pad_sequences(batch: list[tuple[list[int], list[int]]]) -> tuple[np.ndarray, np.ndarray]:
    max_len = max(len(ids) for ids, _ in batch)
    ids = np.full((len(batch), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(batch), max_len), dtype=np.int64)
    for i, (seq, m) in enumerate(batch):
        ids[i, : len(seq)] = seq
        mask[i, : len(m)] = m
    return ids, mask


def lm_train(
    params: LmParams,
    sequences: list[tuple[list[int], list[int]]],
    config: LmTrainConfig,
) -> LmParams:
    """Minibatch Adam over (token ids, target mask) pairs; pure given the seed."""
    config.validate()
    if not sequences:
        raise ConfigError("training needs at least one sequence")
    for seq, mask in sequences:
        if len(seq) != len(mask):
            raise ConfigError("sequence and mask lengths differ")
        if len(seq) > params.config.context_window:
            raise ConfigError("training sequence exceeds the context window")
    out = params.copy()
    if config.epochs == 0:
        return out
    rng = np.random.default_rng(config.seed)
    adam = Adam(config.learning_rate)
    n = len(sequences)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = [sequences[i] for i in order[start : start + config.batch_size]]
            ids, mask = _pad_sequences(batch)
            if mask[:, 1:].sum() == 0:
                continue
            _, grads = lm_loss_and_grads(out, ids, mask)
            adam.step(out.arrays, grads)
    return out


def lm_perplexity(params: LmParams, sequences: list[tuple[list[int], list[int]]]) -> float:
    ids, mask = _pad_sequences(sequences)
    return float(np.exp(lm_loss(params, ids, mask)))


# ---------------------------------------------------------------------------
# Incremental decoding
# ---------------------------------------------------------------------------


@dataclass
class DecodeCache:
    keys: list[np.ndarray]    # per layer (N, H, T, hd)
    values: list[np.ndarray]
    length: int

    def select(self, indices: np.ndarray | list[int]) -> "DecodeCache":
        idx = np.asarray(indices, dtype=np.int64)
        return DecodeCache(
            keys=[k[idx] for k in self.keys],
            values=[v[idx] for v in self.values],
            length=self.length,
        )


def lm_prefill(params: LmParams, ids: np.ndarray) -> tuple[np.ndarray, DecodeCache]:
    """Run the full forward over a prompt; returns last-position logits + cache."""
    logits, cache = lm_forward(params, ids)
    layer_caches = cache[1]
    dec = DecodeCache(
        keys=[c["k"].copy() for c in layer_caches],
        values=[c["v"].copy() for c in layer_caches],
        length=ids.shape[1],
    )
    return logits[:, -1, :], dec


def lm_step(params: LmParams, cache: DecodeCache, new_ids: np.ndarray) -> np.ndarray:
    """Advance every row by one token; returns next-token logits (N, V)."""
    cfg = params.config
    a = params.arrays
    pos = cache.length
    if pos >= cfg.context_window:
        raise ConfigError("decode exceeded the context window")
    x = a["emb"][new_ids] + a["pos"][pos]          # (N, d)
    n = x.shape[0]
    hd = cfg.d_model // cfg.n_heads
    for i in range(cfg.n_layers):
        p = f"l{i}."
        ahat, _ = _layernorm(x, a[p + "ln1_g"], a[p + "ln1_b"])
        q = (ahat @ a[p + "wq"] + a[p + "bq"]).reshape(n, cfg.n_heads, 1, hd)
        k = (ahat @ a[p + "wk"] + a[p + "bk"]).reshape(n, cfg.n_heads, 1, hd)
        v = (ahat @ a[p + "wv"] + a[p + "bv"]).reshape(n, cfg.n_heads, 1, hd)
        cache.keys[i] = np.concatenate([cache.keys[i], k], axis=2)
        cache.values[i] = np.concatenate([cache.values[i], v], axis=2)
        scale = 1.0 / np.sqrt(hd)
        att = np.matmul(q, cache.keys[i].transpose(0, 1, 3, 2)) * scale
        probs = _softmax(att)
        ctx = np.matmul(probs, cache.values[i]).reshape(n, cfg.d_model)
        x = x + ctx @ a[p + "wo"] + a[p + "bo"]
        mhat, _ = _layernorm(x, a[p + "ln2_g"], a[p + "ln2_b"])
        gact, _ = _gelu(mhat @ a[p + "w1"] + a[p + "b1"])
        x = x + gact @ a[p + "w2"] + a[p + "b2"]
    xf, _ = _layernorm(x, a["lnf_g"], a["lnf_b"])
    cache.length = pos + 1
    return xf @ a["emb"].T


def save_lm(path, params: LmParams, vocab: Vocab) -> None:
    cfg = params.config
    meta = {
        "vocab_size": cfg.vocab_size, "d_model": cfg.d_model,
        "n_layers": cfg.n_layers, "n_heads": cfg.n_heads,
        "context_window": cfg.context_window, "tokens": vocab.tokens,
    }
    checkpoint.save(path, params.arrays, kind="lm", meta=meta)


def load_lm(path) -> tuple[LmParams, Vocab]:
    arrays, _, meta = checkpoint.load(path, expect_kind="lm")
    cfg = LmConfig(
        vocab_size=meta["vocab_size"], d_model=meta["d_model"],
        n_layers=meta["n_layers"], n_heads=meta["n_heads"],
        context_window=meta["context_window"],
    )
    return LmParams(arrays, cfg), Vocab(list(meta["tokens"]))
