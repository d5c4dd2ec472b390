import numpy as np
import pytest

from todpipe.errors import ConfigError
from todpipe.lm import (
    DecodeCache,
    LmConfig,
    LmTrainConfig,
    init_lm,
    lm_forward,
    lm_loss,
    lm_loss_and_grads,
    lm_perplexity,
    lm_prefill,
    lm_step,
    lm_train,
    load_lm,
    save_lm,
)
from todpipe.text import build_vocab

TINY = LmConfig(vocab_size=12, d_model=8, n_layers=1, n_heads=2, context_window=16)


def random_batch(rng, vocab=12, rows=2, length=9):
    ids = rng.integers(0, vocab, size=(rows, length))
    mask = (rng.random((rows, length)) < 0.6).astype(np.int64)
    mask[:, 0] = 0
    if mask[:, 1:].sum() == 0:
        mask[0, 1] = 1
    return ids, mask


def test_config_validation():
    with pytest.raises(ConfigError):
        LmConfig(vocab_size=10, d_model=10, n_heads=3).validate()
    with pytest.raises(ConfigError):
        LmConfig(vocab_size=0).validate()


def test_forward_shapes_and_determinism(rng):
    params = init_lm(TINY, seed=0)
    ids, _ = random_batch(rng)
    logits1, _ = lm_forward(params, ids)
    logits2, _ = lm_forward(params, ids)
    assert logits1.shape == (2, 9, 12)
    np.testing.assert_array_equal(logits1, logits2)


def test_forward_rejects_overlong_input(rng):
    params = init_lm(TINY, seed=0)
    with pytest.raises(ConfigError):
        lm_forward(params, rng.integers(0, 12, size=(1, 17)))


def test_gradients_match_finite_differences(rng):
    """Central differences on every parameter tensor at tiny dimensions."""
    params = init_lm(TINY, seed=1)
    ids, mask = random_batch(rng)
    _, grads = lm_loss_and_grads(params, ids, mask)
    h = 1e-5
    check_rng = np.random.default_rng(2)
    for key, arr in params.arrays.items():
        flat, gflat = arr.ravel(), grads[key].ravel()
        idxs = check_rng.choice(flat.size, size=min(5, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = lm_loss(params, ids, mask)
            flat[i] = orig - h
            down = lm_loss(params, ids, mask)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            rel = abs(gflat[i] - fd) / max(1e-8, abs(gflat[i]) + abs(fd))
            assert rel < 1e-3, f"{key}[{i}]: analytic {gflat[i]}, fd {fd}"


def test_loss_mask_selects_positions(rng):
    params = init_lm(TINY, seed=3)
    ids = rng.integers(0, 12, size=(1, 8))
    full = np.ones((1, 8), dtype=np.int64)
    full[:, 0] = 0
    half = full.copy()
    half[:, 4:] = 0
    assert lm_loss(params, ids, full) != pytest.approx(lm_loss(params, ids, half))
    with pytest.raises(ConfigError):
        lm_loss(params, ids, np.zeros_like(full))


def test_train_zero_epochs_unchanged():
    params = init_lm(TINY, seed=0)
    out = lm_train(params, [([1, 2, 3], [0, 1, 1])], LmTrainConfig(epochs=0))
    for key, arr in params.arrays.items():
        np.testing.assert_array_equal(out.arrays[key], arr)


def test_train_deterministic(rng):
    params = init_lm(TINY, seed=0)
    seqs = [(list(rng.integers(0, 12, size=6)), [0] + [1] * 5) for _ in range(10)]
    cfg = LmTrainConfig(epochs=2, batch_size=4, seed=7)
    out1 = lm_train(params, seqs, cfg)
    out2 = lm_train(params, seqs, cfg)
    for key in out1.arrays:
        np.testing.assert_array_equal(out1.arrays[key], out2.arrays[key])


def test_train_rejects_mismatched_mask():
    params = init_lm(TINY, seed=0)
    with pytest.raises(ConfigError):
        lm_train(params, [([1, 2, 3], [0, 1])], LmTrainConfig())


def test_memorization_perplexity(rng):
    """A 20-sequence fixture is memorized to perplexity < 1.5."""
    cfg = LmConfig(vocab_size=30, d_model=32, n_layers=2, n_heads=2, context_window=32)
    seqs = []
    for i in range(20):
        body = list(rng.integers(3, 30, size=int(rng.integers(6, 14))))
        seqs.append(([1] + body, [0] + [1] * len(body)))
    params = lm_train(init_lm(cfg, seed=0), seqs,
                      LmTrainConfig(learning_rate=3e-3, batch_size=10, epochs=150, seed=0))
    assert lm_perplexity(params, seqs) < 1.5


def test_incremental_decode_matches_full_forward(rng):
    params = init_lm(LmConfig(vocab_size=20, d_model=16, n_layers=2, n_heads=4,
                              context_window=32), seed=5)
    ids = rng.integers(0, 20, size=(3, 14))
    full, _ = lm_forward(params, ids)
    logits, cache = lm_prefill(params, ids[:, :6])
    got = [logits]
    for j in range(6, 14):
        logits = lm_step(params, cache, ids[:, j])
        got.append(logits)
    np.testing.assert_allclose(np.stack(got, axis=1), full[:, 5:, :], atol=1e-12)


def test_cache_select_reorders_rows(rng):
    params = init_lm(TINY, seed=5)
    ids = rng.integers(0, 12, size=(3, 5))
    _, cache = lm_prefill(params, ids)
    picked = cache.select([2, 0])
    np.testing.assert_array_equal(picked.keys[0][0], cache.keys[0][2])
    np.testing.assert_array_equal(picked.keys[0][1], cache.keys[0][0])
    assert picked.length == cache.length


def test_step_beyond_window_raises(rng):
    params = init_lm(TINY, seed=0)
    ids = rng.integers(0, 12, size=(1, 16))
    _, cache = lm_prefill(params, ids)
    with pytest.raises(ConfigError):
        lm_step(params, cache, np.array([1]))


def test_checkpoint_roundtrip(tmp_path):
    vocab = build_vocab(["语言模型测试"])
    cfg = LmConfig(vocab_size=len(vocab), d_model=8, n_layers=1, n_heads=2,
                   context_window=16)
    params = init_lm(cfg, seed=9)
    path = tmp_path / "lm.ckpt"
    save_lm(path, params, vocab)
    loaded, loaded_vocab = load_lm(path)
    assert loaded.config == cfg
    assert loaded_vocab.tokens == vocab.tokens
    for key, arr in params.arrays.items():
        np.testing.assert_array_equal(loaded.arrays[key], arr)
