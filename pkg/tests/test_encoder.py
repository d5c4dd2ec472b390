import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from todpipe.encoder import (
    ContrastiveConfig,
    EncoderParams,
    contrastive_loss,
    contrastive_loss_and_grad,
    corrupt_view,
    encode,
    encode_batch,
    encode_backward,
    init_encoder,
    load_encoder,
    pretrain,
    save_encoder,
)
from todpipe.errors import ConfigError, DegenerateInputError
from todpipe.text import CORRUPT_ID, PAD_ID, build_vocab


def test_corrupt_rate_zero_is_identity(rng):
    tokens = [5, 6, 7, 8]
    assert corrupt_view(tokens, 0.0, rng) == tokens


def test_corrupt_rate_one_replaces_everything(rng):
    assert corrupt_view([5, 6, 7], 1.0, rng) == [CORRUPT_ID] * 3


def test_corrupt_preserves_length(rng):
    for n in (0, 1, 17):
        assert len(corrupt_view(list(range(10, 10 + n)), 0.4, rng)) == n


def test_corrupt_count_within_three_sigma():
    rng = np.random.default_rng(7)
    n, r = 10000, 0.3
    out = corrupt_view(list(range(10, 10 + n)) * 1, r, rng)
    # token ids 10.. never equal CORRUPT_ID, so count is exact
    hits = sum(1 for t in out if t == CORRUPT_ID)
    sigma = np.sqrt(n * r * (1 - r))
    assert abs(hits - n * r) <= 3 * sigma


def test_zero_embedding_encodes_to_tanh_bias(rng):
    params = init_encoder(10, d=4, seed=0)
    params.emb[:] = 0.0
    params.bias[:] = np.array([0.3, -0.2, 0.0, 1.0])
    for tokens in ([], [3], [4, 5, 6]):
        np.testing.assert_allclose(encode(params, tokens), np.tanh(params.bias))


def test_eval_mode_deterministic():
    params = init_encoder(12, d=8, seed=1)
    tokens = [3, 4, 5]
    np.testing.assert_array_equal(encode(params, tokens), encode(params, tokens))


def test_empty_sequence_encodes_as_pad():
    params = init_encoder(12, d=8, seed=1)
    np.testing.assert_array_equal(encode(params, []), encode(params, [PAD_ID]))


def test_train_mode_is_stochastic():
    params = init_encoder(12, d=32, seed=1, dropout_rate=0.5)
    rng = np.random.default_rng(0)
    a = encode(params, [3, 4, 5], train=True, rng=rng)
    b = encode(params, [3, 4, 5], train=True, rng=rng)
    assert not np.allclose(a, b)


def test_train_mode_requires_rng():
    params = init_encoder(12, d=8, seed=1, dropout_rate=0.5)
    with pytest.raises(ConfigError):
        encode(params, [3], train=True)


def test_contrastive_single_pair_is_zero():
    a = np.array([[3.0, 4.0]])
    b = np.array([[1.0, -2.0]])
    assert contrastive_loss(a, b, 0.07) == 0.0


def test_contrastive_two_orthogonal_pairs_value():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss = contrastive_loss(a, a, 1.0)
    assert abs(loss - 0.31326168751822286) < 1e-12


def test_contrastive_nonnegative_and_finite(rng):
    for _ in range(20):
        n, d = int(rng.integers(1, 6)), int(rng.integers(2, 8))
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        loss = contrastive_loss(a, b, 0.1)
        assert loss >= -1e-12 and np.isfinite(loss)


def test_contrastive_rejects_zero_norm():
    a = np.array([[0.0, 0.0], [1.0, 2.0]])
    with pytest.raises(DegenerateInputError):
        contrastive_loss(a, a, 1.0)


def test_contrastive_gradient_matches_finite_differences(rng):
    """Analytic gradient through the encoder vs central differences, eval mode."""
    h = 1e-5
    for trial in range(5):
        v, d, n = 10, int(rng.integers(3, 8)), int(rng.integers(2, 5))
        params = init_encoder(v, d=d, seed=trial, dropout_rate=0.0)
        seqs_a = [list(rng.integers(3, v, size=rng.integers(1, 6))) for _ in range(n)]
        seqs_b = [list(rng.integers(3, v, size=rng.integers(1, 6))) for _ in range(n)]
        tau = 0.07

        def loss_of():
            enc_a, _ = encode_batch(params, seqs_a)
            enc_b, _ = encode_batch(params, seqs_b)
            return contrastive_loss(enc_a, enc_b, tau)

        enc_a, cache_a = encode_batch(params, seqs_a)
        enc_b, cache_b = encode_batch(params, seqs_b)
        _, da, db = contrastive_loss_and_grad(enc_a, enc_b, tau)
        ga = encode_backward(params, cache_a, da)
        gb = encode_backward(params, cache_b, db)
        grads = {k: ga[k] + gb[k] for k in ga}
        for key, arr in params.arrays().items():
            flat, gflat = arr.ravel(), grads[key].ravel()
            for i in range(0, flat.size, max(1, flat.size // 10)):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_of()
                flat[i] = orig - h
                down = loss_of()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                assert abs(gflat[i] - fd) <= 1e-4 * max(1e-6, abs(gflat[i]) + abs(fd))


def test_pretrain_zero_epochs_returns_params_unchanged():
    params = init_encoder(12, d=8, seed=1)
    out = pretrain(params, [[3, 4]], ContrastiveConfig(epochs=0))
    for key in params.arrays():
        np.testing.assert_array_equal(out.arrays()[key], params.arrays()[key])


def test_pretrain_deterministic_given_seed():
    params = init_encoder(20, d=16, seed=3)
    seqs = [[int(x) for x in np.random.default_rng(i).integers(3, 20, size=6)]
            for i in range(30)]
    cfg = ContrastiveConfig(epochs=2, batch_size=8, seed=11)
    out1 = pretrain(params, seqs, cfg)
    out2 = pretrain(params, seqs, cfg)
    for key in out1.arrays():
        np.testing.assert_array_equal(out1.arrays()[key], out2.arrays()[key])


def test_pretrain_rejects_empty_and_bad_config():
    params = init_encoder(12, d=8, seed=1)
    with pytest.raises(ConfigError):
        pretrain(params, [], ContrastiveConfig())
    with pytest.raises(ConfigError):
        pretrain(params, [[3]], ContrastiveConfig(temperature=0.0))


def test_pretrain_aligns_views_of_same_utterance():
    """After pretraining, two corrupted views of one utterance are more similar
    than views of different utterances, on average."""
    data_rng = np.random.default_rng(5)
    seqs = [list(data_rng.integers(3, 40, size=data_rng.integers(4, 10)))
            for _ in range(120)]
    params = init_encoder(40, d=32, seed=2, dropout_rate=0.1)
    cfg = ContrastiveConfig(epochs=3, batch_size=16, seed=4, learning_rate=1e-2)
    trained = pretrain(params, seqs, cfg)

    probe_rng = np.random.default_rng(9)
    views_a = [corrupt_view(s, 0.15, probe_rng) for s in seqs]
    views_b = [corrupt_view(s, 0.15, probe_rng) for s in seqs]
    enc_a, _ = encode_batch(trained, views_a)
    enc_b, _ = encode_batch(trained, views_b)
    enc_a /= np.linalg.norm(enc_a, axis=1, keepdims=True)
    enc_b /= np.linalg.norm(enc_b, axis=1, keepdims=True)
    sims = enc_a @ enc_b.T
    paired = np.diag(sims).mean()
    cross = (sims.sum() - np.trace(sims)) / (sims.size - len(seqs))
    assert paired > cross


def test_checkpoint_roundtrip_bitwise(tmp_path):
    vocab = build_vocab(["套餐资费流量"])
    params = init_encoder(len(vocab), d=16, seed=8, dropout_rate=0.25)
    path = tmp_path / "enc.ckpt"
    save_encoder(path, params, vocab)
    loaded, loaded_vocab = load_encoder(path)
    assert loaded_vocab.tokens == vocab.tokens
    assert loaded.dropout_rate == params.dropout_rate
    for key in params.arrays():
        np.testing.assert_array_equal(loaded.arrays()[key], params.arrays()[key])


@given(st.lists(st.integers(min_value=3, max_value=50), max_size=40),
       st.floats(min_value=0.0, max_value=1.0))
def test_corrupt_view_length_preserved(tokens, rate):
    rng = np.random.default_rng(0)
    assert len(corrupt_view(tokens, rate, rng)) == len(tokens)
