import numpy as np
import pytest

import parley.vocab as V
from parley.errors import ConfigError, DataError
from parley.model import (DialogModel, ModelConfig, attention_with_relative_bias,
                          bucket_offsets, num_relative_buckets, relative_bucket)
from parley.tensor import RngState, Tensor, finite_diff_check, reparameterize


def make_model(**overrides):
    defaults = dict(vocab_size=50, hidden_size=16, num_encoder_layers=2,
                    num_decoder_layers=2, num_heads=2, ff_size=32, latent_size=4,
                    ngram=2, max_positions=32, max_turns=8)
    defaults.update(overrides)
    return DialogModel(ModelConfig(**defaults), RngState(7))


CTX = np.array([V.CLS, 8, 9, 10, 11, 12, 13])
TURNS = np.array([0, 0, 0, 0, 1, 1, 1])
ROLES = np.array([2, 0, 0, 0, 1, 1, 1])


# -- config validation -------------------------------------------------------------

def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=50, hidden_size=10, num_heads=3)


def test_config_rejects_zero_latent_when_used():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=50, latent_size=0, use_latent=True)


def test_config_rejects_bad_ngram():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=50, ngram=0)


# -- embeddings ----------------------------------------------------------------------

def test_embed_zero_tables_give_zero_output():
    model = make_model()
    for name in ("tok_emb", "pos_emb", "turn_emb", "role_emb"):
        model.params[name].data[:] = 0.0
    out = model.embed_inputs(CTX, TURNS, ROLES)
    assert np.array_equal(out.data, np.zeros((len(CTX), 16)))


def test_embed_ignores_turns_when_flag_off():
    model = make_model(use_turn_ape=False)
    a = model.embed_inputs(CTX, TURNS, ROLES)
    b = model.embed_inputs(CTX, TURNS[::-1].copy(), ROLES)
    assert np.array_equal(a.data, b.data)


def test_embed_same_turn_and_role_differ_only_by_token_and_position():
    model = make_model()
    out = model.embed_inputs(np.array([8, 9]), np.array([0, 0]), np.array([1, 1]))
    tok = model.params["tok_emb"].data
    pos = model.params["pos_emb"].data
    diff = out.data[0] - out.data[1]
    expected = (tok[8] + pos[0]) - (tok[9] + pos[1])
    assert np.allclose(diff, expected, atol=1e-12)


def test_embed_rejects_out_of_range_ids():
    model = make_model()
    with pytest.raises(DataError, match="token id"):
        model.embed_inputs(np.array([50]), np.array([0]), np.array([0]))
    with pytest.raises(DataError, match="turn id"):
        model.embed_inputs(np.array([1]), np.array([99]), np.array([0]))


# -- relative bucketing -----------------------------------------------------------------

def rpe_config(**kw):
    base = dict(vocab_size=50, use_token_rpe=True, use_turn_rpe=True,
                rpe_num_buckets=8, rpe_max_distance=32)
    base.update(kw)
    return ModelConfig(**base)


def test_zero_offset_is_bucket_zero():
    cfg = rpe_config(use_turn_rpe=False)
    assert relative_bucket(0, 0, cfg) == 0


def test_bucket_clamps_beyond_max_distance():
    cfg = rpe_config(use_turn_rpe=False)
    B = cfg.rpe_num_buckets
    assert relative_bucket(cfg.rpe_max_distance + 50, 0, cfg) == B - 1
    assert relative_bucket(10 * cfg.rpe_max_distance, 0, cfg) == B - 1
    assert relative_bucket(-10 * cfg.rpe_max_distance, 0, cfg) == 2 * B - 1


def test_bucket_sign_doubles_range():
    cfg = rpe_config(use_turn_rpe=False)
    assert relative_bucket(3, 0, cfg) == 3
    assert relative_bucket(-3, 0, cfg) == 3 + cfg.rpe_num_buckets


def test_combined_bucket_separates_turn_offsets():
    cfg = rpe_config()
    assert relative_bucket(5, 1, cfg) != relative_bucket(5, 2, cfg)
    # exact-range token offsets stay distinguishable at fixed turn offset
    assert relative_bucket(2, 1, cfg) != relative_bucket(3, 1, cfg)


def test_combined_pairing_is_injective_over_bucket_grid():
    cfg = rpe_config(rpe_num_buckets=4, rpe_max_distance=16)
    seen = {}
    for dt in range(-20, 21):
        for dr in range(-20, 21):
            idx = relative_bucket(dt, dr, cfg)
            key = (int(bucket_offsets(dt, 4, 16)), int(bucket_offsets(dr, 4, 16)))
            assert 0 <= idx < num_relative_buckets(cfg)
            if key in seen:
                assert seen[key] == idx
            seen[key] = idx
    assert len(set(seen.values())) == len(seen)


def test_bucket_requires_an_enabled_axis():
    cfg = ModelConfig(vocab_size=50)
    with pytest.raises(ConfigError):
        relative_bucket(1, 1, cfg)


def reference_bucket(d, num_buckets, max_distance):
    """Scalar reference: exact small offsets, log-spaced large ones, sign block."""
    import math
    n = abs(d)
    exact = num_buckets // 2
    if n < exact:
        b = n
    else:
        b = exact + int(math.log(n / exact) / math.log(max_distance / exact)
                        * (num_buckets - exact))
        b = min(b, num_buckets - 1)
    return b + (num_buckets if d < 0 else 0)


def test_bucket_offsets_match_scalar_reference():
    for B, M in ((8, 32), (16, 64), (4, 10)):
        ds = np.arange(-3 * M, 3 * M + 1)
        got = bucket_offsets(ds, B, M)
        want = np.array([reference_bucket(int(d), B, M) for d in ds])
        assert np.array_equal(got, want)


# -- attention ---------------------------------------------------------------------------

def test_zero_bias_table_reduces_to_vanilla_attention():
    rng = np.random.default_rng(0)
    q = Tensor(rng.normal(size=(5, 4)))
    k = Tensor(rng.normal(size=(5, 4)))
    v = Tensor(rng.normal(size=(5, 4)))
    table = Tensor(np.zeros((12, 4)))
    buckets = rng.integers(0, 12, size=(5, 5))
    plain = attention_with_relative_bias(q, k, v)
    biased = attention_with_relative_bias(q, k, v, bias_table=table, bucket_matrix=buckets)
    assert np.allclose(plain.data, biased.data, atol=1e-9)


def test_single_key_gets_full_weight():
    rng = np.random.default_rng(1)
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(1, 4)))
    v = Tensor(rng.normal(size=(1, 4)))
    out = attention_with_relative_bias(q, k, v)
    assert np.allclose(out.data, np.repeat(v.data, 3, axis=0), atol=1e-12)


def test_large_bias_shifts_attention_argmax():
    d = 4
    q = Tensor(np.ones((1, d)))
    k = Tensor(np.ones((3, d)))
    v = Tensor(np.eye(3, d))
    table = Tensor(np.vstack([np.zeros(d), np.ones(d) * 50.0]))
    buckets = np.array([[0, 0, 1]])
    out = attention_with_relative_bias(q, k, v, bias_table=table, bucket_matrix=buckets)
    assert np.argmax(out.data[0]) == 2  # the biased key wins


# -- encoder ------------------------------------------------------------------------------

def test_encoder_output_shapes():
    model = make_model()
    enc = model.encode(CTX, TURNS, ROLES)
    assert enc.hidden.shape == (len(CTX), 16)
    assert enc.h_cls.shape == (16,)
    assert np.array_equal(enc.h_cls.data, enc.hidden.data[0])


def test_zero_layer_encoder_is_identity_on_embeddings():
    model = make_model(num_encoder_layers=0)
    enc = model.encode(CTX, TURNS, ROLES)
    emb = model.embed_inputs(CTX, TURNS, ROLES)
    assert np.array_equal(enc.hidden.data, emb.data)


def test_pad_columns_do_not_leak_into_real_positions():
    model = make_model()
    is_pad = np.array([False] * 5 + [True] * 2)
    a_ids = np.concatenate([CTX[:5], [20, 21]])
    b_ids = np.concatenate([CTX[:5], [33, 44]])
    a = model.encode(a_ids, TURNS, ROLES, is_pad=is_pad)
    b = model.encode(b_ids, TURNS, ROLES, is_pad=is_pad)
    assert np.allclose(a.hidden.data[:5], b.hidden.data[:5], atol=1e-12)


def test_all_pe_flags_off_matches_zeroed_tables():
    on = make_model(use_token_rpe=True, use_turn_rpe=True,
                    rpe_num_buckets=4, rpe_max_distance=16)
    off = make_model(use_turn_ape=False, use_role_ape=False)
    for name, t in off.params.items():
        t.data = on.params[name].data.copy()
    for name in ("turn_emb", "role_emb", "enc.rpe_table"):
        on.params[name].data[:] = 0.0
    a = on.encode(CTX, TURNS, ROLES)
    b = off.encode(CTX, TURNS, ROLES)
    assert np.allclose(a.hidden.data, b.hidden.data, atol=1e-9)


# -- latent path ---------------------------------------------------------------------------

def test_prior_output_splits_into_mu_and_logvar():
    model = make_model(latent_size=5)
    mu, logvar = model.prior_network(model.encode(CTX, TURNS, ROLES).h_cls)
    assert mu.shape == (5,) and logvar.shape == (5,)


def test_zero_initialized_prior_head_gives_standard_normal():
    model = make_model()
    model.params["prior.w2"].data[:] = 0.0
    model.params["prior.b2"].data[:] = 0.0
    mu, logvar = model.prior_network(model.encode(CTX, TURNS, ROLES).h_cls)
    assert np.array_equal(mu.data, np.zeros(4))
    assert np.array_equal(logvar.data, np.zeros(4))


def test_kl_gradient_reaches_encoder_through_h_cls():
    from parley.losses import loss_kl_free_bits
    model = make_model()
    model.zero_grad()
    mu, logvar = model.prior_network(model.encode(CTX, TURNS, ROLES).h_cls)
    loss, _ = loss_kl_free_bits(mu, logvar, 0.0)
    loss.backward()
    assert model.params["enc.0.attn.wq"].grad is not None
    assert np.abs(model.params["enc.0.attn.wq"].grad).max() > 0
    assert np.abs(model.params["tok_emb"].grad).max() > 0


def test_prior_requires_latent_model():
    model = make_model(use_latent=False)
    with pytest.raises(ConfigError):
        model.prior_network(Tensor(np.zeros(16)))


# -- memory scheme -----------------------------------------------------------------------

def test_memory_of_zero_latent_is_zero():
    model = make_model()
    mem = model.memory_project(Tensor(np.zeros(4)))
    assert np.array_equal(mem.key.data, np.zeros(16))
    assert np.array_equal(mem.value.data, np.zeros(16))


def test_memory_projection_is_linear():
    model = make_model()
    rng = np.random.default_rng(2)
    z = rng.normal(size=4)
    for alpha in (2.0, -0.5, 3.7):
        once = model.memory_project(Tensor(z))
        scaled = model.memory_project(Tensor(alpha * z))
        assert np.allclose(scaled.key.data, alpha * once.key.data, atol=1e-12)
        assert np.allclose(scaled.value.data, alpha * once.value.data, atol=1e-12)


def test_zero_memory_slot_still_occupies_a_key():
    # even a zero vector adds an attendable slot, so outputs shift vs. no memory
    model = make_model()
    enc = model.encode(CTX, TURNS, ROLES)
    dec_in = np.array([V.BOS, 20, 21])
    with_slot = model.decode_streams(dec_in, enc, model.memory_project(Tensor(np.zeros(4))))
    without = model.decode_streams(dec_in, enc, None)
    assert not np.allclose(with_slot[0].data, without[0].data, atol=1e-9)


def test_distinct_latents_change_decoder_output():
    model = make_model()
    enc = model.encode(CTX, TURNS, ROLES)
    dec_in = np.array([V.BOS, 20, 21])
    a = model.decode_streams(dec_in, enc, model.memory_project(Tensor(np.ones(4))))
    b = model.decode_streams(dec_in, enc, model.memory_project(Tensor(-np.ones(4))))
    assert not np.allclose(a[0].data, b[0].data, atol=1e-9)


# -- n-stream decoder ----------------------------------------------------------------------

def test_single_stream_when_ngram_is_one():
    model = make_model(ngram=1)
    enc = model.encode(CTX, TURNS, ROLES)
    streams = model.decode_streams(np.array([V.BOS, 20, 21]), enc, None)
    assert len(streams) == 1
    assert streams[0].shape == (3, 50)


def test_stream_one_unaffected_by_extra_streams():
    two = make_model(ngram=2)
    one = make_model(ngram=1)
    for name, t in one.params.items():
        t.data = two.params[name].data.copy()
    enc2 = two.encode(CTX, TURNS, ROLES)
    enc1 = one.encode(CTX, TURNS, ROLES)
    dec_in = np.array([V.BOS, 20, 21, 22])
    s2 = two.decode_streams(dec_in, enc2, None)
    s1 = one.decode_streams(dec_in, enc1, None)
    assert len(s2) == 2 and len(s1) == 1
    assert np.max(np.abs(s2[0].data - s1[0].data)) < 1e-9


def test_causality_future_tokens_do_not_move_past_logits():
    model = make_model()
    enc = model.encode(CTX, TURNS, ROLES)
    base = np.array([V.BOS, 20, 21, 22, 23])
    perturbed = base.copy()
    perturbed[3:] = [40, 41]
    for stream in range(2):
        a = model.decode_streams(base, enc, None)[stream]
        b = model.decode_streams(perturbed, enc, None)[stream]
        assert np.array_equal(a.data[:3], b.data[:3])
        assert not np.array_equal(a.data[3:], b.data[3:])


def test_no_latent_forward_is_seed_independent():
    model = make_model(use_latent=False)
    outs = []
    for seed in (0, 1, 2):
        _ = RngState(seed)  # a stray rng must not influence anything
        enc = model.encode(CTX, TURNS, ROLES)
        outs.append(model.decode_streams(np.array([V.BOS, 20]), enc, None)[0].data)
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[1], outs[2])


def test_decoder_rejects_over_length_response():
    model = make_model(max_positions=8)
    enc = model.encode(CTX[:4], TURNS[:4], ROLES[:4])
    with pytest.raises(DataError, match="max_positions"):
        model.decode_streams(np.arange(9) + 8, enc, None)


# -- output heads ------------------------------------------------------------------------

def test_mlm_head_is_tied_to_token_embedding():
    model = make_model()
    h = Tensor(np.random.default_rng(3).normal(size=16))
    before = model.mlm_logits(h).data.copy()
    model.params["tok_emb"].data[13] += 1.0
    after = model.mlm_logits(h).data
    changed = np.nonzero(np.abs(after - before) > 1e-15)[0]
    assert changed.tolist() == [13]


def test_mlm_zero_first_layer_gives_zero_logits():
    model = make_model()
    model.params["mlm.w1"].data[:] = 0.0
    model.params["mlm.b1"].data[:] = 0.0
    out = model.mlm_logits(Tensor(np.ones(16)))
    assert np.array_equal(out.data, np.zeros(50))


def test_mlm_output_length_is_vocab_size():
    model = make_model()
    assert model.mlm_logits(Tensor(np.zeros(16))).shape == (50,)
    assert model.mlm_logits(Tensor(np.zeros((3, 16)))).shape == (3, 50)


def test_bow_probs_on_simplex_and_latent_sensitive():
    model = make_model()
    h_cls = model.encode(CTX, TURNS, ROLES).h_cls
    f1 = model.bow_probs(Tensor(np.ones(4)), h_cls)
    f2 = model.bow_probs(Tensor(-np.ones(4)), h_cls)
    assert abs(f1.data.sum() - 1.0) < 1e-9 and (f1.data >= 0).all()
    assert not np.allclose(f1.data, f2.data)
    assert model.params["bow.w1"].shape == (4 + 16, 16)


# -- whole-model gradient check (fast regression version) ----------------------------------

def test_model_gradients_match_finite_differences():
    from parley.losses import (loss_bow, loss_kl_free_bits, loss_masked_spans,
                               loss_reconstruction, total_loss)
    from parley.tensor import take_rows
    model = make_model(use_token_rpe=True, use_turn_rpe=True, rpe_num_buckets=4,
                       rpe_max_distance=16, free_bits=0.0)
    dec_in = np.array([V.BOS, 20, 21, 22])
    targets = np.array([20, 21, 22, V.EOS])
    positions = np.array([2, 4])
    originals = np.array([9, 11])

    def f():
        rng = RngState(11)
        enc = model.encode(CTX, TURNS, ROLES)
        mu, logvar = model.prior_network(enc.h_cls)
        z = reparameterize(mu, logvar, rng)
        streams = model.decode_streams(dec_in, enc, model.memory_project(z))
        l_kl, per = loss_kl_free_bits(mu, logvar, 0.0)
        l_bow = loss_bow(model.bow_probs(z, enc.h_cls), targets)
        l_rc = loss_reconstruction(streams, targets)
        l_mask = loss_masked_spans(model.mlm_logits(take_rows(enc.hidden, positions)),
                                   originals)
        return total_loss(l_rc, "pretrain", True, l_mask=l_mask, l_kl=l_kl,
                          l_bow=l_bow, per_dim_kl=per).total

    err = finite_diff_check(f, model.params.values(), h=1e-4,
                            max_coords_per_param=6, rng=RngState(5))
    assert err < 1e-3
