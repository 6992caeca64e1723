import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import arrays_of
from oracles import attention_loop, count_params, encoder_oracle, layer_oracle
from openintent import numerics as nx
from openintent.encoder import (
    REFERENCE_CONFIG,
    EncoderConfig,
    TokenSequence,
    TuningPlan,
    apply_tuning_plan,
    attention_heads,
    embed,
    encode,
    encoder_layer,
    init_encoder,
    layer_view,
    prefixed_attention,
    trainable_param_stats,
)
from openintent.errors import ConfigError, LengthError, PlanError, PrefixError, VocabError
from openintent.numerics import Tensor
from openintent.prefix import REFERENCE_PREFIX, PrefixBank, PrefixConfig, PrefixMode


def _bank(rng, cfg, lp):
    return PrefixBank(rng.normal(size=(cfg.num_layers, 2, lp, cfg.hidden_dim)))


# -- config -------------------------------------------------------------------


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        EncoderConfig(hidden_dim=10, num_heads=3)


def test_config_rejects_non_positive_extent():
    with pytest.raises(ConfigError):
        EncoderConfig(num_layers=0)


# -- embed --------------------------------------------------------------------


def test_embed_zero_tables(tiny_cfg):
    params = init_encoder(tiny_cfg)
    params["embed.tokens"].data[:] = 0
    params["embed.positions"].data[:] = 0
    assert not embed(np.array([3, 1, 4]), params, tiny_cfg).data.any()


def test_embed_matches_table_lookup(tiny_cfg):
    params = init_encoder(tiny_cfg, seed=3)
    ids = np.array([2, 0, 10, 5])
    out = embed(ids, params, tiny_cfg).data
    tok, pos = params["embed.tokens"].data, params["embed.positions"].data
    for i, t in enumerate(ids):
        assert np.array_equal(out[i], tok[t] + pos[i])


def test_same_token_differs_by_position_delta(tiny_cfg):
    params = init_encoder(tiny_cfg, seed=1)
    out = embed(np.array([4, 4]), params, tiny_cfg).data
    pos = params["embed.positions"].data
    assert np.allclose(out[1] - out[0], pos[1] - pos[0], atol=1e-15)


def test_embed_vocab_error(tiny_cfg):
    with pytest.raises(VocabError):
        embed(np.array([tiny_cfg.vocab_size]), init_encoder(tiny_cfg), tiny_cfg)


def test_embed_length_error(tiny_cfg):
    with pytest.raises(LengthError):
        embed(np.zeros(tiny_cfg.max_seq_len + 1, dtype=int), init_encoder(tiny_cfg), tiny_cfg)


# -- attention ----------------------------------------------------------------


def test_attention_hand_computed():
    one = lambda v: Tensor(np.array(v, dtype=float).reshape(1, 1, 1))  # noqa: E731
    out = attention_heads(
        one(1.0), one(0.0), one(2.0), Tensor([[0.0]]), Tensor([[4.0]]), np.zeros((1, 1)), num_heads=1, scale=1.0
    )
    assert out.data.reshape(-1).tolist() == [3.0]


def test_attention_two_heads_matches_scalar_loops(rng):
    L, d, lp = 4, 6, 3
    q, k, v = (rng.normal(size=(L, d)) for _ in range(3))
    pk, pv = rng.normal(size=(lp, d)), rng.normal(size=(lp, d))
    mask = np.array([1, 1, 1, 0.0])
    bias = ((1 - mask) * -1e9)[None]
    out = attention_heads(*(Tensor(t[None]) for t in (q, k, v)), Tensor(pk), Tensor(pv), bias, num_heads=2)
    assert np.allclose(out.data[0], attention_loop(q, k, v, pk, pv, mask, 2), rtol=1e-12, atol=1e-13)


def test_empty_prefix_equals_plain_attention(tiny_cfg, rng):
    params = init_encoder(tiny_cfg, seed=2)
    layer = layer_view(params, 1)
    x = Tensor(rng.normal(size=(5, tiny_cfg.hidden_dim)))
    mask = np.ones(5)
    empty = np.zeros((0, tiny_cfg.hidden_dim))
    a = prefixed_attention(layer, x, Tensor(empty), Tensor(empty), mask, tiny_cfg.num_heads).data
    b = prefixed_attention(layer, x, None, None, mask, tiny_cfg.num_heads).data
    assert np.abs(a - b).max() <= 1e-12


def test_prefix_length_mismatch(tiny_cfg, rng):
    layer = layer_view(init_encoder(tiny_cfg), 1)
    x = Tensor(rng.normal(size=(3, tiny_cfg.hidden_dim)))
    with pytest.raises(PrefixError):
        prefixed_attention(
            layer, x, Tensor(np.zeros((2, tiny_cfg.hidden_dim))), Tensor(np.zeros((3, tiny_cfg.hidden_dim))), np.ones(3), 2
        )


def test_prefix_positions_are_never_masked(tiny_cfg, rng):
    """With every real key masked out the output is still driven by the prefix."""
    params = init_encoder(tiny_cfg, seed=4)
    layer = {k: p.data for k, p in layer_view(params, 1).items()}
    x = rng.normal(size=(3, tiny_cfg.hidden_dim))
    pk, pv = rng.normal(size=(2, tiny_cfg.hidden_dim)), rng.normal(size=(2, tiny_cfg.hidden_dim))
    mask = np.zeros(3)
    q = x @ layer["attn.Wq"] + layer["attn.bq"]
    k = x @ layer["attn.Wk"] + layer["attn.bk"]
    v = x @ layer["attn.Wv"] + layer["attn.bv"]
    ctx = attention_heads(Tensor(q[None]), Tensor(k[None]), Tensor(v[None]), Tensor(pk), Tensor(pv), ((1 - mask) * -1e9)[None], 2)
    only_prefix = attention_loop(q, np.zeros((0, q.shape[1])), np.zeros((0, q.shape[1])), pk, pv, [], 2)
    assert np.allclose(ctx.data[0], only_prefix, rtol=1e-12, atol=1e-13)


# -- encode -------------------------------------------------------------------


def test_single_layer_without_prefix_is_one_vanilla_layer(rng):
    cfg = EncoderConfig(num_layers=1, hidden_dim=8, num_heads=2, ff_dim=12, vocab_size=11, max_seq_len=7)
    params = init_encoder(cfg, seed=5)
    ids = rng.integers(0, 11, 5)
    out = encode(ids, params, cfg, PrefixBank.empty(cfg)).data
    x = embed(ids, params, cfg)
    ref = encoder_layer(layer_view(params, 1), x, None, None, np.ones(5), cfg.num_heads).data
    assert np.abs(out - ref).max() <= 1e-12


def test_encode_matches_layer_composition_oracle(tiny_cfg, rng):
    params = init_encoder(tiny_cfg, seed=6)
    bank = _bank(rng, tiny_cfg, 2)
    ids = rng.integers(0, tiny_cfg.vocab_size, 6)
    mask = np.array([1, 1, 1, 1, 0, 0.0])
    out = encode(ids, params, tiny_cfg, bank, mask=mask).data
    ref = encoder_oracle(arrays_of(params), 2, 2, ids, mask, bank.tensor.data)
    assert np.allclose(out, ref, rtol=1e-10, atol=1e-11)


def test_layer_oracle_agrees_per_layer(tiny_cfg, rng):
    params = init_encoder(tiny_cfg, seed=7)
    x = rng.normal(size=(4, tiny_cfg.hidden_dim))
    pk, pv = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    layer = layer_view(params, 2)
    got = encoder_layer(layer, Tensor(x), Tensor(pk), Tensor(pv), np.ones(4), 2).data
    ref = layer_oracle({k: p.data for k, p in layer.items()}, x, pk, pv, np.ones(4), 2)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-11)


def test_output_depends_on_layer_one_prefix_values(tiny_cfg, rng):
    params = init_encoder(tiny_cfg, seed=8)
    bank = _bank(rng, tiny_cfg, 2)
    ids = rng.integers(0, tiny_cfg.vocab_size, 4)
    before = encode(ids, params, tiny_cfg, bank).data
    data = bank.tensor.data.copy()
    data[0, 1] += 0.5
    after = encode(ids, params, tiny_cfg, PrefixBank(data)).data
    assert np.abs(before - after).max() > 1e-6


def test_bank_layer_count_mismatch(tiny_cfg):
    bank = PrefixBank(np.zeros((1, 2, 2, tiny_cfg.hidden_dim)))
    with pytest.raises(PrefixError):
        encode(np.array([1, 2]), init_encoder(tiny_cfg), tiny_cfg, bank)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_empty_prefix_equals_prefix_free_encoder(seed):
    cfg = EncoderConfig(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=12, vocab_size=11, max_seq_len=7)
    r = np.random.default_rng(seed)
    params = init_encoder(cfg, seed=seed % 97)
    n = int(r.integers(1, 8))
    ids = r.integers(0, 11, n)
    mask = np.ones(n)
    mask[int(r.integers(1, n + 1)) :] = 0
    a = encode(ids, params, cfg, PrefixBank.empty(cfg), mask=mask).data
    b = encode(ids, params, cfg, None, mask=mask).data
    assert np.abs(a - b).max() <= 1e-12


def test_token_sequence_input(tiny_cfg):
    params = init_encoder(tiny_cfg)
    seq = TokenSequence(np.array([2, 5, 0]), np.array([1.0, 1.0, 0.0]))
    a = encode(seq, params, tiny_cfg).data
    b = encode(seq.ids, params, tiny_cfg, mask=seq.mask).data
    assert np.array_equal(a, b)


# -- tuning plans -------------------------------------------------------------


def _trainable(cfg, plan):
    params = init_encoder(cfg)
    apply_tuning_plan(params, plan, cfg)
    return {k for k, p in params.items() if p.trainable}


def test_just_last_layer_on_twelve_layers():
    cfg = EncoderConfig(num_layers=12, hidden_dim=4, num_heads=1, ff_dim=4, vocab_size=5, max_seq_len=3)
    names = _trainable(cfg, TuningPlan.just(12))
    assert names and all(n.startswith("layer.12.") for n in names)
    assert len(names) == 16


def test_keys_values_component_plan(tiny_cfg):
    assert _trainable(tiny_cfg, TuningPlan.components(2, ["keys_values"])) == {"layer.2.attn.Wk", "layer.2.attn.Wv"}


def test_empty_plan_trains_no_encoder_parameter(tiny_cfg):
    assert _trainable(tiny_cfg, TuningPlan()) == set()
    assert _trainable(tiny_cfg, TuningPlan.frozen()) == set()


def test_plan_addressing_missing_layer(tiny_cfg):
    with pytest.raises(PlanError):
        _trainable(tiny_cfg, TuningPlan.just(3))


def test_unknown_component(tiny_cfg):
    with pytest.raises(PlanError):
        _trainable(tiny_cfg, TuningPlan.components(1, ["gates"]))


@pytest.mark.parametrize("x", [1, 2, 3])
def test_rest_is_union_of_just(x):
    cfg = EncoderConfig(num_layers=3, hidden_dim=4, num_heads=1, ff_dim=4, vocab_size=5, max_seq_len=3)
    union = set()
    for i in range(x, 4):
        union |= _trainable(cfg, TuningPlan.just(i))
    assert _trainable(cfg, TuningPlan.rest(x, 3)) == union


def test_full_plan_trains_everything(tiny_cfg):
    assert _trainable(tiny_cfg, TuningPlan.full(2)) == set(init_encoder(tiny_cfg))


# -- parameter counting -------------------------------------------------------


def test_reference_prefix_only_count():
    cfg = PrefixConfig(length=10, mode=PrefixMode.EMBED)
    count, ratio = trainable_param_stats(REFERENCE_CONFIG, TuningPlan.prefix_only(), cfg)
    assert count == 2 * 10 * 768 * 12 == 184_320
    enc = count_params(12, 768, 3072, 30522, 512)["encoder"]
    assert ratio == 184_320 / (enc + 184_320)


def test_reference_mlp_prefix_ratio_uses_full_total():
    count, ratio = trainable_param_stats(REFERENCE_CONFIG, TuningPlan.prefix_only(), REFERENCE_PREFIX)
    assert count == 10 * 768 + 768 * 512 + 512 + 512 * 2 * 12 * 768 + 2 * 12 * 768
    assert 0 < ratio < 1


def test_frozen_count_is_zero():
    assert trainable_param_stats(REFERENCE_CONFIG, TuningPlan.frozen(), REFERENCE_PREFIX, num_classes=5) == (0, 0.0)


def test_component_counts_match_oracle(tiny_cfg):
    ref = count_params(2, 8, 12, 11, 7)
    for comp in ("attention", "feed_forward", "layer_norm", "keys_values"):
        count, _ = trainable_param_stats(tiny_cfg, TuningPlan.components(2, [comp], prefix=False))
        assert count == ref[comp]
    entire, _ = trainable_param_stats(tiny_cfg, TuningPlan.components(2, ["entire"], prefix=False))
    assert entire == ref["layer"]
    total, _ = trainable_param_stats(tiny_cfg, TuningPlan.full(2))
    assert total == ref["encoder"]


def test_counts_agree_with_allocated_parameters(tiny_cfg):
    for plan in (TuningPlan.just(1), TuningPlan.rest(1, 2), TuningPlan.components(2, ["layer_norm"])):
        allocated = sum(init_encoder(tiny_cfg)[n].data.size for n in _trainable(tiny_cfg, plan))
        assert trainable_param_stats(tiny_cfg, plan)[0] == allocated


def test_no_grad_forward_is_identical(tiny_cfg, rng):
    params = init_encoder(tiny_cfg, seed=9)
    ids = rng.integers(0, tiny_cfg.vocab_size, 5)
    a = encode(ids, params, tiny_cfg).data
    with nx.no_grad():
        b = encode(ids, params, tiny_cfg).data
    assert np.array_equal(a, b)
