import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcdt import autodiff as ad
from gcdt.autodiff import Tensor
from gcdt.conll import Sentence, Vocabs, Vocabulary, make_batches
from gcdt.decoding import greedy_states
from gcdt.model import (GLOBAL_POSITIONS, GCDT, ConfigError, ModelConfig, build_params,
                        component_counts, decode_step, masked_cross_entropy, param_count,
                        pool_states)
from oracles import closed_form_params, sigmoid
from toys import scramble, tiny_config, tiny_model


def zero_all(model):
    for _, t in model.params.all_tensors():
        t.data[...] = 0.0
    return model


def test_default_dimensions():
    cfg = ModelConfig()
    assert cfg.token_dim == 128 + 300 + 256 == 684
    assert ModelConfig(use_global=False, global_position="none").token_dim == 428
    assert cfg.decoder_input_dim == 512 + 32


@pytest.mark.parametrize("kw, match", [
    (dict(use_char=False, use_pretrained=False), "at least one"),
    (dict(use_global=False), "use_global"),
    (dict(global_position="none"), "use_global"),
    (dict(global_position="middle"), "global_position"),
    (dict(cell_kind="lstm"), "cell kind"),
    (dict(dropout_hidden=1.0), "dropout_hidden"),
    (dict(use_external=True), "external_dim"),
])
def test_invalid_configs(kw, match):
    with pytest.raises(ConfigError, match=match):
        ModelConfig(**kw).validate()


def test_encoder_width_and_zero_params(rng):
    model, corpus = tiny_model(rng)
    batch = make_batches(corpus, model.vocabs, 64)[0]
    h, g = model.encode_batch(batch)
    assert h.shape[-1] == 2 * model.config.encoder_hidden
    zero_all(model)
    h, g = model.encode_batch(batch)
    assert (h.data == 0).all() and (g.data == 0).all()


def test_pooling_examples():
    states = Tensor(np.array([[[1.0, 3.0], [3.0, 1.0]]]))
    assert pool_states(states, np.array([2]), "mean").data.tolist() == [[2.0, 2.0]]
    assert pool_states(states, np.array([2]), "max").data.tolist() == [[3.0, 3.0]]
    one = Tensor(np.array([[[0.25, -4.0], [9.0, 9.0]]]))
    for mode in ("mean", "max"):
        assert pool_states(one, np.array([1]), mode).data.tolist() == [[0.25, -4.0]]


@given(st.integers(0, 2**31 - 1), st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_mean_pool_within_state_range(seed, lengths):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((len(lengths), max(lengths), 3))
    g = pool_states(Tensor(x), np.array(lengths), "mean").data
    for b, n in enumerate(lengths):
        assert (g[b] >= x[b, :n].min(axis=0) - 1e-12).all()
        assert (g[b] <= x[b, :n].max(axis=0) + 1e-12).all()


def test_global_context_of_empty_sentence_fails(rng):
    model, _ = tiny_model(rng)
    with pytest.raises(ValueError, match="empty"):
        model.global_context(None, Tensor(np.zeros((1, 1, 5))), np.array([0]))


def test_eval_forward_is_deterministic(rng):
    model, corpus = tiny_model(rng, dropout_embed=0.5, dropout_hidden=0.3)
    batch = make_batches(corpus, model.vocabs, 64)[0]
    a = model.teacher_forced_logits(batch).data
    b = model.teacher_forced_logits(batch).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("position", GLOBAL_POSITIONS)
def test_global_vector_enters_exactly_once(position, rng):
    cfg = tiny_config(global_position=position)
    places = [cfg.token_dim - cfg.global_input_dim,
              cfg.decoder_input_dim - 2 * cfg.encoder_hidden - cfg.label_embed_dim,
              cfg.output_input_dim - cfg.decoder_hidden]
    expected = [0, 0, 0]
    if position != "none":
        expected[GLOBAL_POSITIONS.index(position)] = cfg.global_dim
    assert places == expected


@pytest.mark.parametrize("position", ["decoder_input", "softmax_input"])
def test_global_vector_changes_output_at_its_position(position, rng):
    model, corpus = tiny_model(rng, global_position=position)
    scramble(model, rng)
    h = Tensor(rng.standard_normal((2, 8)))
    state = np.zeros((2, 4))
    g1, g2 = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
    la, _ = decode_step(model, h.data, [model.start_id] * 2, state, g1)
    lb, _ = decode_step(model, h.data, [model.start_id] * 2, state, g2)
    assert not np.array_equal(la, lb)


def test_zero_params_logits_equal_bias(rng):
    model, _ = tiny_model(rng)
    zero_all(model)
    model.params.b_out.data[...] = np.arange(model.n_labels, dtype=float)
    logits, state = decode_step(model, np.zeros((1, 8)), [model.start_id], np.zeros((1, 4)))
    assert logits.tolist() == [list(range(model.n_labels))]
    assert abs(ad.softmax(Tensor(logits)).data.sum() - 1) <= 1e-9


def test_unknown_previous_label_rejected(rng):
    model, _ = tiny_model(rng)
    with pytest.raises(ValueError, match="outside"):
        decode_step(model, np.zeros((1, 8)), [model.start_id + 1], np.zeros((1, 4)))


def test_two_step_scalar_decoder_hand_trace():
    vocabs = Vocabs(Vocabulary("word", ["a"]), Vocabulary("char", ["a"]),
                    Vocabulary("label", ["O", "S-X"]))
    cfg = ModelConfig(use_char=False, use_global=False, global_position="none", cell_kind="gru",
                      encoder_hidden=1, decoder_hidden=1, label_embed_dim=1, word_dim=1)
    model = GCDT.create(cfg, vocabs, np.random.default_rng(0))
    for _, t in model.params.decoder.tensors():
        t.data[...] = 0.5
    model.params.label_table.data[:, 0] = [0.1, 0.2, 0.3]     # O, S-X, start
    model.params.W_out.data[...] = [[1.0, -1.0]]
    model.params.b_out.data[...] = [0.1, 0.0]

    def hand(h_t, y_prev, s):
        x = sum(h_t) + y_prev
        r = z = sigmoid(0.5 * x + 0.5 * s + 0.5)
        cand = math.tanh(0.5 * x + r * 0.5 * s + 0.5)
        s = (1 - z) * s + z * cand
        return [s + 0.1, -s], s

    hs = [[0.2, -0.4], [1.0, 0.5]]
    want1, s1 = hand(hs[0], 0.3, 0.0)
    got1, st1 = decode_step(model, np.array([hs[0]]), [2], np.zeros((1, 1)))
    np.testing.assert_allclose(got1[0], want1, rtol=0, atol=1e-15)
    want2, _ = hand(hs[1], 0.2, s1)        # previous label S-X
    got2, _ = decode_step(model, np.array([hs[1]]), [1], st1)
    np.testing.assert_allclose(got2[0], want2, rtol=0, atol=1e-15)


def test_loss_limits(rng):
    labels = np.array([[0, 2, 1]])
    mask = np.ones((1, 3))
    big = np.zeros((1, 3, 4))
    big[0, np.arange(3), labels[0]] = 60.0
    assert masked_cross_entropy(Tensor(big), labels, mask).data < 1e-20
    flat = masked_cross_entropy(Tensor(np.zeros((1, 3, 4))), labels, mask).data
    assert flat == pytest.approx(math.log(4), rel=1e-15)
    with pytest.raises(ValueError, match="real tokens"):
        masked_cross_entropy(Tensor(big), labels, np.zeros((1, 3)))


def test_zero_model_loss_is_log_k(rng):
    model, corpus = tiny_model(rng)
    zero_all(model)
    batch = make_batches(corpus, model.vocabs, 64)[0]
    assert model.loss(batch, training=False).data == pytest.approx(math.log(model.n_labels))


def test_pad_logits_do_not_reach_gradients(rng):
    logits_np = rng.standard_normal((2, 4, 3))
    labels = np.array([[0, 1, 2, 0], [1, 1, 0, 0]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    a = Tensor(logits_np.copy(), requires_grad=True)
    ad.backward(masked_cross_entropy(a, labels, mask))
    zeroed = logits_np.copy()
    zeroed[1, 2:] = 0.0
    b = Tensor(zeroed, requires_grad=True)
    ad.backward(masked_cross_entropy(b, labels, mask))
    assert np.array_equal(a.grad, b.grad)
    assert (a.grad[1, 2:] == 0).all()


@pytest.mark.parametrize("position", GLOBAL_POSITIONS)
@pytest.mark.parametrize("cell", ["dt", "gru"])
def test_end_to_end_gradient(position, cell, rng):
    corpus = [Sentence(["ab", "c"], ["S-A", "O"]), Sentence(["dde", "ab", "e"], ["B-B", "E-B", "O"])]
    model, _ = tiny_model(rng, corpus, global_position=position, cell_kind=cell,
                          dropout_embed=0.3, dropout_hidden=0.2)
    scramble(model, rng, 0.5)
    batch = make_batches(corpus, model.vocabs, 64)[0]
    tensors = [t for _, t in model.params.registry()]
    err = ad.gradient_check(lambda: model.loss(batch, True, np.random.default_rng(9)), tensors,
                            max_coords=3, rng=rng)
    assert err <= 1e-4


def test_teacher_forcing_matches_free_running(rng):
    model, corpus = tiny_model(rng)
    scramble(model, rng)
    for sent in corpus:
        batch = make_batches([sent], model.vocabs, 64, with_labels=False)[0]
        h, g = model.encode_batch(batch)
        best = greedy_states(model, h.data[0], g.data[0])
        predicted = Sentence(sent.tokens, [model.vocabs.label.decode(j) for j in best.prefix])
        forced = make_batches([predicted], model.vocabs, 64)[0]
        logits = model.teacher_forced_logits(forced).data[0]
        assert logits.argmax(axis=-1).tolist() == list(best.prefix)


def test_param_count_examples(rng):
    model, _ = tiny_model(rng)
    counts = component_counts(model.params)
    assert sum(counts.values()) == model.param_count()
    assert "word_table" not in dict(model.params.registry())
    smaller = GCDT.create(tiny_config(use_global=False, global_position="none"),
                          model.vocabs, rng)
    assert smaller.param_count() < model.param_count()


def test_registry_holds_each_tensor_once(rng):
    model, _ = tiny_model(rng)
    ids = [id(t) for _, t in model.params.all_tensors()]
    assert len(ids) == len(set(ids))


config_strategy = st.fixed_dictionaries({
    "use_char": st.booleans(), "use_pretrained": st.booleans(),
    "use_external": st.booleans(), "cell_kind": st.sampled_from(["dt", "gru"]),
    "transition_count": st.integers(0, 4), "encoder_hidden": st.integers(1, 12),
    "global_hidden": st.integers(1, 12), "decoder_hidden": st.integers(1, 12),
    "label_embed_dim": st.integers(1, 6), "global_position": st.sampled_from(GLOBAL_POSITIONS),
    "word_dim": st.integers(1, 10), "char_dim": st.integers(1, 6),
    "char_filters": st.integers(1, 10), "char_width": st.integers(1, 4),
    "external_dim": st.integers(1, 9),
    "global_cell_kind": st.sampled_from([None, "dt", "gru"]),
    "global_transition_count": st.sampled_from([None, 0, 1, 3]),
})


@given(config_strategy, st.integers(1, 40), st.integers(1, 12))
def test_param_count_matches_closed_form(cfg, n_chars, n_labels):
    if not (cfg["use_char"] or cfg["use_pretrained"]):
        cfg["use_char"] = True
    cfg["use_global"] = cfg["global_position"] != "none"
    config = ModelConfig(**cfg).validate()
    vocabs = Vocabs(Vocabulary("word"), Vocabulary("char", [f"c{i}" for i in range(n_chars)]),
                    Vocabulary("label", [f"L{i}" for i in range(n_labels)]))
    params = build_params(config, vocabs, np.random.default_rng(0))
    assert param_count(params) == closed_form_params(cfg, n_chars + 2, n_labels)
