import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foresight import ndcore as nd
from foresight.captioner import (BOS, EOS, PAD, UNK, Seq2SeqConfig, Seq2SeqModel, Vocabulary, batch_caption_loss,
                                 build_captioner, build_input_text, caption_loss, caption_target, decode_beam,
                                 decode_greedy, encode, greedy_log_prob, sequence_log_prob, step_probabilities,
                                 train_captioner)
from foresight.layers import lstm_step


def _model(V=9, layers=2, hidden=6, embed=5, seed=0, max_len=6):
    return Seq2SeqModel(Seq2SeqConfig(V, layers, hidden, embed, max_len), seed=seed)


def _scaled(model, factor):
    # larger weights give peaked, input-dependent distributions
    for p in model.parameters():
        p.data *= factor
    return model


def test_build_input_text_examples():
    assert build_input_text("cut off ends", ["carrot"]) == ["cut", "off", "ends", "carrot"]
    assert build_input_text("take out", ["egg", "fridge"]) == ["take", "out", "egg", "fridge"]
    assert build_input_text("Take Out") == ["take", "out"]
    with pytest.raises(ValueError):
        build_input_text("   ", ["egg"])


def test_vocabulary_reserved_order_and_unk():
    v = Vocabulary.build([["b", "a", "b"], ["c"]], max_size=6)
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert v.itos[4:] == ["b", "a"]                    # most frequent first, then alphabetical, truncated
    assert v.encode(["a", "c", "zzz"]) == [5, UNK, UNK]
    assert v.decode([5, 4, EOS, 5]) == ["a", "b"]
    assert all(v.stoi[t] == i for i, t in enumerate(v.itos))
    assert caption_target(["a"], v) == [5, EOS]


def test_encode_single_token_is_one_step_per_layer():
    m = _model()
    z = encode(m, [5]).z
    x = m.enc_embed.data[[5]]
    for layer, (h, c) in zip(m.encoder, z):
        h_ref, c_ref = lstm_step(layer, x, *layer.zero_state(1))
        np.testing.assert_array_equal(h.data, h_ref.data)
        np.testing.assert_array_equal(c.data, c_ref.data)
        x = h_ref.data


def test_encode_is_order_sensitive():
    m = _scaled(_model(seed=3), 3.0)
    z1 = encode(m, [4, 5, 6]).z[-1][0].data
    z2 = encode(m, [6, 5, 4]).z[-1][0].data
    assert not np.allclose(z1, z2)


def test_encode_zero_weights_gives_zero_state():
    m = _model()
    for layer in m.encoder:
        for p in layer.parameters():
            p.data[...] = 0.0
    for h, c in encode(m, [4, 7, 5]).z:
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)


def test_encode_rejects_bad_indices():
    with pytest.raises(IndexError):
        encode(_model(V=9), [9])
    with pytest.raises(ValueError):
        encode(_model(), [])


def test_loss_zero_when_gold_token_certain():
    m = _model()
    m.out.weight.data[...] = 0.0
    m.out.bias.data[...] = 0.0
    m.out.bias.data[EOS] = 1000.0
    assert caption_loss(m, [4], [EOS]).item() == pytest.approx(0.0, abs=1e-12)


def test_uniform_decoder_loss_is_n_log_v():
    V = 11
    m = _model(V=V)
    m.out.weight.data[...] = 0.0
    m.out.bias.data[...] = 0.0
    b = [4, 7, 9, 5, EOS]
    assert caption_loss(m, [6, 8], b).item() == pytest.approx(len(b) * math.log(V), abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_equals_stepwise_product(seed):
    rng = np.random.default_rng(seed)
    m = _scaled(_model(seed=seed % 1000), 2.0)
    a = list(rng.integers(4, 9, rng.integers(1, 5)))
    b = list(rng.integers(3, 9, rng.integers(0, 5))) + [EOS]
    probs = step_probabilities(m, a, b)
    product = 1.0
    for dist, tok in zip(probs, b):
        assert np.all(dist > 0) and abs(dist.sum() - 1.0) < 1e-9
        product *= dist[tok]
    assert abs(math.exp(-caption_loss(m, a, b).item()) - product) < 1e-10


def test_loss_requires_eos_and_nonempty():
    m = _model()
    with pytest.raises(ValueError):
        caption_loss(m, [4], [])
    with pytest.raises(ValueError):
        caption_loss(m, [4], [5, 6])


def test_caption_loss_gradient_two_step_toy():
    m = _model(V=6, layers=2, hidden=3, embed=3, seed=4)
    assert nd.grad_check(lambda: caption_loss(m, [4, 5], [5, EOS]), m.parameters()) < 1e-4


def test_batched_loss_masks_past_eos():
    m = _model(seed=6)
    pairs = [([4, 5], [6, EOS]), ([7], [4, 5, 8, EOS])]
    single = np.mean([caption_loss(m, a, b).item() for a, b in pairs])
    batched = batch_caption_loss(m, [a for a, _ in pairs], [b for _, b in pairs]).item()
    assert batched == pytest.approx(single, abs=1e-12)


def test_greedy_max_len_and_determinism():
    m = _scaled(_model(seed=1), 2.0)
    assert len(decode_greedy(m, [4, 5], max_len=1)) == 1
    assert decode_greedy(m, [4, 5]) == decode_greedy(m, [4, 5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_width_one_beam_equals_greedy(seed):
    rng = np.random.default_rng(seed)
    m = _scaled(_model(seed=seed % 500, max_len=5), float(rng.uniform(0.5, 4.0)))
    a = list(rng.integers(4, 9, rng.integers(1, 4)))
    greedy, g_score = decode_greedy(m, a), greedy_log_prob(m, a)
    (top, score), *_ = decode_beam(m, a, beam_width=1)
    assert top == greedy and score == g_score


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_wider_beam_never_scores_below_greedy(seed, width):
    rng = np.random.default_rng(seed)
    m = _scaled(_model(seed=seed % 500, max_len=5), float(rng.uniform(0.5, 4.0)))
    a = list(rng.integers(4, 9, rng.integers(1, 4)))
    assert decode_beam(m, a, beam_width=width)[0][1] >= greedy_log_prob(m, a) - 1e-12


def test_full_width_beam_matches_exhaustive_search():
    V, max_len = 7, 3                 # three content tokens after the four reserved ones
    for seed in range(5):
        m = _scaled(_model(V=V, seed=seed, max_len=max_len), 3.0)
        best, best_score = None, -np.inf
        for n in range(1, max_len + 1):
            for seq in itertools.product(range(V), repeat=n):
                if EOS in seq[:-1] or (n < max_len and seq[-1] != EOS):
                    continue
                s = sequence_log_prob(m, [4, 5], list(seq))
                if s > best_score:
                    best, best_score = list(seq), s
        top, score = decode_beam(m, [4, 5], beam_width=V ** max_len)[0]
        assert top == best
        assert score == pytest.approx(best_score, abs=1e-12)


def test_beam_rejects_zero_width():
    with pytest.raises(ValueError):
        decode_beam(_model(), [4], beam_width=0)


def _corpus():
    srcs = [["cut", "carrot"], ["wash", "plate"], ["peel", "egg"], ["take", "out", "egg", "fridge"], ["stir", "pot"]]
    caps = [["the", "person", "cut", "the", "carrot"], ["the", "person", "washed", "a", "plate"],
            ["she", "peeled", "an", "egg"], ["he", "took", "out", "the", "egg"], ["the", "pot", "was", "stirred"]]
    vocab = Vocabulary.build(srcs + caps)
    return vocab, [(vocab.encode(a), caption_target(b, vocab)) for a, b in zip(srcs, caps)]


def test_memorises_five_pairs():
    vocab, pairs = _corpus()
    m = build_captioner(vocab, layers=2, hidden=32, embed=16, seed=0)
    train_captioner(m, pairs, 150, batch_size=5, lr=1e-2, seed=0)
    for a, b in pairs:
        assert decode_greedy(m, a) == b


def test_single_pair_loss_non_increasing():
    vocab, pairs = _corpus()
    m = build_captioner(vocab, layers=2, hidden=16, embed=8, seed=1)
    losses = train_captioner(m, pairs[:1], 40, lr=1e-3, seed=0).losses
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_training_reproducible_and_rejects_empty():
    vocab, pairs = _corpus()
    runs = [train_captioner(build_captioner(vocab, 1, 8, 4, seed=2), pairs, 3, batch_size=2, seed=5).losses
            for _ in range(2)]
    assert runs[0] == runs[1]
    with pytest.raises(ValueError):
        train_captioner(build_captioner(vocab, 1, 8, 4), [], 1)
