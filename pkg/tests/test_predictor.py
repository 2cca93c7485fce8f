import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foresight import ndcore as nd
from foresight.datagen import ActivityInstance, VideoRecord, generate_dataset, make_cycle_grammar, split_dataset
from foresight.ndcore import ShapeError, Tensor
from foresight.predictor import (UNKNOWN, ForwardResult, PredictorConfig, batch_loss, build_predictor,
                                 cross_entropy_loss, joint_loss, make_windows, predict_sequence, stack_windows,
                                 time_loss, top_k, train_predictor, unknown_gate, windows_from_videos)


def _video(m, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    acts, t = [], 0.0
    for k in range(m):
        acts.append(ActivityInstance(label=k % 3, label_name=f"a{k % 3}", start_s=t, end_s=t + 1.0,
                                     activity_feature=rng.standard_normal(dim), scene_feature=rng.standard_normal(dim),
                                     scene_objects=["cup"], obj="cup", caption_tokens=["x"]))
        t += 1.0 + k
    return VideoRecord(f"v{seed}", acts)


def _small(c=3, **kw):
    return PredictorConfig(num_classes=c, hidden=kw.pop("hidden", 8), **kw)


def test_parameter_count_closed_form():
    c, H, h = 10, 3, 256
    model = build_predictor(PredictorConfig(num_classes=c), (64, 32, 64))
    fc = lambda a, b: a * b + b
    lstm = lambda a, b: 4 * (a * b + b * b + b)
    expected = (fc(64, h) + fc(h, h)                    # scene branch
                + lstm(32, h) + lstm(h, h)              # sequence branch
                + fc(64, h) + fc(h, h)                  # last-activity branch
                + fc(3 * h, h)                          # merge
                + H * fc(h, c) + fc(h, 1))              # heads and time node
    assert model.num_parameters() == expected


def test_sequence_only_concat_width_and_single_head_width():
    model = build_predictor(PredictorConfig(num_classes=5, use_scene=False, use_time=False), (4, 4, 4))
    assert model.concat_width == 256
    assert build_predictor(PredictorConfig(num_classes=5, horizon=1), (4, 4, 4)).output_width == 6


def test_config_validation():
    for bad in (dict(window=0), dict(horizon=0), dict(num_classes=1), dict(use_sequence=False)):
        kw = {"num_classes": 3, **bad}
        with pytest.raises(ValueError):
            PredictorConfig(**kw).validate()
    with pytest.raises(ValueError):
        build_predictor(_small(), (0, 4, 4))


def test_loss_zero_for_perfect_predictions():
    lp = [Tensor(np.log(np.array([[1.0, 1e-300, 1e-300]])))]
    out = ForwardResult(lp, Tensor(np.array([[2.5]])))
    assert joint_loss(out, np.array([[0]]), np.array([2.5])).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_uniform_four_classes_is_ln4():
    out = ForwardResult([Tensor(np.log(np.full((3, 4), 0.25)))], Tensor(np.array([[1.0], [2.0], [3.0]])))
    loss = joint_loss(out, np.array([[0], [1], [3]]), np.array([1.0, 2.0, 3.0]))
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_loss_rejects_out_of_range_and_empty():
    out = ForwardResult([Tensor(np.log(np.full((1, 4), 0.25)))], None)
    with pytest.raises(ValueError):
        joint_loss(out, np.array([[4]]), None)
    with pytest.raises(ValueError):
        joint_loss(ForwardResult([Tensor(np.zeros((0, 4)))], None), np.zeros((0, 1), dtype=int), None)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_cross_entropy_matches_naive_double_loop(n, c, H, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((H, n, c)) * 3
    probs = np.exp(logits) / np.exp(logits).sum(axis=2, keepdims=True)
    y = rng.integers(0, c, (n, H))
    per_head = []
    for k in range(H):
        s = 0.0
        for i in range(n):
            for j in range(c):
                s += (y[i, k] == j) * math.log(probs[k, i, j])
        per_head.append(-s / n)
    got = cross_entropy_loss([Tensor(np.log(probs[k])) for k in range(H)], y).item()
    assert abs(got - np.mean(per_head)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=20))
def test_time_loss_matches_naive_loop(pairs):
    q = np.array([a for a, _ in pairs])
    qhat = np.array([b for _, b in pairs])
    naive = sum((a - b) ** 2 for a, b in pairs) / len(pairs)
    assert abs(time_loss(Tensor(qhat[:, None]), q).item() - naive) <= 1e-12 * max(1.0, naive)


def test_joint_loss_gradient_through_network():
    cfg = _small(c=3, hidden=5, fc_layers=1, lstm_layers=2, dropout=0.0)
    model = build_predictor(cfg, (4, 4, 4), seed=1)
    for p in model.parameters():       # nonzero biases keep relus away from exact kinks
        if p.name.endswith("bias") or p.name.endswith(".b"):
            p.data[...] += np.random.default_rng(2).uniform(0.05, 0.2, p.shape)
    batch = stack_windows(make_windows(_video(8), cfg)[:3])
    assert nd.grad_check(lambda: batch_loss(model, batch), model.parameters()) < 1e-4


def test_window_counts_small_cases():
    cfg = _small()
    assert len(make_windows(_video(7), cfg)) == 2
    assert make_windows(_video(5), cfg) == []


def test_window_count_formula_exhaustive():
    videos = {m: _video(m, dim=1) for m in range(0, 51)}
    for W in range(1, 6):
        for H in range(1, 6):
            cfg = _small(window=W, horizon=H)
            for m, v in videos.items():
                assert len(make_windows(v, cfg)) == max(0, m - W - H + 1)


def test_window_observes_k_minus_two_to_k_and_targets_next_three():
    v = _video(9)
    acts = v.activities
    cfg = _small()
    for w in make_windows(v, cfg):
        k = w.index + 2                        # k-th activity is the last observed
        np.testing.assert_array_equal(w.seq_features, np.stack([acts[j].activity_feature for j in (k - 2, k - 1, k)]))
        np.testing.assert_array_equal(w.last_feature, acts[k].activity_feature)
        np.testing.assert_array_equal(w.scene_feature, acts[k].scene_feature)
        assert list(w.target_labels) == [acts[k + d].label for d in (1, 2, 3)]
        assert w.inter_time == acts[k + 1].start_s - acts[k].start_s >= 0


def test_overfit_single_window():
    g = make_cycle_grammar(seed=0)
    video = generate_dataset(g, 1, (7, 7), 16, 0.1, 0)[0]
    cfg = PredictorConfig(num_classes=g.num_classes, hidden=32, dropout=0.0)
    window = make_windows(video, cfg)[:1]
    model = build_predictor(cfg, (window[0].scene_feature.size, 16, 16))
    assert train_predictor(model, window, 200, seed=0).losses[-1] < 0.01


def _tiny_training(lr=1e-3, dropout=0.2, seed=0):
    cfg = _small(dropout=dropout)
    windows = windows_from_videos([_video(9, seed=s) for s in range(3)], cfg)
    model = build_predictor(cfg, (4, 4, 4), seed=0)
    return train_predictor(model, windows, 5, batch_size=4, seed=seed, lr=lr).losses


def test_same_seed_same_loss_curve():
    assert _tiny_training() == _tiny_training()


def test_lr_zero_constant_loss_curve():
    losses = _tiny_training(lr=0.0, dropout=0.0)
    assert max(losses) - min(losses) < 1e-12


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_predictor(build_predictor(_small(), (4, 4, 4)), [], 1)


def test_zeroed_output_layer_gives_uniform_and_bias_time():
    cfg = _small(c=4)
    model = build_predictor(cfg, (4, 4, 4))
    for layer in [*model.heads, model.time_head]:
        layer.weight.data[...] = 0.0
        layer.bias.data[...] = 0.0
    model.time_head.bias.data[...] = 1.5
    out = predict_sequence(model, make_windows(_video(7), cfg)[0])
    np.testing.assert_allclose(out.label_dists, 0.25, atol=1e-15)
    assert out.start_time == 1.5


def test_prediction_distributions_normalised_and_time_nonnegative():
    cfg = _small(c=5)
    model = build_predictor(cfg, (4, 4, 4), seed=3)
    for out in predict_sequence(model, windows_from_videos([_video(12, seed=s) for s in range(4)], cfg)):
        assert out.label_dists.shape == (3, 5)
        np.testing.assert_allclose(out.label_dists.sum(axis=1), 1.0, atol=1e-6)
        assert out.start_time >= 0


def test_prediction_rejects_feature_dim_mismatch():
    cfg = _small()
    model = build_predictor(cfg, (5, 4, 4))
    with pytest.raises(ShapeError):
        predict_sequence(model, make_windows(_video(7), cfg))


def test_trained_on_cycle_grammar_predicts_successors():
    # feature centroids belong to a dataset, so held-out videos come from the same draw
    g = make_cycle_grammar(num_classes=5, seed=0)
    train, held_out = split_dataset(generate_dataset(g, 50, (8, 10), 16, 0.1, seed=1), 0.8, seed=1)
    cfg = PredictorConfig(num_classes=5, hidden=32, standardize_time=True)
    windows = windows_from_videos(train, cfg)
    model = build_predictor(cfg, (windows[0].scene_feature.size, 16, 16))
    train_predictor(model, windows, 40, batch_size=32, lr=3e-3)
    last_label = {f"{v.video_id}:{i}": v.activities[i + cfg.window - 1].label
                  for v in held_out for i in range(len(v.activities) - cfg.window + 1)}
    test = windows_from_videos(held_out, cfg)
    for w, out in zip(test, predict_sequence(model, test)):
        succ = [int(np.argmax(g.transitions[last_label[w.key]]))]
        for _ in range(2):
            succ.append(int(np.argmax(g.transitions[succ[-1]])))
        assert [int(np.argmax(d)) for d in out.label_dists] == succ


def test_top_k_examples():
    assert top_k(np.full(6, 1 / 6), 1) == [(0, pytest.approx(1 / 6))]
    assert top_k([0.1, 0.7, 0.2], 2) == [(1, 0.7), (2, 0.2)]
    for k in (0, 4):
        with pytest.raises(ValueError):
            top_k([0.1, 0.7, 0.2], k)


def test_top_k_sets_nested():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = rng.dirichlet(np.ones(8))
        s1, s3, s5 = ({c for c, _ in top_k(d, k)} for k in (1, 3, 5))
        assert s1 <= s3 <= s5


def test_unknown_gate():
    d = np.array([0.9, 0.05, 0.05])
    assert unknown_gate(d, 0.1) == 0
    assert unknown_gate(np.full(100, 0.01), 0.1) == UNKNOWN
    assert unknown_gate(d, 0.1) == unknown_gate(d.copy(), 0.1)
