"""Desk-scale experiments: branch ablation, horizon degradation, captioning.

Each function is deterministic in its seeds and returns plain dicts so the
scripts in ``scripts/`` and the acceptance tests share one code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .captioner import build_captioner, build_input_text, decode_greedy, train_captioner
from .datagen import generate_dataset, make_disambiguation_grammar, make_stochastic_grammar, split_dataset
from .metrics import bleu
from .pipeline import build_vocab, caption_pairs, caption_tokens, encode_pairs, window_context
from .predictor import PredictorConfig, build_predictor, predict_sequence, train_predictor, windows_from_videos


@dataclass
class ExperimentConfig:
    n_train_videos: int = 500
    n_test_videos: int = 125
    len_range: tuple = (6, 10)
    feature_dim: int = 32
    noise_sigma: float = 0.1
    num_classes: int = 8
    num_objects: int = 8
    epochs: int = 12
    hidden: int = 256
    batch_size: int = 128
    lr: float = 1e-3
    standardize_time: bool = True


def _data(grammar, exp: ExperimentConfig, seed: int):
    n = exp.n_train_videos + exp.n_test_videos
    videos = generate_dataset(grammar, n, exp.len_range, exp.feature_dim, exp.noise_sigma, seed)
    return split_dataset(videos, exp.n_train_videos / n, seed)


def head_accuracy(model, windows) -> np.ndarray:
    outs = predict_sequence(model, windows)
    H = model.cfg.horizon
    return np.array([np.mean([o.label_dists[h].argmax() == w.target_labels[h] for o, w in zip(outs, windows)])
                     for h in range(H)])


def _fit(pcfg: PredictorConfig, train, exp: ExperimentConfig, seed: int):
    windows = windows_from_videos(train, pcfg)
    w0 = windows[0]
    dims = (w0.scene_feature.size, w0.seq_features.shape[1], w0.last_feature.size)
    model = build_predictor(pcfg, dims, seed)
    res = train_predictor(model, windows, exp.epochs, exp.batch_size, seed=seed, lr=exp.lr)
    return model, res.losses


def run_ablation(seeds=(0, 1, 2, 3, 4), exp: ExperimentConfig | None = None,
                 variants=("full", "no_scene")) -> dict:
    """Next-activity top-1 on the disambiguation grammar for each network variant."""
    exp = exp or ExperimentConfig()
    flags = {"full": {}, "no_scene": {"use_scene": False}, "no_time": {"use_time": False}}
    out = {v: [] for v in variants}
    t0 = time.perf_counter()
    for seed in seeds:
        grammar = make_disambiguation_grammar(seed, exp.num_classes, exp.num_objects)
        train, test = _data(grammar, exp, seed)
        for v in variants:
            pcfg = PredictorConfig(num_classes=exp.num_classes, hidden=exp.hidden,
                                   standardize_time=exp.standardize_time, **flags[v])
            model, _ = _fit(pcfg, train, exp, seed)
            out[v].append(float(head_accuracy(model, windows_from_videos(test, pcfg))[0]))
    return {"top1": out, "mean": {v: float(np.mean(a)) for v, a in out.items()},
            "seconds": time.perf_counter() - t0}


def run_horizon(seeds=(0, 1, 2, 3, 4), exp: ExperimentConfig | None = None, concentration: float = 0.3) -> dict:
    """Per-head accuracy on a stochastic grammar, averaged over seeds."""
    exp = exp or ExperimentConfig()
    per_seed = []
    t0 = time.perf_counter()
    for seed in seeds:
        grammar = make_stochastic_grammar(seed, exp.num_classes, exp.num_objects, concentration)
        train, test = _data(grammar, exp, seed)
        pcfg = PredictorConfig(num_classes=exp.num_classes, hidden=exp.hidden,
                               standardize_time=exp.standardize_time)
        model, _ = _fit(pcfg, train, exp, seed)
        per_seed.append(head_accuracy(model, windows_from_videos(test, pcfg)).tolist())
    return {"per_seed": per_seed, "mean": np.mean(per_seed, axis=0).tolist(),
            "seconds": time.perf_counter() - t0}


@dataclass
class CaptionExperimentConfig:
    n_train_videos: int = 200
    n_test_videos: int = 60
    layers: int = 3
    hidden: int = 64
    embed: int = 32
    epochs: int = 40
    batch_size: int = 100
    lr: float = 3e-3


def run_captioning(seed: int = 0, exp: ExperimentConfig | None = None,
                   cap: CaptionExperimentConfig | None = None) -> dict:
    """Train predictor and captioner, then caption held-out windows.

    Train exact match is measured over the distinct training pairs; held-out
    BLEU@4 covers first future activities whose label was predicted correctly.
    """
    cap = cap or CaptionExperimentConfig()
    exp = replace(exp or ExperimentConfig(), n_train_videos=cap.n_train_videos, n_test_videos=cap.n_test_videos)
    t0 = time.perf_counter()
    grammar = make_stochastic_grammar(seed, exp.num_classes, exp.num_objects, scene_strength=1.0)
    train, test = _data(grammar, exp, seed)

    pairs = caption_pairs(train)
    vocab = build_vocab(pairs)
    encoded = encode_pairs(pairs, vocab)
    model = build_captioner(vocab, cap.layers, cap.hidden, cap.embed, seed=seed)
    losses = train_captioner(model, encoded, cap.epochs, cap.batch_size, seed=seed, lr=cap.lr).losses
    distinct = {(tuple(a), tuple(b)) for a, b in encoded}
    train_exact = float(np.mean([decode_greedy(model, list(a)) == list(b) for a, b in sorted(distinct)]))

    pcfg = PredictorConfig(num_classes=exp.num_classes, hidden=exp.hidden, standardize_time=exp.standardize_time)
    predictor, _ = _fit(pcfg, train, exp, seed)
    test_windows = windows_from_videos(test, pcfg)
    ctx = window_context(test, pcfg)
    cands, refs = [], []
    correct = 0
    for w, out in zip(test_windows, predict_sequence(predictor, test_windows)):
        pred = int(np.argmax(out.label_dists[0]))
        if pred != w.target_labels[0]:
            continue
        correct += 1
        c = ctx[w.key]
        src = build_input_text(grammar.classes[pred], c["scene_objects"])
        cands.append(caption_tokens(model, src) or ["<empty>"])
        refs.append([c["captions"][0]])
    return {"train_exact_match": train_exact, "distinct_train_pairs": len(distinct),
            "heldout_bleu4": bleu(cands, refs) if cands else 0.0, "heldout_pairs": len(cands),
            "heldout_windows": len(test_windows), "head1_correct": correct,
            "caption_losses": losses, "seconds": time.perf_counter() - t0}
