"""Glue between the predictor and the captioner: the test-time flow.

Observed window -> predicted label sequence -> one caption per predicted
label, each built from the predicted label and the last observed scene.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .captioner import Seq2SeqModel, Vocabulary, build_input_text, caption_target, decode_beam, decode_greedy
from .datagen import VideoRecord
from .predictor import PredictorConfig, PredictorModel, TrainingWindow, predict_sequence


def caption_pairs(videos: Sequence[VideoRecord]) -> list[tuple[list[str], list[str]]]:
    """(encoder input, caption) for every activity that has a predecessor.

    The encoder input is the activity's label followed by the objects seen
    at the end of the preceding activity.
    """
    pairs = []
    for v in videos:
        for prev, cur in zip(v.activities, v.activities[1:]):
            pairs.append((build_input_text(cur.label_name, prev.scene_objects), list(cur.caption_tokens)))
    return pairs


def build_vocab(pairs, max_size: int = 20000) -> Vocabulary:
    return Vocabulary.build([a for a, _ in pairs] + [b for _, b in pairs], max_size)


def encode_pairs(pairs, vocab: Vocabulary) -> list[tuple[list[int], list[int]]]:
    return [(vocab.encode(a), caption_target(b, vocab)) for a, b in pairs]


def window_context(videos: Sequence[VideoRecord], cfg: PredictorConfig) -> dict:
    """Per-window observed scene objects and reference future captions, keyed by window key."""
    out = {}
    W, H = cfg.window, cfg.horizon
    for v in videos:
        acts = v.activities
        for i in range(max(0, len(acts) - W - H + 1)):
            out[f"{v.video_id}:{i}"] = {
                "scene_objects": list(acts[i + W - 1].scene_objects),
                "captions": [list(a.caption_tokens) for a in acts[i + W:i + W + H]],
                "label_names": [a.label_name for a in acts[i + W:i + W + H]],
            }
    return out


def caption_tokens(model: Seq2SeqModel, tokens: Sequence[str], beam_width: int = 1) -> list[str]:
    src = model.vocab.encode(tokens)
    if beam_width <= 1:
        out = decode_greedy(model, src)
    else:
        out = decode_beam(model, src, beam_width)[0][0]
    return model.vocab.decode(out)


def describe_future(predictor: PredictorModel, captioner: Seq2SeqModel | None,
                    windows: Sequence[TrainingWindow], scene_objects: Sequence[Sequence[str]],
                    beam_width: int = 1) -> list[dict]:
    names = predictor.class_names
    results = []
    for w, out, objs in zip(windows, predict_sequence(predictor, windows), scene_objects):
        labels = [int(np.argmax(d)) for d in out.label_dists]
        rec = {"labels": labels, "start_time": out.start_time, "dists": out.label_dists}
        if captioner is not None and names is not None:
            rec["captions"] = [caption_tokens(captioner, build_input_text(names[k], objs), beam_width)
                               for k in labels]
        results.append(rec)
    return results
