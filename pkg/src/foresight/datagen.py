"""Synthetic activity grammars and the videos sampled from them.

Each activity instance carries the objects visible at its end.  Those
objects modulate which activity comes next and are the object the next
activity's caption mentions, so scene context is what disambiguates the
successor and supplies the caption's noun.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

VERBS = ["take out", "wash", "peel", "cut slices", "cut apart", "put in", "spice", "stir",
         "pour", "open", "close", "smell", "puree", "grate", "rinse", "dry", "squeeze",
         "mix", "cut dice", "screw open", "put on", "throw away", "fill", "shake"]
OBJECTS = ["bowl", "knife", "pan", "plate", "carrot", "cucumber", "egg", "fridge", "drawer",
           "cup", "lid", "spoon", "towel", "sink", "board", "oven"]
PAST = {"take out": "took out", "wash": "washed", "peel": "peeled", "cut slices": "cut slices of",
        "cut apart": "cut apart", "put in": "put something in", "spice": "spiced", "stir": "stirred",
        "pour": "poured", "open": "opened", "close": "closed", "smell": "smelled", "puree": "pureed",
        "grate": "grated", "rinse": "rinsed", "dry": "dried", "squeeze": "squeezed", "mix": "mixed",
        "cut dice": "diced", "screw open": "screwed open", "put on": "put on", "throw away": "threw away",
        "fill": "filled", "shake": "shook"}


class GrammarError(ValueError):
    pass


@dataclass
class ActivityGrammar:
    classes: list[str]
    transitions: np.ndarray                    # (c, c) row-stochastic
    objects: list[str]
    object_probs: np.ndarray                   # (c, n_obj): objects seen at the end of class k
    modulation: np.ndarray                     # (c, n_obj, c) successor reweighting factors
    duration_mean: np.ndarray
    duration_std: np.ndarray
    gap_mean: np.ndarray
    gap_std: np.ndarray
    templates: dict = field(default_factory=dict)   # (class, object) -> token list
    order2: np.ndarray | None = None           # optional (c, c, c): prev, cur -> next

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def validate(self) -> None:
        c, n_obj = len(self.classes), len(self.objects)
        T = np.asarray(self.transitions)
        if T.shape != (c, c) or (T < 0).any() or not np.allclose(T.sum(axis=1), 1.0, atol=1e-9):
            raise GrammarError("transition matrix must be c x c, non-negative, rows summing to 1")
        if self.object_probs.shape != (c, n_obj) or not np.allclose(self.object_probs.sum(axis=1), 1.0):
            raise GrammarError("object_probs must be c x n_objects with rows summing to 1")
        if self.modulation.shape != (c, n_obj, c) or (self.modulation < 0).any():
            raise GrammarError("modulation must be a non-negative c x n_objects x c array")
        for arr in (self.duration_mean, self.duration_std, self.gap_mean, self.gap_std):
            if np.shape(arr) != (c,) or (np.asarray(arr) < 0).any():
                raise GrammarError("duration/gap parameters must be non-negative per-class vectors")
        for k in range(c):
            if not any(key[0] == k for key in self.templates):
                raise GrammarError(f"class {self.classes[k]!r} has no caption template")
        if self.order2 is not None:
            o2 = np.asarray(self.order2)
            if o2.shape != (c, c, c) or not np.allclose(o2.sum(axis=2), 1.0, atol=1e-9):
                raise GrammarError("order-2 table must be c x c x c with rows summing to 1")

    def successor_probs(self, cur: int, obj: int, prev: int | None = None) -> np.ndarray:
        base = self.transitions[cur] if self.order2 is None or prev is None else self.order2[prev, cur]
        w = base * self.modulation[cur, obj]
        total = w.sum()
        # an object that rules out every successor falls back to the unmodulated row
        return w / total if total > 0 else base

    def template(self, label: int, obj: int) -> list[str]:
        key = (label, obj)
        if key in self.templates:
            return list(self.templates[key])
        return default_caption(self.classes[label], self.objects[obj])

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "transitions": self.transitions.tolist(),
            "objects": list(self.objects),
            "object_probs": self.object_probs.tolist(),
            "modulation": self.modulation.tolist(),
            "duration_mean": np.asarray(self.duration_mean).tolist(),
            "duration_std": np.asarray(self.duration_std).tolist(),
            "gap_mean": np.asarray(self.gap_mean).tolist(),
            "gap_std": np.asarray(self.gap_std).tolist(),
            "templates": [[k[0], k[1], v] for k, v in sorted(self.templates.items())],
            "order2": None if self.order2 is None else np.asarray(self.order2).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityGrammar":
        g = cls(
            classes=list(d["classes"]),
            transitions=np.asarray(d["transitions"], dtype=float),
            objects=list(d["objects"]),
            object_probs=np.asarray(d["object_probs"], dtype=float),
            modulation=np.asarray(d["modulation"], dtype=float),
            duration_mean=np.asarray(d["duration_mean"], dtype=float),
            duration_std=np.asarray(d["duration_std"], dtype=float),
            gap_mean=np.asarray(d["gap_mean"], dtype=float),
            gap_std=np.asarray(d["gap_std"], dtype=float),
            templates={(int(a), int(b)): list(t) for a, b, t in d.get("templates", [])},
            order2=None if d.get("order2") is None else np.asarray(d["order2"], dtype=float),
        )
        g.validate()
        return g


def default_caption(label: str, obj: str) -> list[str]:
    verb = PAST.get(label, label)
    return f"the person {verb} the {obj}".split()


@dataclass
class ActivityInstance:
    label: int
    label_name: str
    start_s: float
    end_s: float
    activity_feature: np.ndarray
    scene_feature: np.ndarray
    scene_objects: list[str]
    obj: str                      # object the activity is performed on
    caption_tokens: list[str]

    def to_dict(self) -> dict:
        return {
            "label": self.label, "label_name": self.label_name,
            "start_s": self.start_s, "end_s": self.end_s,
            "activity_feature": self.activity_feature.tolist(),
            "scene_feature": self.scene_feature.tolist(),
            "scene_objects": list(self.scene_objects), "object": self.obj,
            "caption_tokens": list(self.caption_tokens),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityInstance":
        return cls(int(d["label"]), d.get("label_name", str(d["label"])), float(d["start_s"]),
                   float(d["end_s"]), np.asarray(d["activity_feature"], dtype=float),
                   np.asarray(d["scene_feature"], dtype=float), list(d.get("scene_objects", [])),
                   d.get("object", ""), list(d.get("caption_tokens", [])))


@dataclass
class VideoRecord:
    video_id: str
    activities: list[ActivityInstance]

    def to_dict(self) -> dict:
        return {"video_id": self.video_id, "activities": [a.to_dict() for a in self.activities]}

    @classmethod
    def from_dict(cls, d: dict) -> "VideoRecord":
        return cls(str(d["video_id"]), [ActivityInstance.from_dict(a) for a in d["activities"]])


def _templates(classes: Sequence[str], objects: Sequence[str]) -> dict:
    return {(k, o): default_caption(classes[k], objects[o])
            for k in range(len(classes)) for o in range(len(objects))}


def _timing(rng: np.random.Generator, c: int):
    duration_mean = rng.uniform(3.0, 12.0, c)
    gap_mean = rng.uniform(1.0, 6.0, c)
    return duration_mean, 0.1 * duration_mean, gap_mean, 0.1 * gap_mean


def make_disambiguation_grammar(seed: int = 0, num_classes: int = 8, num_objects: int = 8) -> ActivityGrammar:
    """Every class has two equiprobable successors; the scene object picks one.

    Without scene context the best possible successor accuracy is 0.5, with
    it the successor is determined.
    """
    rng = np.random.default_rng(seed)
    if num_objects < 2 or num_classes < 3:
        raise GrammarError("need at least 3 classes and 2 objects")
    classes = VERBS[:num_classes] if num_classes <= len(VERBS) else [f"act{k}" for k in range(num_classes)]
    objects = OBJECTS[:num_objects] if num_objects <= len(OBJECTS) else [f"obj{k}" for k in range(num_objects)]
    c, n_obj = num_classes, num_objects
    T = np.zeros((c, c))
    object_probs = np.zeros((c, n_obj))
    modulation = np.zeros((c, n_obj, c))
    for k in range(c):
        succ = rng.choice([j for j in range(c) if j != k], size=2, replace=False)
        objs = rng.choice(n_obj, size=2, replace=False)
        T[k, succ] = 0.5
        object_probs[k, objs] = 0.5
        for s, o in zip(succ, objs):
            modulation[k, o, s] = 1.0
    dm, ds, gm, gs = _timing(rng, c)
    g = ActivityGrammar(list(classes), T, list(objects), object_probs, modulation, dm, ds, gm, gs,
                        _templates(classes, objects))
    g.validate()
    return g


def make_stochastic_grammar(seed: int = 0, num_classes: int = 8, num_objects: int = 8,
                            concentration: float = 0.3, scene_strength: float = 0.0) -> ActivityGrammar:
    """Random peaked Markov chain; ``scene_strength`` > 0 lets objects tilt the successor."""
    rng = np.random.default_rng(seed)
    c, n_obj = num_classes, num_objects
    classes = VERBS[:c] if c <= len(VERBS) else [f"act{k}" for k in range(c)]
    objects = OBJECTS[:n_obj] if n_obj <= len(OBJECTS) else [f"obj{k}" for k in range(n_obj)]
    T = rng.dirichlet(np.full(c, concentration), size=c)
    object_probs = rng.dirichlet(np.ones(n_obj), size=c)
    modulation = np.exp(scene_strength * rng.standard_normal((c, n_obj, c)))
    dm, ds, gm, gs = _timing(rng, c)
    g = ActivityGrammar(list(classes), T, list(objects), object_probs, modulation, dm, ds, gm, gs,
                        _templates(classes, objects))
    g.validate()
    return g


def make_cycle_grammar(num_classes: int = 5, num_objects: int = 3, seed: int = 0) -> ActivityGrammar:
    """Deterministic grammar: class k is always followed by class k + 1 (mod c)."""
    rng = np.random.default_rng(seed)
    c, n_obj = num_classes, num_objects
    classes = VERBS[:c]
    objects = OBJECTS[:n_obj]
    T = np.roll(np.eye(c), 1, axis=1)
    object_probs = np.full((c, n_obj), 1.0 / n_obj)
    modulation = np.ones((c, n_obj, c))
    dm, ds, gm, gs = _timing(rng, c)
    return ActivityGrammar(list(classes), T, list(objects), object_probs, modulation, dm, ds, gm, gs,
                           _templates(classes, objects))


def _truncnorm(rng: np.random.Generator, mean: float, std: float, floor: float = 0.0) -> float:
    return max(floor, mean + std * rng.standard_normal())


def sample_chain(grammar: ActivityGrammar, length: int, rng: np.random.Generator,
                 start: int | None = None) -> tuple[list[int], list[int]]:
    """Labels and end-of-activity objects for one video."""
    c = grammar.num_classes
    labels = [int(rng.integers(c)) if start is None else start]
    objs = []
    prev = None
    for _ in range(length):
        cur = labels[-1]
        o = int(rng.choice(len(grammar.objects), p=grammar.object_probs[cur]))
        objs.append(o)
        if len(labels) == length:
            break
        nxt = int(rng.choice(c, p=grammar.successor_probs(cur, o, prev)))
        prev = cur
        labels.append(nxt)
    return labels, objs


def feature_centroids(n: int, dim: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Fixed random unit-norm centroids (scaled) shared by a whole dataset."""
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, dim))
    return scale * m / np.linalg.norm(m, axis=1, keepdims=True)


def generate_dataset(grammar: ActivityGrammar, n_videos: int, len_range: tuple[int, int] = (8, 12),
                     feature_dim: int = 32, noise_sigma: float = 0.1, seed: int = 0,
                     scene_dim: int | None = None, id_prefix: str = "v") -> list[VideoRecord]:
    grammar.validate()
    c = grammar.num_classes
    if feature_dim < c:
        raise GrammarError(f"feature_dim {feature_dim} must be at least the number of classes {c}")
    scene_dim = feature_dim if scene_dim is None else scene_dim
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise GrammarError(f"bad length range {len_range}")
    act_c = feature_centroids(c, feature_dim, seed=seed + 7919)
    obj_c = feature_centroids(len(grammar.objects), scene_dim, seed=seed + 104729)
    videos = []
    for v in range(n_videos):
        # per-video streams so any subset of videos can be regenerated independently
        rng = np.random.default_rng([seed, v])
        length = int(rng.integers(lo, hi + 1))
        labels, objs = sample_chain(grammar, length, rng)
        first_obj = int(rng.choice(len(grammar.objects), p=grammar.object_probs[labels[0]]))
        t = float(rng.uniform(0.0, 5.0))
        acts = []
        for k, (lab, o) in enumerate(zip(labels, objs)):
            dur = _truncnorm(rng, grammar.duration_mean[lab], grammar.duration_std[lab], floor=1e-3)
            gap = _truncnorm(rng, grammar.gap_mean[lab], grammar.gap_std[lab])
            handled = first_obj if k == 0 else objs[k - 1]
            acts.append(ActivityInstance(
                label=lab, label_name=grammar.classes[lab], start_s=t, end_s=t + dur,
                activity_feature=act_c[lab] + noise_sigma * rng.standard_normal(feature_dim),
                scene_feature=obj_c[o] + noise_sigma * rng.standard_normal(scene_dim),
                scene_objects=[grammar.objects[o]], obj=grammar.objects[handled],
                caption_tokens=grammar.template(lab, handled),
            ))
            t = t + dur + gap
        videos.append(VideoRecord(f"{id_prefix}{v:05d}", acts))
    return videos


def split_dataset(videos: Sequence[VideoRecord], train_frac: float = 0.8, seed: int = 0):
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(videos)
    n_train = int(round(train_frac * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} videos at {train_frac} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    train = [videos[i] for i in sorted(order[:n_train])]
    test = [videos[i] for i in sorted(order[n_train:])]
    return train, test
