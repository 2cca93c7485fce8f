"""Classification and caption metrics.

Caption metrics take pre-tokenized lists of strings; :func:`tokenize`
lowercases, strips punctuation and splits on whitespace.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predictor import top_k

_PUNCT = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    support: np.ndarray
    pr: float
    rc: float
    topk: dict
    topk_macro: dict
    confusion: np.ndarray

    @property
    def top1(self) -> float:
        return self.topk.get(1, float("nan"))

    def as_dict(self) -> dict:
        d = {"pr": self.pr, "rc": self.rc}
        for k, v in self.topk.items():
            d[f"top{k}"] = v
        for k, v in self.topk_macro.items():
            d[f"top{k}_macro"] = v
        return d


def classification_report(preds: Sequence, golds: Sequence[int], ks: Sequence[int] = (1, 3, 5),
                          num_classes: int | None = None) -> ClassificationReport:
    """Per-class precision/recall from top-1 decisions plus top-k accuracy.

    ``k`` values larger than the number of classes are clipped to it.
    """
    if len(preds) == 0:
        raise ValueError("empty input")
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold labels")
    P = np.asarray(preds, dtype=float)
    golds = np.asarray(golds, dtype=np.int64)
    c = P.shape[1] if num_classes is None else num_classes
    if golds.min() < 0 or golds.max() >= c:
        raise ValueError("gold label out of range")
    top1 = np.array([top_k(p, 1)[0][0] for p in P])
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (golds, top1), 1)
    tp = np.diag(conf).astype(float)
    predicted = conf.sum(axis=0)
    support = conf.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(c), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(c), where=support > 0)
    present = support > 0
    hits_by_k = {}
    for k in ks:
        kk = min(k, P.shape[1])
        hits_by_k[k] = np.array([g in {i for i, _ in top_k(p, kk)} for p, g in zip(P, golds)])
    topk = {k: float(h.mean()) for k, h in hits_by_k.items()}
    topk_macro = {k: float(np.mean([h[golds == j].mean() for j in np.flatnonzero(present)]))
                  for k, h in hits_by_k.items()}
    return ClassificationReport(precision, recall, support, float(precision[present].mean()),
                                float(recall[present].mean()), topk, topk_macro, conf)


# ---------------------------------------------------------------------------
# BLEU


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(cand, refs, max_n):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c = ngrams(cand, n)
        max_ref = Counter()
        for r in refs:
            for g, cnt in ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], cnt)
        matches.append(sum(min(cnt, max_ref[g]) for g, cnt in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    # closest reference length, shorter wins ties
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _combine(matches, totals, cand_len, ref_len, floor=None):
    logs = []
    for m, t in zip(matches, totals):
        if t == 0 or m == 0:
            if floor is None:
                return 0.0
            logs.append(math.log(floor))
        else:
            logs.append(math.log(m / t))
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len)) if cand_len else 0.0
    return bp * math.exp(sum(logs) / len(logs))


def _check_corpus(candidates, references):
    if not candidates:
        raise ValueError("empty candidate list")
    if len(candidates) != len(references):
        raise ValueError("candidates and references are not aligned")
    for c, refs in zip(candidates, references):
        if not c:
            raise ValueError("empty candidate")
        if not refs:
            raise ValueError("candidate without references")


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
         max_n: int = 4) -> float:
    """Corpus BLEU: clipped n-gram precisions pooled over the corpus, uniform weights."""
    _check_corpus(candidates, references)
    M, T = np.zeros(max_n), np.zeros(max_n)
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        m, t, cl, rl = _bleu_stats(cand, refs, max_n)
        M += m
        T += t
        c_len += cl
        r_len += rl
    return _combine(M, T, c_len, r_len)


def sentence_bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4,
                  floor: float = 1e-9) -> float:
    """Single-sentence BLEU with zero precisions floored at ``floor``."""
    _check_corpus([candidate], [references])
    return _combine(*_bleu_stats(candidate, references, max_n), floor=floor)


def mean_sentence_bleu(candidates, references, max_n: int = 4, floor: float = 1e-9) -> float:
    _check_corpus(candidates, references)
    return float(np.mean([sentence_bleu(c, r, max_n, floor) for c, r in zip(candidates, references)]))


def modified_precision(candidate: Sequence[str], references: Sequence[Sequence[str]], n: int) -> float:
    m, t, _, _ = _bleu_stats(candidate, references, n)
    return m[n - 1] / t[n - 1] if t[n - 1] else 0.0


# ---------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], references: Sequence[Sequence[str]], beta: float = 1.2) -> float:
    if not candidate:
        raise ValueError("empty candidate")
    if not references:
        raise ValueError("no references")
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


def corpus_rouge_l(candidates, references, beta: float = 1.2) -> float:
    _check_corpus(candidates, references)
    return float(np.mean([rouge_l(c, r, beta) for c, r in zip(candidates, references)]))


# ---------------------------------------------------------------------------
# CIDEr


def cider(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
          max_n: int = 4, scale: float = 10.0) -> float:
    return float(np.mean(cider_scores(candidates, references, max_n, scale)))


def cider_scores(candidates, references, max_n: int = 4, scale: float = 10.0) -> list[float]:
    """Per-candidate CIDEr with document frequencies from the reference sets."""
    _check_corpus(candidates, references)
    N = len(references)
    if N < 2:
        raise ValueError("CIDEr needs at least two documents to estimate IDF")
    log_n = math.log(N)
    df = [Counter() for _ in range(max_n)]
    for refs in references:
        for n in range(max_n):
            df[n].update({g for r in refs for g in ngrams(r, n + 1)})

    def vec(tokens, n):
        tf = ngrams(tokens, n + 1)
        return {g: cnt * (log_n - math.log(max(1.0, df[n][g]))) for g, cnt in tf.items()}

    def cos(u, v):
        dot = sum(w * v.get(g, 0.0) for g, w in u.items())
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        return dot / (nu * nv) if nu > 0 and nv > 0 else 0.0

    scores = []
    for cand, refs in zip(candidates, references):
        per_n = []
        for n in range(max_n):
            cv = vec(cand, n)
            per_n.append(np.mean([cos(cv, vec(r, n)) for r in refs]))
        scores.append(scale * float(np.mean(per_n)))
    return scores


# ---------------------------------------------------------------------------
# caption report


@dataclass
class CaptionScores:
    bleu4: float
    bleu4_sentence: float
    rouge_l: float
    cider: float
    count: int
    absent: list = field(default_factory=lambda: ["meteor", "spice"])

    def as_dict(self) -> dict:
        return {"bleu4": self.bleu4, "bleu4_sentence": self.bleu4_sentence, "rouge_l": self.rouge_l,
                "cider": self.cider, "caption_pairs": self.count, "absent_metrics": list(self.absent)}


def caption_scores(candidates, references) -> CaptionScores:
    _check_corpus(candidates, references)
    cid = cider(candidates, references) if len(candidates) >= 2 else float("nan")
    return CaptionScores(bleu(candidates, references), mean_sentence_bleu(candidates, references),
                         corpus_rouge_l(candidates, references), cid, len(candidates))
