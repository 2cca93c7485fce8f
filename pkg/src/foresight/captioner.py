"""LSTM encoder-decoder mapping "label + scene objects" text to a caption.

The encoder's final per-layer states initialise the decoder, which is
trained with teacher forcing on BOS-shifted captions and predicts a softmax
over the whole vocabulary at every step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import ndcore as nd
from .layers import DenseLayer, LstmLayer, SequenceBatch, glorot_uniform, lstm_forward_sequence, lstm_step
from .ndcore import Parameter, Tensor
from .optim import Optimizer, make_optimizer

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = (), max_size: int = 20000):
        if max_size < len(RESERVED):
            raise ValueError("max_size must leave room for the reserved tokens")
        self.max_size = max_size
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if len(self.itos) >= self.max_size:
            return UNK
        self.stoi[token] = len(self.itos)
        self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], max_size: int = 20000) -> "Vocabulary":
        """Most frequent first, ties alphabetical, truncated at ``max_size``."""
        counts = Counter(t for seq in sequences for t in seq if t not in RESERVED)
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ranked[:max_size - len(RESERVED)], max_size)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, indices: Sequence[int], strip: bool = True) -> list[str]:
        out = []
        for i in indices:
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out


def build_input_text(label: str | Sequence[str], scene_objects: Sequence[str] = ()) -> list[str]:
    """Label tokens followed by scene-object tokens, lowercased."""
    words = label.split() if isinstance(label, str) else [w for part in label for w in part.split()]
    if not words:
        raise ValueError("label must contain at least one token")
    words += [w for obj in scene_objects for w in obj.split()]
    return [w.lower() for w in words]


def caption_target(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Caption indices terminated by EOS."""
    return vocab.encode(tokens) + [EOS]


@dataclass
class Seq2SeqConfig:
    vocab_size: int
    layers: int = 3
    hidden: int = 1000
    embed: int | None = None
    max_decode_len: int = 20

    def validate(self):
        if self.layers < 1 or self.hidden < 1 or self.vocab_size <= len(RESERVED):
            raise ValueError("invalid seq2seq configuration")

    @property
    def embed_dim(self) -> int:
        return self.embed or self.hidden


@dataclass
class EncoderState:
    z: list                          # per-layer (h, c) final states
    hidden_seq: list = field(default_factory=list)


class Seq2SeqModel:
    def __init__(self, cfg: Seq2SeqConfig, vocab: Vocabulary | None = None, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        V, E, H = cfg.vocab_size, cfg.embed_dim, cfg.hidden
        # a learned matrix applied to a one-hot index is a row lookup
        self.enc_embed = Parameter(glorot_uniform(rng, V, E), name="enc.embed")
        self.dec_embed = Parameter(glorot_uniform(rng, V, E), name="dec.embed")
        self.encoder = [LstmLayer(E if k == 0 else H, H, rng, name=f"enc.lstm{k}") for k in range(cfg.layers)]
        self.decoder = [LstmLayer(E if k == 0 else H, H, rng, name=f"dec.lstm{k}") for k in range(cfg.layers)]
        self.out = DenseLayer(H, V, "identity", rng, name="dec.out")

    def parameters(self) -> list[Parameter]:
        ps = [self.enc_embed, self.dec_embed]
        for layer in [*self.encoder, *self.decoder, self.out]:
            ps.extend(layer.parameters())
        return ps

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def _check_indices(self, seqs):
        V = self.cfg.vocab_size
        for s in seqs:
            if any(i < 0 or i >= V for i in s):
                raise IndexError(f"token index out of range [0, {V})")

    # -- encoder ---------------------------------------------------------
    def encode_batch(self, sources: Sequence[Sequence[int]]) -> EncoderState:
        self._check_indices(sources)
        if any(len(s) == 0 for s in sources):
            raise ValueError("encoder input must have at least one token")
        lengths = np.array([len(s) for s in sources])
        T = int(lengths.max())
        padded = np.full((T, len(sources)), PAD, dtype=np.int64)
        for b, s in enumerate(sources):
            padded[:len(s), b] = s
        steps = [nd.take_rows(self.enc_embed, padded[t]) for t in range(T)]
        hidden, states = lstm_forward_sequence(self.encoder, SequenceBatch(steps, lengths=lengths), return_all=True)
        return EncoderState(states, hidden)

    # -- decoder ---------------------------------------------------------
    def decoder_step(self, token_ids, states):
        """One decoder step: returns (log-probs (batch, V), new states)."""
        x = nd.take_rows(self.dec_embed, np.asarray(token_ids, dtype=np.int64))
        new_states = []
        for layer, (h, c) in zip(self.decoder, states):
            h, c = lstm_step(layer, x, h, c)
            new_states.append((h, c))
            x = h
        return nd.log_softmax(self.out(x)), new_states


def encode(model: Seq2SeqModel, a: Sequence[int]) -> EncoderState:
    return model.encode_batch([list(a)])


def _sequence_nll(model: Seq2SeqModel, sources, targets) -> tuple[Tensor, list]:
    """Per-example summed negative log-likelihood (batch,) under teacher forcing."""
    for t in targets:
        if len(t) == 0:
            raise ValueError("caption must contain at least one token")
        if t[-1] != EOS:
            raise ValueError("caption must end with EOS")
    model._check_indices(targets)
    enc = model.encode_batch(sources)
    lengths = np.array([len(t) for t in targets])
    n = int(lengths.max())
    B = len(targets)
    gold = np.full((n, B), PAD, dtype=np.int64)
    for b, t in enumerate(targets):
        gold[:len(t), b] = t
    inputs = np.vstack([np.full((1, B), BOS), gold[:-1]])
    mask = (np.arange(n)[:, None] < lengths[None, :]).astype(float)
    states = enc.z
    total = None
    step_logps = []
    for d in range(n):
        logp, states = model.decoder_step(inputs[d], states)
        picked = nd.pick(logp, gold[d])
        step_logps.append(picked)
        term = nd.mul(picked, mask[d])
        total = term if total is None else nd.add(total, term)
    return nd.mul(total, -1.0), step_logps


def caption_loss(model: Seq2SeqModel, a: Sequence[int], b: Sequence[int]) -> Tensor:
    """-sum_d log p(b_d | z, b_<d) for one pair."""
    nll, _ = _sequence_nll(model, [list(a)], [list(b)])
    return nd.reduce_sum(nll)


def batch_caption_loss(model: Seq2SeqModel, sources, targets) -> Tensor:
    """Mean over pairs of the summed caption NLL."""
    nll, _ = _sequence_nll(model, sources, targets)
    return nd.reduce_mean(nll)


def step_probabilities(model: Seq2SeqModel, a: Sequence[int], b: Sequence[int]) -> list[np.ndarray]:
    """Full next-token distribution at every teacher-forced step (diagnostics and tests)."""
    enc = encode(model, a)
    states = enc.z
    prev = BOS
    out = []
    for tok in b:
        logp, states = model.decoder_step([prev], states)
        out.append(np.exp(logp.data[0]))
        prev = tok
    return out


def decode_greedy(model: Seq2SeqModel, a: Sequence[int], max_len: int | None = None) -> list[int]:
    seq, _ = _greedy(model, a, max_len)
    return seq


def _greedy(model, a, max_len):
    max_len = model.cfg.max_decode_len if max_len is None else max_len
    states = encode(model, a).z
    prev, seq, total = BOS, [], 0.0
    for _ in range(max_len):
        logp, states = model.decoder_step([prev], states)
        # argmax over running totals, the same quantity beam search ranks
        cand = total + logp.data[0]
        prev = int(np.argmax(cand))
        total = float(cand[prev])
        seq.append(prev)
        if prev == EOS:
            break
    return seq, total


def greedy_log_prob(model: Seq2SeqModel, a: Sequence[int], max_len: int | None = None) -> float:
    return _greedy(model, a, max_len)[1]


def sequence_log_prob(model: Seq2SeqModel, a: Sequence[int], b: Sequence[int]) -> float:
    """Log-probability of decoding exactly ``b`` (no implicit EOS appended)."""
    states = encode(model, a).z
    prev, total = BOS, 0.0
    for tok in b:
        logp, states = model.decoder_step([prev], states)
        total += float(logp.data[0, tok])
        prev = tok
    return total


def decode_beam(model: Seq2SeqModel, a: Sequence[int], beam_width: int = 4,
                max_len: int | None = None) -> list[tuple[list[int], float]]:
    """Beam search; hypotheses end at EOS or at ``max_len``.

    Returns every completed hypothesis, best first.  Ties are broken by the
    token sequence so width 1 reproduces greedy argmax decoding exactly.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be at least 1")
    max_len = model.cfg.max_decode_len if max_len is None else max_len
    enc = encode(model, a)
    alive = [([], 0.0, enc.z)]
    finished = []
    for _ in range(max_len):
        cands = []
        for seq, score, states in alive:
            logp, new_states = model.decoder_step([seq[-1] if seq else BOS], states)
            totals = score + logp.data[0]
            for tok in range(totals.size):
                cands.append((seq + [tok], float(totals[tok]), new_states))
        cands.sort(key=lambda c: (-c[1], c[0]))
        alive = []
        for seq, score, states in cands[:beam_width]:
            (finished if seq[-1] == EOS else alive).append((seq, score, states))
        if not alive:
            break
        best_done = max((s for _, s, _ in finished), default=-np.inf)
        # scores only fall as hypotheses grow
        if best_done >= alive[0][1]:
            break
    finished.extend(alive)
    finished.sort(key=lambda c: (-c[1], c[0]))
    return [(seq, score) for seq, score, _ in finished]


@dataclass
class CaptionTrainResult:
    model: Seq2SeqModel
    losses: list = field(default_factory=list)


def train_captioner(model: Seq2SeqModel, pairs: Sequence[tuple[Sequence[int], Sequence[int]]], epochs: int,
                    batch_size: int = 1000, optimizer: Optimizer | None = None, seed: int = 0,
                    lr: float = 1e-3, callback=None) -> CaptionTrainResult:
    if not pairs:
        raise ValueError("empty caption corpus")
    if optimizer is None:
        optimizer = make_optimizer("adam", model.parameters(), lr)
    rng = np.random.default_rng(seed)
    params = model.parameters()
    n = len(pairs)
    result = CaptionTrainResult(model)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            nd.zero_grads(params)
            loss = batch_caption_loss(model, [pairs[i][0] for i in idx], [pairs[i][1] for i in idx])
            nd.backward(loss)
            optimizer.step()
            total += loss.item() * len(idx)
        result.losses.append(total / n)
        if callback is not None:
            callback(epoch, result.losses[-1])
    return result


def build_captioner(vocab: Vocabulary, layers: int = 3, hidden: int = 1000, embed: int | None = None,
                    max_decode_len: int = 20, seed: int = 0) -> Seq2SeqModel:
    cfg = Seq2SeqConfig(len(vocab), layers, hidden, embed, max_decode_len)
    return Seq2SeqModel(cfg, vocab, seed)
