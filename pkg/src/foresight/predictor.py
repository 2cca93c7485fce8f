"""Three-branch network predicting the next H activity labels and their start time.

Branch A reads the scene-object feature, branch B runs a two-layer LSTM over
the last W activity features, branch C reads the last observed activity's
feature.  The branches are concatenated, merged by one more fully
connected layer, and read out by H softmax heads plus a ReLU regression
node for the inter-activity time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .datagen import VideoRecord
from .layers import DenseLayer, DropoutSpec, LstmLayer, SequenceBatch, dropout_apply, lstm_forward_sequence
from .ndcore import Parameter, ShapeError, Tensor
from .optim import Optimizer, make_optimizer

UNKNOWN = -1


@dataclass
class PredictorConfig:
    num_classes: int
    window: int = 3
    horizon: int = 3
    hidden: int = 256
    lstm_layers: int = 2
    fc_layers: int = 2
    dropout: float = 0.2
    use_scene: bool = True
    use_sequence: bool = True
    use_time: bool = True
    unknown_threshold: float = 0.1
    time_weight: float = 1.0
    standardize_time: bool = False

    def validate(self) -> None:
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be at least 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.hidden < 1 or self.lstm_layers < 1 or self.fc_layers < 1:
            raise ValueError("layer sizes must be positive")
        if not self.use_sequence:
            raise ValueError("the sequence branch cannot be disabled")
        if not 0.0 < self.unknown_threshold < 1.0:
            raise ValueError("unknown_threshold must be in (0, 1)")


@dataclass
class TrainingWindow:
    seq_features: np.ndarray          # (W, activity_dim)
    scene_feature: np.ndarray
    last_feature: np.ndarray
    target_labels: np.ndarray         # (H,)
    inter_time: float
    video_id: str = ""
    index: int = 0

    @property
    def key(self) -> str:
        return f"{self.video_id}:{self.index}"


@dataclass
class PredictionOutput:
    label_dists: np.ndarray           # (H, c)
    start_time: float


def make_windows(video: VideoRecord, cfg: PredictorConfig) -> list[TrainingWindow]:
    """Stride-one sliding windows: W observed activities followed by H targets."""
    acts = video.activities
    W, H = cfg.window, cfg.horizon
    out = []
    for i in range(max(0, len(acts) - W - H + 1)):
        obs = acts[i:i + W]
        fut = acts[i + W:i + W + H]
        out.append(TrainingWindow(
            seq_features=np.stack([a.activity_feature for a in obs]),
            scene_feature=obs[-1].scene_feature,
            last_feature=obs[-1].activity_feature,
            target_labels=np.array([a.label for a in fut], dtype=np.int64),
            inter_time=fut[0].start_s - obs[-1].start_s,
            video_id=video.video_id, index=i,
        ))
    return out


def windows_from_videos(videos: Sequence[VideoRecord], cfg: PredictorConfig) -> list[TrainingWindow]:
    return [w for v in videos for w in make_windows(v, cfg)]


@dataclass
class Batch:
    seq: np.ndarray                   # (W, batch, dim)
    scene: np.ndarray
    last: np.ndarray
    labels: np.ndarray | None = None  # (batch, H)
    times: np.ndarray | None = None   # (batch,)


def stack_windows(windows: Sequence[TrainingWindow]) -> Batch:
    return Batch(
        seq=np.stack([w.seq_features for w in windows], axis=1),
        scene=np.stack([w.scene_feature for w in windows]),
        last=np.stack([w.last_feature for w in windows]),
        labels=np.stack([w.target_labels for w in windows]),
        times=np.array([w.inter_time for w in windows], dtype=float),
    )


@dataclass
class ForwardResult:
    log_probs: list                   # H tensors (batch, c)
    time: Tensor | None               # (batch, 1) seconds, >= 0


class PredictorModel:
    def __init__(self, cfg: PredictorConfig, feature_dims: tuple[int, int, int], seed: int = 0):
        cfg.validate()
        scene_dim, seq_dim, last_dim = feature_dims
        if min(feature_dims) < 1:
            raise ValueError(f"feature dims must be positive, got {feature_dims}")
        self.cfg = cfg
        self.feature_dims = tuple(int(d) for d in feature_dims)
        rng = np.random.default_rng(seed)
        h = cfg.hidden
        self.scene_branch = []
        if cfg.use_scene:
            dims = [scene_dim] + [h] * cfg.fc_layers
            self.scene_branch = [DenseLayer(a, b, "relu", rng, name=f"scene{k}")
                                 for k, (a, b) in enumerate(zip(dims, dims[1:]))]
        dims = [seq_dim] + [h] * cfg.lstm_layers
        self.lstm = [LstmLayer(a, b, rng, name=f"lstm{k}") for k, (a, b) in enumerate(zip(dims, dims[1:]))]
        self.time_branch = []
        if cfg.use_time:
            dims = [last_dim] + [h] * cfg.fc_layers
            self.time_branch = [DenseLayer(a, b, "relu", rng, name=f"last{k}")
                                for k, (a, b) in enumerate(zip(dims, dims[1:]))]
        self.merge = DenseLayer(self.concat_width, h, "relu", rng, name="merge")
        self.heads = [DenseLayer(h, cfg.num_classes, "identity", rng, name=f"head{k}")
                      for k in range(cfg.horizon)]
        self.time_head = DenseLayer(h, 1, "identity", rng, name="time") if cfg.use_time else None
        self.time_mean = 0.0
        self.time_std = 1.0
        self.class_names: list[str] | None = None

    @property
    def concat_width(self) -> int:
        return self.cfg.hidden * (1 + bool(self.scene_branch) + bool(self.time_branch))

    @property
    def output_width(self) -> int:
        return self.cfg.horizon * self.cfg.num_classes + (1 if self.time_head is not None else 0)

    def layers(self) -> list:
        out = [*self.scene_branch, *self.lstm, *self.time_branch, self.merge, *self.heads]
        if self.time_head is not None:
            out.append(self.time_head)
        return out

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def _check(self, batch: Batch):
        scene_dim, seq_dim, last_dim = self.feature_dims
        W = self.cfg.window
        if batch.seq.ndim != 3 or batch.seq.shape[0] != W or batch.seq.shape[2] != seq_dim:
            raise ShapeError(f"sequence features must be ({W}, batch, {seq_dim}), got {batch.seq.shape}")
        if batch.scene.shape[1:] != (scene_dim,) or batch.last.shape[1:] != (last_dim,):
            raise ShapeError(f"scene/last feature dims {batch.scene.shape[1:]}, {batch.last.shape[1:]} "
                             f"do not match ({scene_dim},), ({last_dim},)")

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        self._check(batch)
        drop = DropoutSpec(self.cfg.dropout, "train" if train else "eval")

        def fc_stack(stack, x):
            for layer in stack:
                x = dropout_apply(drop, layer(x), rng)
            return x

        parts = []
        if self.scene_branch:
            parts.append(fc_stack(self.scene_branch, nd.Tensor(batch.scene)))
        seq_out, _ = lstm_forward_sequence(self.lstm, SequenceBatch(list(batch.seq)), dropout=drop, rng=rng)
        parts.append(seq_out)
        if self.time_branch:
            parts.append(fc_stack(self.time_branch, nd.Tensor(batch.last)))
        merged = parts[0] if len(parts) == 1 else nd.concat(parts, axis=1)
        merged = dropout_apply(drop, self.merge(merged), rng)
        log_probs = [nd.log_softmax(head(merged)) for head in self.heads]
        time = None
        if self.time_head is not None:
            z = self.time_head(merged)
            if self.cfg.standardize_time:
                z = nd.add(nd.mul(z, self.time_std), self.time_mean)
            time = nd.relu(z)
        return ForwardResult(log_probs, time)

    def predict(self, batch: Batch) -> list[PredictionOutput]:
        res = self.forward(batch, train=False)
        dists = np.stack([np.exp(lp.data) for lp in res.log_probs], axis=1)   # (batch, H, c)
        dists /= dists.sum(axis=2, keepdims=True)
        times = res.time.data[:, 0] if res.time is not None else np.zeros(dists.shape[0])
        return [PredictionOutput(d, float(t)) for d, t in zip(dists, times)]


def build_predictor(cfg: PredictorConfig, feature_dims: tuple[int, int, int], seed: int = 0) -> PredictorModel:
    return PredictorModel(cfg, feature_dims, seed)


def cross_entropy_loss(log_probs: Sequence[Tensor], targets: np.ndarray) -> Tensor:
    """Mean over heads of the batch-mean negative log-likelihood of the targets."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[1] != len(log_probs):
        raise ShapeError(f"{len(log_probs)} heads but targets have shape {targets.shape}")
    c = log_probs[0].shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"target class out of range [0, {c})")
    total = None
    for k, lp in enumerate(log_probs):
        nll = nd.reduce_mean(nd.pick(lp, targets[:, k]))
        total = nll if total is None else nd.add(total, nll)
    return nd.mul(total, -1.0 / len(log_probs))


def time_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Batch mean of squared time errors."""
    target = np.asarray(target, dtype=float).reshape(pred.shape)
    return nd.reduce_mean(nd.square(nd.sub(pred, target)))


def joint_loss(out: ForwardResult, labels: np.ndarray, times: np.ndarray | None, time_weight: float = 1.0) -> Tensor:
    if not out.log_probs or out.log_probs[0].shape[0] == 0:
        raise ValueError("empty batch")
    loss = cross_entropy_loss(out.log_probs, labels)
    if out.time is not None and times is not None and time_weight:
        loss = nd.add(loss, nd.mul(time_loss(out.time, times), time_weight))
    return loss


def batch_loss(model: PredictorModel, batch: Batch, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    out = model.forward(batch, train=train, rng=rng)
    return joint_loss(out, batch.labels, batch.times, model.cfg.time_weight)


@dataclass
class TrainResult:
    model: PredictorModel
    losses: list = field(default_factory=list)


def train_predictor(model: PredictorModel, dataset: Sequence[TrainingWindow], epochs: int,
                    batch_size: int = 128, optimizer: Optimizer | None = None, seed: int = 0,
                    lr: float = 1e-3, callback=None) -> TrainResult:
    """Minibatch training with dropout on; returns per-epoch mean training loss."""
    if not dataset:
        raise ValueError("empty training set")
    if optimizer is None:
        optimizer = make_optimizer("adam", model.parameters(), lr)
    if model.cfg.standardize_time:
        times = np.array([w.inter_time for w in dataset])
        model.time_mean = float(times.mean())
        model.time_std = float(times.std()) or 1.0
    rng = np.random.default_rng(seed)
    params = model.parameters()
    n = len(dataset)
    result = TrainResult(model)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = stack_windows([dataset[i] for i in idx])
            nd.zero_grads(params)
            loss = batch_loss(model, batch, train=True, rng=rng)
            nd.backward(loss)
            optimizer.step()
            total += loss.item() * len(idx)
        result.losses.append(total / n)
        if callback is not None:
            callback(epoch, result.losses[-1])
    return result


def predict_sequence(model: PredictorModel, windows: Sequence[TrainingWindow] | TrainingWindow):
    single = isinstance(windows, TrainingWindow)
    outs = model.predict(stack_windows([windows] if single else list(windows)))
    return outs[0] if single else outs


def top_k(dist, k: int) -> list[tuple[int, float]]:
    dist = np.asarray(dist, dtype=float)
    if not 1 <= k <= dist.size:
        raise ValueError(f"k={k} outside [1, {dist.size}]")
    # stable sort on negated probabilities keeps the lowest index first among ties
    order = np.argsort(-dist, kind="stable")[:k]
    return [(int(i), float(dist[i])) for i in order]


def unknown_gate(dist, tau: float = 0.1) -> int:
    dist = np.asarray(dist, dtype=float)
    best = int(np.argmax(dist))
    return best if dist[best] >= tau else UNKNOWN


def config_dict(cfg: PredictorConfig) -> dict:
    return asdict(cfg)
