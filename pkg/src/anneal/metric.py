"""Trainable metric space: shared projection head, losses, and training.

Both members of a pair pass through the SAME two-layer feedforward head
(weight sharing), so similarity is a function of the learned space, not of
which side a member happened to land on. All forward and backward passes
are written out in numpy; no autodiff framework is involved, which keeps
the gradient auditable against finite differences.

Losses
------
* similar pair (label 1):      1 - s(f1, f2)
* dissimilar pair (label 0):   max(0, s(f1, f2) - margin)
* classifier cross-entropy:    -[y log P + (1-y) log(1-P)],  P = sigmoid(logit)
* combined:                    (1-gamma) * contrastive + gamma * cross-entropy

where s is cosine similarity of the projected features.

Flat parameter layout
---------------------
Checkpoints, gradients and the optimizer all use one flat float vector.
Order (each block flattened C-order):

    head.w1 (d0, hidden)   head.b1 (hidden,)
    head.w2 (hidden, out)  head.b2 (out,)
    [if classifier present]
    cls.w1 (2*out, c1)     cls.b1 (c1,)
    cls.w2 (c1, c2)        cls.b2 (c2,)
    cls.w3 (c2, 1)         cls.b3 (1,)

The derivative of max(0, s - margin) at s == margin and of relu at 0 is
taken as 0.
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, LabeledPair

DEFAULT_HEAD_DIMS = (512, 256)
DEFAULT_CLASSIFIER_DIMS = (256, 64)


class ConfigError(ValueError):
    """Raised for invalid model or training configuration."""


@dataclass
class ZeroNormCounter:
    """Diagnostic tally of cosine evaluations that saw a zero-norm vector.

    Zero-norm features yield similarity 0 (and zero gradient) instead of an
    exception so training never aborts on a dead unit. Advisory only;
    incremented from the single training/scoring thread.
    """

    count: int = 0

    def reset(self) -> None:
        self.count = 0


zero_norm_counter = ZeroNormCounter()


@dataclass
class ProjectionHead:
    """Two-layer feedforward map d0 -> hidden -> out with relu on the hidden layer."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]


@dataclass
class BinaryClassifier:
    """Three-layer feedforward map from concatenated pair features to one logit."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]


@dataclass
class SoftmaxHead:
    """Linear layer to C class logits, used by the classification baseline."""

    w: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    learning_rate: float = 1e-4
    margin: float = 0.5
    gamma: float = 0.5
    optimizer: str = "adam"
    seed: int = 0
    oversample: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.margin <= 1.0:
            raise ConfigError(f"margin must be in [0, 1], got {self.margin}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclass
class MetricModel:
    """Current metric space: projection head plus optional pair classifier."""

    head: ProjectionHead
    classifier: BinaryClassifier | None
    train_config: TrainConfig
    init_seed: int = 0
    loss_log: tuple[tuple[int, float], ...] = ()

    @property
    def dtype(self) -> np.dtype:
        return self.head.w1.dtype


def _uniform_layer(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=d_out).astype(dtype)
    return w, b


def init_head(d0: int, dims: tuple[int, int] = DEFAULT_HEAD_DIMS, seed: int = 0,
              dtype=np.float32) -> ProjectionHead:
    rng = np.random.default_rng(seed)
    hidden, out = dims
    w1, b1 = _uniform_layer(rng, d0, hidden, dtype)
    w2, b2 = _uniform_layer(rng, hidden, out, dtype)
    return ProjectionHead(w1, b1, w2, b2)


def init_classifier(d_feat: int, dims: tuple[int, int] = DEFAULT_CLASSIFIER_DIMS,
                    seed: int = 0, dtype=np.float32) -> BinaryClassifier:
    rng = np.random.default_rng(seed)
    c1, c2 = dims
    w1, b1 = _uniform_layer(rng, 2 * d_feat, c1, dtype)
    w2, b2 = _uniform_layer(rng, c1, c2, dtype)
    w3, b3 = _uniform_layer(rng, c2, 1, dtype)
    return BinaryClassifier(w1, b1, w2, b2, w3, b3)


def init_softmax_head(d_feat: int, num_classes: int, seed: int = 0,
                      dtype=np.float32) -> SoftmaxHead:
    rng = np.random.default_rng(seed)
    w, b = _uniform_layer(rng, d_feat, num_classes, dtype)
    return SoftmaxHead(w, b)


def init_metric_model(
    d0: int,
    with_classifier: bool = False,
    seed: int = 0,
    head_dims: tuple[int, int] = DEFAULT_HEAD_DIMS,
    classifier_dims: tuple[int, int] = DEFAULT_CLASSIFIER_DIMS,
    train_config: TrainConfig | None = None,
    dtype=np.float32,
) -> MetricModel:
    """Fresh model with seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights.

    Head and classifier draw from distinct streams derived from ``seed`` so
    enabling the classifier never perturbs the head initialization.
    """
    head = init_head(d0, head_dims, seed=seed, dtype=dtype)
    classifier = None
    if with_classifier:
        classifier = init_classifier(head_dims[1], classifier_dims, seed=seed + 1, dtype=dtype)
    return MetricModel(
        head=head,
        classifier=classifier,
        train_config=train_config or TrainConfig(),
        init_seed=seed,
    )


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def head_forward(head: ProjectionHead, x: np.ndarray):
    """Project a (B, d0) batch; returns features plus the cache backprop needs."""
    z1 = x @ head.w1 + head.b1
    a1 = relu(z1)
    f = a1 @ head.w2 + head.b2
    return f, (x, z1, a1)


def project(model: MetricModel, x: np.ndarray) -> np.ndarray:
    """Map base features to the metric space. Accepts one vector or a batch."""
    x = np.asarray(x, dtype=model.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.head.d_in:
        raise ConfigError(
            f"input dimension {x.shape[1]} does not match head input {model.head.d_in}"
        )
    f, _ = head_forward(model.head, x)
    return f[0] if single else f


def classifier_forward(cls: BinaryClassifier, u: np.ndarray):
    z1 = u @ cls.w1 + cls.b1
    h1 = relu(z1)
    z2 = h1 @ cls.w2 + cls.b2
    h2 = relu(z2)
    logit = (h2 @ cls.w3).ravel() + cls.b3[0]
    return logit, (u, z1, h1, z2, h2)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cosine_similarity(f1: np.ndarray, f2: np.ndarray) -> float:
    """Cosine similarity of two feature vectors.

    A zero-norm input is defined to have similarity 0 with every vector;
    the event is tallied in :data:`zero_norm_counter` rather than raised.
    """
    f1 = np.asarray(f1, dtype=np.float64).ravel()
    f2 = np.asarray(f2, dtype=np.float64).ravel()
    n1 = np.linalg.norm(f1)
    n2 = np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        zero_norm_counter.count += 1
        return 0.0
    return float(f1 @ f2 / (n1 * n2))


def _cosine_batch(f1: np.ndarray, f2: np.ndarray):
    """Row-wise cosine of two (B, d) batches; zero-norm rows score 0."""
    n1 = np.linalg.norm(f1, axis=1)
    n2 = np.linalg.norm(f2, axis=1)
    denom = n1 * n2
    dead = denom == 0.0
    if np.any(dead):
        zero_norm_counter.count += int(dead.sum())
    safe = np.where(dead, 1.0, denom)
    s = np.einsum("ij,ij->i", f1, f2) / safe
    s = np.where(dead, 0.0, s)
    return s, n1, n2, dead


def contrastive_loss(s, y, margin: float = 0.5):
    """Pull similar pairs toward similarity 1, push dissimilar ones below the margin."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y)
    loss = np.where(y == 1, 1.0 - s, np.maximum(0.0, s - margin))
    return float(loss) if loss.ndim == 0 else loss


def bce_loss(logit, y):
    """Binary cross-entropy from the raw logit, computed in the stable softplus form."""
    logit = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    return float(loss) if loss.ndim == 0 else loss


def combined_loss(pair_loss_cl, pair_loss_bce, gamma: float):
    """Convex combination of the contrastive and cross-entropy terms."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {gamma}")
    return (1.0 - gamma) * pair_loss_cl + gamma * pair_loss_bce


# ---------------------------------------------------------------------------
# flat parameter vector
# ---------------------------------------------------------------------------

def _param_arrays(head: ProjectionHead, cls: BinaryClassifier | None) -> list[np.ndarray]:
    arrays = [head.w1, head.b1, head.w2, head.b2]
    if cls is not None:
        arrays += [cls.w1, cls.b1, cls.w2, cls.b2, cls.w3, cls.b3]
    return arrays


def param_layout(model: MetricModel) -> list[tuple[str, tuple[int, ...]]]:
    names = ["head.w1", "head.b1", "head.w2", "head.b2"]
    if model.classifier is not None:
        names += ["cls.w1", "cls.b1", "cls.w2", "cls.b2", "cls.w3", "cls.b3"]
    return [(n, a.shape) for n, a in zip(names, _param_arrays(model.head, model.classifier))]


def pack_params(model: MetricModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _param_arrays(model.head, model.classifier)])


def _views_from_flat(flat: np.ndarray, template: MetricModel):
    """Head/classifier whose arrays are views into ``flat`` (shared memory)."""
    arrays = _param_arrays(template.head, template.classifier)
    expected = sum(a.size for a in arrays)
    if flat.size != expected:
        raise ConfigError(
            f"flat vector holds {flat.size} values, model expects {expected}"
        )
    out = []
    offset = 0
    for a in arrays:
        out.append(flat[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    head = ProjectionHead(*out[:4])
    cls = BinaryClassifier(*out[4:]) if template.classifier is not None else None
    return head, cls


def set_params(model: MetricModel, flat: np.ndarray) -> MetricModel:
    """New model with parameters taken from a flat vector in the documented layout."""
    flat = np.asarray(flat, dtype=model.dtype)
    head, cls = _views_from_flat(flat.copy(), model)
    return replace(model, head=head, classifier=cls)


# ---------------------------------------------------------------------------
# loss + gradient
# ---------------------------------------------------------------------------

def _head_backward(head: ProjectionHead, cache, df: np.ndarray):
    x, z1, a1 = cache
    dw2 = a1.T @ df
    db2 = df.sum(axis=0)
    da1 = df @ head.w2.T
    dz1 = da1 * (z1 > 0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return dw1, db1, dw2, db2


def _classifier_backward(cls: BinaryClassifier, cache, dlogit: np.ndarray):
    u, z1, h1, z2, h2 = cache
    dcol = dlogit[:, None]
    dw3 = h2.T @ dcol
    db3 = np.array([dlogit.sum()], dtype=dlogit.dtype)
    dh2 = dcol @ cls.w3.T
    dz2 = dh2 * (z2 > 0)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ cls.w2.T
    dz1 = dh1 * (z1 > 0)
    dw1 = u.T @ dz1
    db1 = dz1.sum(axis=0)
    du = dz1 @ cls.w1.T
    return (dw1, db1, dw2, db2, dw3, db3), du


def _loss_and_grad(
    head: ProjectionHead,
    cls: BinaryClassifier | None,
    x1: np.ndarray,
    x2: np.ndarray,
    y: np.ndarray,
    margin: float,
    gamma: float,
):
    """Mean loss over the minibatch and its gradient in the flat layout.

    x1 holds the canonically-first pair member, so the classifier always sees
    each pair in the same orientation.
    """
    n = x1.shape[0]
    f1, cache1 = head_forward(head, x1)
    f2, cache2 = head_forward(head, x2)
    s, n1, n2, dead = _cosine_batch(f1, f2)

    l_cl = contrastive_loss(s, y, margin)
    # d(contrastive)/ds; the hinge derivative at s == margin is taken as 0
    dl_ds = np.where(y == 1, -1.0, (s > margin).astype(np.float64))

    use_bce = cls is not None and gamma > 0.0
    if cls is not None:
        u = np.concatenate([f1, f2], axis=1)
        logit, ccache = classifier_forward(cls, u)
        l_bce = bce_loss(logit, y)
    else:
        l_bce = np.zeros(n)
    eff_gamma = gamma if cls is not None else 0.0
    loss = float(np.mean(combined_loss(l_cl, l_bce, eff_gamma)))

    # cosine backward, masked where a zero norm made s (and its grad) flat
    coef = ((1.0 - eff_gamma) / n) * dl_ds
    coef = np.where(dead, 0.0, coef)
    safe1 = np.where(dead, 1.0, n1)
    safe2 = np.where(dead, 1.0, n2)
    inv = 1.0 / (safe1 * safe2)
    df1 = coef[:, None] * (f2 * inv[:, None] - f1 * (s / safe1**2)[:, None])
    df2 = coef[:, None] * (f1 * inv[:, None] - f2 * (s / safe2**2)[:, None])

    cls_grads = None
    if use_bce:
        p = sigmoid(logit)
        dlogit = (eff_gamma / n) * (p - y)
        cls_grads, du = _classifier_backward(cls, ccache, dlogit.astype(u.dtype))
        d_out = f1.shape[1]
        df1 = df1 + du[:, :d_out]
        df2 = df2 + du[:, d_out:]
    elif cls is not None:
        zero = [np.zeros_like(a) for a in (cls.w1, cls.b1, cls.w2, cls.b2, cls.w3, cls.b3)]
        cls_grads = tuple(zero)

    dtype = head.w1.dtype
    g1 = _head_backward(head, cache1, df1.astype(dtype))
    g2 = _head_backward(head, cache2, df2.astype(dtype))
    head_grads = [a + b for a, b in zip(g1, g2)]  # shared weights: contributions add

    pieces = head_grads if cls_grads is None else head_grads + list(cls_grads)
    grad = np.concatenate([p.ravel() for p in pieces]).astype(dtype)
    return loss, grad


def pairs_minibatch(dataset: Dataset, pairs: Sequence[LabeledPair]):
    """Base-feature arrays (x1, x2, y) for labeled pairs, canonical member first."""
    n = len(pairs)
    x1 = np.empty((n, dataset.d0), dtype=dataset.features.dtype)
    x2 = np.empty_like(x1)
    y = np.empty(n, dtype=np.int64)
    for r, p in enumerate(pairs):
        x1[r] = dataset.features[dataset.index_of[p.key.lo]]
        x2[r] = dataset.features[dataset.index_of[p.key.hi]]
        y[r] = p.label
    return x1, x2, y


def loss_gradient(
    model: MetricModel,
    x1: np.ndarray,
    x2: np.ndarray,
    y: np.ndarray,
    margin: float | None = None,
    gamma: float | None = None,
) -> tuple[float, np.ndarray]:
    """Mean minibatch loss and its flat gradient. Exposed for gradient audits."""
    if len(x1) == 0:
        raise ConfigError("minibatch must be non-empty")
    cfg = model.train_config
    x1 = np.asarray(x1, dtype=model.dtype)
    x2 = np.asarray(x2, dtype=model.dtype)
    y = np.asarray(y)
    return _loss_and_grad(
        model.head,
        model.classifier,
        x1,
        x2,
        y,
        cfg.margin if margin is None else margin,
        cfg.gamma if gamma is None else gamma,
    )


def minibatch_loss(
    model: MetricModel,
    x1: np.ndarray,
    x2: np.ndarray,
    y: np.ndarray,
    margin: float | None = None,
    gamma: float | None = None,
) -> float:
    """Mean minibatch loss only; the probe finite-difference audits call."""
    cfg = model.train_config
    margin = cfg.margin if margin is None else margin
    gamma = cfg.gamma if gamma is None else gamma
    f1, _ = head_forward(model.head, np.asarray(x1, dtype=model.dtype))
    f2, _ = head_forward(model.head, np.asarray(x2, dtype=model.dtype))
    s, _, _, _ = _cosine_batch(f1, f2)
    l_cl = contrastive_loss(s, np.asarray(y), margin)
    if model.classifier is not None:
        u = np.concatenate([f1, f2], axis=1)
        logit, _ = classifier_forward(model.classifier, u)
        l_bce = bce_loss(logit, y)
        return float(np.mean(combined_loss(l_cl, l_bce, gamma)))
    return float(np.mean(l_cl))


# ---------------------------------------------------------------------------
# optimizers and the training loop
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, size: int, lr: float, dtype):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        flat -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(flat.dtype)


class _Sgd:
    def __init__(self, size: int, lr: float, dtype):
        self.lr = lr

    def step(self, flat: np.ndarray, grad: np.ndarray) -> None:
        flat -= (self.lr * grad).astype(flat.dtype)


def _epoch_stream(y: np.ndarray, oversample: bool, rng: np.random.Generator) -> np.ndarray:
    """Shuffled pair indices for one epoch, minority class resampled to parity."""
    n = len(y)
    if oversample:
        idx1 = np.flatnonzero(y == 1)
        idx0 = np.flatnonzero(y == 0)
        if len(idx1) and len(idx0) and len(idx1) != len(idx0):
            minority, majority = (idx1, idx0) if len(idx1) < len(idx0) else (idx0, idx1)
            resampled = rng.choice(minority, size=len(majority), replace=True)
            return rng.permutation(np.concatenate([majority, resampled]))
    return rng.permutation(n)


def train(
    model: MetricModel,
    pairs: Sequence[LabeledPair],
    dataset: Dataset,
    config: TrainConfig | None = None,
) -> MetricModel:
    """Gradient-descent training on labeled pairs; returns a new trained model.

    Deterministic for a fixed config seed: the epoch streams, batching and
    updates replay identically. The input model is not mutated. Per-epoch
    mean losses are recorded on the returned model's ``loss_log``.
    """
    cfg = config or model.train_config
    if not pairs:
        raise ConfigError("cannot train on an empty pair set")
    x1, x2, y = pairs_minibatch(dataset, pairs)
    n_sim = int((y == 1).sum())
    n_dis = len(y) - n_sim
    if model.classifier is not None and (n_sim == 0 or n_dis == 0):
        warnings.warn(
            f"classifier training with one-sided labels ({n_sim} similar, "
            f"{n_dis} dissimilar): cross-entropy is degenerate",
            stacklevel=2,
        )
    elif model.classifier is None and (n_sim == 0 or n_dis == 0):
        warnings.warn(
            f"training on one-sided labels ({n_sim} similar, {n_dis} dissimilar)",
            stacklevel=2,
        )

    x1 = x1.astype(model.dtype)
    x2 = x2.astype(model.dtype)
    flat = pack_params(model)
    head, cls = _views_from_flat(flat, model)
    opt_cls = _Adam if cfg.optimizer == "adam" else _Sgd
    opt = opt_cls(flat.size, cfg.learning_rate, flat.dtype)
    rng = np.random.default_rng(cfg.seed)

    log = []
    for epoch in range(cfg.epochs):
        stream = _epoch_stream(y, cfg.oversample, rng)
        total = 0.0
        for start in range(0, len(stream), cfg.batch_size):
            batch = stream[start : start + cfg.batch_size]
            loss, grad = _loss_and_grad(
                head, cls, x1[batch], x2[batch], y[batch], cfg.margin, cfg.gamma
            )
            opt.step(flat, grad)
            total += loss * len(batch)
        log.append((epoch, total / len(stream)))

    trained_head, trained_cls = _views_from_flat(flat.copy(), model)
    return replace(
        model,
        head=trained_head,
        classifier=trained_cls,
        train_config=cfg,
        loss_log=tuple(log),
    )


# ---------------------------------------------------------------------------
# classification baseline: head + softmax trained with cross-entropy
# ---------------------------------------------------------------------------

def class_posteriors(head: ProjectionHead, softmax: SoftmaxHead, x: np.ndarray) -> np.ndarray:
    """(B, C) class posteriors for base features, via the projection head."""
    f, _ = head_forward(head, np.asarray(x, dtype=head.w1.dtype))
    logits = (f @ softmax.w + softmax.b).astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def train_classifier_head(
    head: ProjectionHead,
    softmax: SoftmaxHead,
    x: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> tuple[ProjectionHead, SoftmaxHead, tuple[tuple[int, float], ...]]:
    """Joint cross-entropy training of projection head and softmax layer."""
    if len(x) == 0:
        raise ConfigError("cannot train on an empty item set")
    dtype = head.w1.dtype
    x = np.asarray(x, dtype=dtype)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = softmax.w.shape[1]

    arrays = [head.w1, head.b1, head.w2, head.b2, softmax.w, softmax.b]
    flat = np.concatenate([a.ravel() for a in arrays])
    views, offset = [], 0
    for a in arrays:
        views.append(flat[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    h = ProjectionHead(*views[:4])
    sm = SoftmaxHead(*views[4:])

    opt_cls = _Adam if config.optimizer == "adam" else _Sgd
    opt = opt_cls(flat.size, config.learning_rate, flat.dtype)
    rng = np.random.default_rng(config.seed)

    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = x[batch], labels[batch]
            f, cache = head_forward(h, xb)
            logits = (f @ sm.w + sm.b).astype(np.float64)
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            p = e / e.sum(axis=1, keepdims=True)
            loss = float(-np.mean(np.log(p[np.arange(len(yb)), yb] + 1e-300)))
            dlogits = p.copy()
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            dlogits = dlogits.astype(dtype)
            dw = f.T @ dlogits
            db = dlogits.sum(axis=0)
            df = dlogits @ sm.w.T
            dw1, db1, dw2, db2 = _head_backward(h, cache, df)
            grad = np.concatenate([g.ravel() for g in (dw1, db1, dw2, db2, dw, db)])
            opt.step(flat, grad.astype(flat.dtype))
            total += loss * len(batch)
        log.append((epoch, total / len(order)))

    done = flat.copy()
    views, offset = [], 0
    for a in arrays:
        views.append(done[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    return ProjectionHead(*views[:4]), SoftmaxHead(*views[4:]), tuple(log)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def model_to_doc(model: MetricModel) -> dict:
    """JSON-ready form of the model: config header plus base64 flat parameters."""
    flat = pack_params(model)
    return {
        "version": 1,
        "dtype": str(np.dtype(model.dtype)),
        "d0": model.head.d_in,
        "head_dims": [model.head.w1.shape[1], model.head.w2.shape[1]],
        "classifier_dims": (
            [model.classifier.w1.shape[1], model.classifier.w2.shape[1]]
            if model.classifier is not None
            else None
        ),
        "init_seed": model.init_seed,
        "train_config": {
            "epochs": model.train_config.epochs,
            "batch_size": model.train_config.batch_size,
            "learning_rate": model.train_config.learning_rate,
            "margin": model.train_config.margin,
            "gamma": model.train_config.gamma,
            "optimizer": model.train_config.optimizer,
            "seed": model.train_config.seed,
            "oversample": model.train_config.oversample,
        },
        "loss_log": [[e, l] for e, l in model.loss_log],
        "params_b64": base64.b64encode(flat.tobytes()).decode("ascii"),
    }


def model_from_doc(doc: dict) -> MetricModel:
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')!r}")
    dtype = np.dtype(doc["dtype"])
    model = init_metric_model(
        d0=doc["d0"],
        with_classifier=doc["classifier_dims"] is not None,
        seed=doc["init_seed"],
        head_dims=tuple(doc["head_dims"]),
        classifier_dims=tuple(doc["classifier_dims"] or DEFAULT_CLASSIFIER_DIMS),
        train_config=TrainConfig(**doc["train_config"]),
        dtype=dtype,
    )
    flat = np.frombuffer(base64.b64decode(doc["params_b64"]), dtype=dtype)
    model = set_params(model, flat)
    return replace(model, loss_log=tuple((int(e), float(l)) for e, l in doc["loss_log"]))


def save_checkpoint(model: MetricModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_doc(model), sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> MetricModel:
    return model_from_doc(json.loads(Path(path).read_text()))
