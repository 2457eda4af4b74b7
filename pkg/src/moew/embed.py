"""Low-dimensional embeddings of (features, label) pairs for the weighting function.

The main route is a sigmoid autoencoder over the concatenated (x, y-encoding)
whose middle layer is the embedding; a label-passthrough variant uses the
centered one-hot class label directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .nn import (MlpArchitecture, ModelParams, TrainConfig, adam_train,
                 init_params, load_arrays, save_arrays, forward)

LABEL_KINDS = ("numeric", "binary", "multiclass")


def encode_labels(labels: np.ndarray, label_kind: str, n_classes: int | None = None) -> np.ndarray:
    """Label block of the autoencoder input: raw real, +-1, or one-hot."""
    labels = np.asarray(labels)
    if label_kind == "numeric":
        return labels.astype(np.float64)[:, None]
    if label_kind == "binary":
        return (2.0 * labels - 1.0)[:, None]
    if label_kind == "multiclass":
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        onehot = np.zeros((labels.shape[0], n_classes))
        onehot[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
        return onehot
    raise ValueError(f"label_kind must be one of {LABEL_KINDS}")


def label_width(label_kind: str, n_classes: int | None = None) -> int:
    return 1 if label_kind in ("numeric", "binary") else int(n_classes)


@dataclass(frozen=True)
class AutoencoderConfig:
    """Symmetric stack (in, hidden..., d, hidden..., in); the middle width is
    the embedding dimension. `feature_loss_weight` mixes feature against label
    reconstruction loss (features get feature_loss_weight, label the rest)."""

    layer_sizes: tuple[int, ...]
    label_kind: str = "binary"
    feature_loss_weight: float = 0.5
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3 or len(sizes) % 2 == 0:
            raise ValueError("layer_sizes must be an odd-length stack with a middle layer")
        if sizes != sizes[::-1]:
            raise ValueError(f"layer_sizes must be symmetric, got {sizes}")
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")
        if not 0.0 <= self.feature_loss_weight <= 1.0:
            raise ValueError("feature_loss_weight must be in [0, 1]")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def dim(self) -> int:
        return self.layer_sizes[len(self.layer_sizes) // 2]


class _ReconstructionObjective:
    """Mixed feature/label reconstruction loss on minibatches of the train set."""

    def __init__(self, inputs, x_targets, y_targets, label_kind, mix, divisor):
        self.inputs = inputs
        self.x_targets = x_targets
        self.y_targets = y_targets
        self.label_kind = label_kind
        self.mix = mix
        self.divisor = divisor
        self.n_examples = inputs.shape[0]

    def __call__(self, params: ModelParams, idx):
        acts = forward(params, self.inputs[idx])
        out = acts[-1]
        d_x = self.x_targets.shape[1]
        mix = self.mix

        resid = out[:, :d_x] - self.x_targets[idx]
        x_losses = (resid * resid).sum(axis=1)
        gout = np.empty_like(out)
        gout[:, :d_x] = (2.0 * mix) * resid

        y_out = out[:, d_x:]
        y_tgt = self.y_targets[idx]
        if self.label_kind == "numeric":
            y_resid = y_out[:, 0] - y_tgt
            y_losses = y_resid * y_resid
            gout[:, d_x] = (1.0 - mix) * 2.0 * y_resid
        elif self.label_kind == "binary":
            target = 2.0 * y_tgt - 1.0
            margin = 1.0 - target * y_out[:, 0]
            active = margin > 0
            y_losses = np.where(active, margin, 0.0)
            gout[:, d_x] = (1.0 - mix) * np.where(active, -target, 0.0)
        else:  # multiclass cross-entropy
            shifted = y_out - y_out.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            total = exp.sum(axis=1)
            rows = np.arange(y_out.shape[0])
            cls = y_tgt.astype(np.int64)
            y_losses = np.log(total) - shifted[rows, cls]
            g = exp / total[:, None]
            g[rows, cls] -= 1.0
            gout[:, d_x:] = (1.0 - mix) * g

        loss = float(np.sum(mix * x_losses + (1.0 - mix) * y_losses)) / self.divisor
        delta = gout / self.divisor
        grad = ModelParams(params.arch)
        for k in range(params.n_layers - 1, -1, -1):
            np.matmul(acts[k].T, delta, out=grad.weights[k])
            np.sum(delta, axis=0, out=grad.biases[k])
            if k > 0:
                delta = (delta @ params.weights[k].T) * (acts[k] * (1.0 - acts[k]))
        return loss, grad


@dataclass
class AutoencoderEmbedder:
    """Trained encoder half of the autoencoder plus train-set centering offsets.

    Every encoder layer (including the middle) is sigmoid, so raw coordinates
    lie in (0, 1) and centered ones in (-1, 1).
    """

    enc_weights: list[np.ndarray]
    enc_biases: list[np.ndarray]
    offsets: np.ndarray
    label_kind: str
    n_classes: int | None = None

    @property
    def dim(self) -> int:
        return self.offsets.shape[0]

    def embed_raw(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        u = np.hstack([np.asarray(features, dtype=np.float64),
                       encode_labels(labels, self.label_kind, self.n_classes)])
        for w, b in zip(self.enc_weights, self.enc_biases):
            u = expit(u @ w + b)
        return u

    def embed(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.embed_raw(features, labels) - self.offsets

    def to_arrays(self):
        arrays = {"offsets": self.offsets}
        for k, (w, b) in enumerate(zip(self.enc_weights, self.enc_biases)):
            arrays[f"enc{k}.w"] = w
            arrays[f"enc{k}.b"] = b
        meta = {"kind": "autoencoder", "label_kind": self.label_kind,
                "n_classes": str(self.n_classes if self.n_classes is not None else -1)}
        return arrays, meta


@dataclass
class LabelPassthroughEmbedder:
    """One-hot class label centered by train-set class frequencies."""

    class_freqs: np.ndarray

    @property
    def dim(self) -> int:
        return self.class_freqs.shape[0]

    def embed(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        onehot = np.zeros((labels.shape[0], self.dim))
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        return onehot - self.class_freqs

    def to_arrays(self):
        return {"class_freqs": self.class_freqs}, {"kind": "label_passthrough"}


def train_autoencoder(train, cfg: AutoencoderConfig) -> AutoencoderEmbedder:
    """Fit the autoencoder on the train split and return the centered embedder."""
    if train.n < 1:
        raise ValueError("train split is empty")
    n_classes = train.n_classes if cfg.label_kind == "multiclass" else None
    y_enc = encode_labels(train.labels, cfg.label_kind, n_classes)
    inputs = np.hstack([train.features, y_enc])
    if cfg.layer_sizes[0] != inputs.shape[1]:
        raise ValueError(f"autoencoder input width {cfg.layer_sizes[0]} != "
                         f"features + label encoding width {inputs.shape[1]}")
    objective = _ReconstructionObjective(inputs, train.features, train.labels,
                                         cfg.label_kind, cfg.feature_loss_weight,
                                         float(cfg.train.batch_size))
    arch = MlpArchitecture(cfg.layer_sizes, output_kind="logits")
    params = adam_train(init_params(arch, cfg.train.seed), objective, cfg.train)

    middle = len(cfg.layer_sizes) // 2
    embedder = AutoencoderEmbedder(
        enc_weights=[params.weights[k].copy() for k in range(middle)],
        enc_biases=[params.biases[k].copy() for k in range(middle)],
        offsets=np.zeros(cfg.dim),
        label_kind=cfg.label_kind,
        n_classes=n_classes,
    )
    embedder.offsets = embedder.embed_raw(train.features, train.labels).mean(axis=0)
    return embedder


def label_passthrough_embedder(train_labels: np.ndarray,
                               n_classes: int | None = None) -> LabelPassthroughEmbedder:
    labels = np.asarray(train_labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    freqs = np.bincount(labels, minlength=n_classes).astype(np.float64) / labels.shape[0]
    return LabelPassthroughEmbedder(class_freqs=freqs)


def embed(embedder, features: np.ndarray, label) -> np.ndarray:
    """Embed a single (feature vector, label) pair; returns a d-vector."""
    feats = np.asarray(features, dtype=np.float64)
    return embedder.embed(feats[None, :], np.asarray([label]))[0]


def embed_dataset(embedder, ds) -> np.ndarray:
    return embedder.embed(ds.features, ds.labels)


def save_embedder(path, embedder):
    arrays, meta = embedder.to_arrays()
    save_arrays(path, arrays, meta)


def load_embedder(path):
    arrays, meta = load_arrays(path)
    if meta["kind"] == "label_passthrough":
        return LabelPassthroughEmbedder(class_freqs=arrays["class_freqs"])
    weights, biases = [], []
    k = 0
    while f"enc{k}.w" in arrays:
        weights.append(arrays[f"enc{k}.w"])
        biases.append(arrays[f"enc{k}.b"])
        k += 1
    n_classes = int(meta["n_classes"])
    return AutoencoderEmbedder(
        enc_weights=weights, enc_biases=biases, offsets=arrays["offsets"],
        label_kind=meta["label_kind"],
        n_classes=None if n_classes < 0 else n_classes,
    )
