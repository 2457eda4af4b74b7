"""Dense feed-forward networks with per-example-weighted losses, trained by Adam.

Parameters live in one flat vector with per-layer views, so the Adam update is
a handful of whole-vector numpy ops regardless of depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

LOSS_KINDS = ("squared", "hinge", "cross_entropy")
OUTPUT_KINDS = ("linear", "score", "logits")


class DivergenceError(RuntimeError):
    """Training loss became non-finite; `step` is the offending update index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite training loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths input -> hidden... -> output, sigmoid hidden activations."""

    layer_sizes: tuple[int, ...]
    output_kind: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need >= 2 positive layer sizes, got {sizes}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"output_kind must be one of {OUTPUT_KINDS}")
        if self.output_kind in ("linear", "score") and sizes[-1] != 1:
            raise ValueError(f"{self.output_kind} output requires width 1, got {sizes[-1]}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "n_params",
                           sum((i + 1) * o for i, o in zip(sizes, sizes[1:])))

    n_params: int = 0  # filled from layer_sizes


class ModelParams:
    """All weights and biases of one network, backed by a flat float64 vector.

    `weights[k]` / `biases[k]` are reshaped views into `flat`, so in-place
    updates on `flat` (the optimizer path) and per-layer reads stay coherent.
    """

    def __init__(self, arch: MlpArchitecture, flat: np.ndarray | None = None):
        self.arch = arch
        if flat is None:
            flat = np.zeros(arch.n_params)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"flat vector must have {arch.n_params} entries")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for fan_in, fan_out in zip(arch.layer_sizes, arch.layer_sizes[1:]):
            self.weights.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.biases.append(flat[off:off + fan_out])
            off += fan_out

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.flat.copy())

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 100
    loss: str = "squared"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


def default_loss_for(label_kind: str) -> str:
    """Squared for numeric targets, hinge for binary, cross-entropy for multiclass."""
    return {"numeric": "squared", "binary": "hinge", "multiclass": "cross_entropy"}[label_kind]


def output_kind_for(loss: str) -> str:
    return {"squared": "linear", "hinge": "score", "cross_entropy": "logits"}[loss]


def init_params(arch: MlpArchitecture, seed: int) -> ModelParams:
    """Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    params = ModelParams(arch)
    for w in params.weights:
        bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def forward(params: ModelParams, features: np.ndarray) -> list[np.ndarray]:
    """All post-activation layer outputs; last entry is the raw output."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.arch.layer_sizes[0]:
        raise ValueError(f"features have width {x.shape[1]}, "
                         f"architecture expects {params.arch.layer_sizes[0]}")
    acts = [x]
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if k == last else expit(z))
    return acts


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Raw (n, out) network output: regression value, binary score, or logits."""
    return forward(params, features)[-1]


def _output_grad(out: np.ndarray, labels: np.ndarray, loss_kind: str):
    """Per-example losses (n,) and dL/d(out) (n, out), unweighted."""
    if loss_kind == "squared":
        resid = out[:, 0] - labels
        return resid * resid, (2.0 * resid)[:, None]
    if loss_kind == "hinge":
        target = 2.0 * labels - 1.0  # {0,1} -> {-1,+1}
        margin = 1.0 - target * out[:, 0]
        active = margin > 0
        losses = np.where(active, margin, 0.0)
        return losses, np.where(active, -target, 0.0)[:, None]
    if loss_kind == "cross_entropy":
        shifted = out - out.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1)
        idx = np.arange(out.shape[0])
        cls = labels.astype(np.int64)
        losses = np.log(total) - shifted[idx, cls]
        grad = exp / total[:, None]
        grad[idx, cls] -= 1.0
        return losses, grad
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def loss_and_grad(params: ModelParams, features: np.ndarray, labels: np.ndarray,
                  weights: np.ndarray, loss_kind: str,
                  divisor: float | None = None) -> tuple[float, ModelParams]:
    """Weighted batch loss sum_j w_j L_j / divisor and its exact gradient.

    `divisor` defaults to the number of rows in the batch.
    """
    acts = forward(params, features)
    out = acts[-1]
    if divisor is None:
        divisor = out.shape[0]
    losses, gout = _output_grad(out, np.asarray(labels), loss_kind)
    w = np.asarray(weights, dtype=np.float64)
    loss = float(w @ losses) / divisor
    delta = gout * (w / divisor)[:, None]

    grad = ModelParams(params.arch)
    for k in range(params.n_layers - 1, -1, -1):
        a_prev = acts[k]
        np.matmul(a_prev.T, delta, out=grad.weights[k])
        np.sum(delta, axis=0, out=grad.biases[k])
        if k > 0:
            delta = (delta @ params.weights[k].T) * (acts[k] * (1.0 - acts[k]))
    return loss, grad


class _Adam:
    """Adam on a flat parameter vector, preallocated scratch buffers."""

    def __init__(self, n: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self._buf = np.empty(n)

    def update(self, flat: np.ndarray, grad: np.ndarray):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * (grad * grad)
        step = cfg.learning_rate / (1.0 - b1 ** self.t)
        np.sqrt(self.v / (1.0 - b2 ** self.t), out=self._buf)
        self._buf += cfg.adam_eps
        flat -= step * self.m / self._buf


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield without-replacement minibatch index arrays, reshuffling per epoch."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def adam_train(params: ModelParams, batch_loss_grad, cfg: TrainConfig) -> ModelParams:
    """Run cfg.steps Adam updates; `batch_loss_grad(params, idx) -> (loss, grad)`.

    Shared by the main trainer and the autoencoder. Raises DivergenceError on
    a non-finite batch loss.
    """
    rng = np.random.default_rng(cfg.seed)
    adam = _Adam(params.arch.n_params, cfg)
    batches = _epoch_batches(batch_loss_grad.n_examples, cfg.batch_size, rng)
    for step in range(cfg.steps):
        idx = next(batches)
        loss, grad = batch_loss_grad(params, idx)
        if not np.isfinite(loss):
            raise DivergenceError(step)
        adam.update(params.flat, grad.flat)
    return params


class _WeightedBatchLoss:
    """Weighted-loss objective over a fixed dataset, indexed by minibatch."""

    def __init__(self, features, labels, weights, loss_kind, divisor):
        self.features = features
        self.labels = labels
        self.weights = weights
        self.loss_kind = loss_kind
        self.divisor = divisor
        self.n_examples = features.shape[0]

    def __call__(self, params, idx):
        return loss_and_grad(params, self.features[idx], self.labels[idx],
                             self.weights[idx], self.loss_kind, divisor=self.divisor)


def train_weighted(train, weights: np.ndarray, arch: MlpArchitecture,
                   cfg: TrainConfig) -> ModelParams:
    """Minimize the example-weighted loss over `train` with Adam.

    Minibatches are drawn without replacement within each epoch and reshuffled
    between epochs; the batch loss is sum_batch w_j L_j / cfg.batch_size.
    Deterministic given cfg.seed (which also seeds the initialization).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (train.n,):
        raise ValueError(f"weights must have length {train.n}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not np.any(w > 0):
        raise ValueError("weights must not be all zero")
    if arch.layer_sizes[0] != train.n_features:
        raise ValueError("architecture input width does not match the dataset")

    params = init_params(arch, cfg.seed)
    objective = _WeightedBatchLoss(train.features, train.labels, w,
                                   cfg.loss, float(cfg.batch_size))
    return adam_train(params, objective, cfg)


# --- flat text serialization (also used for embedders) ---------------------

def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None):
    """Write named float arrays as plain text: shapes plus row-major values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("moew-arrays 1\n")
        for key, val in (meta or {}).items():
            fh.write(f"meta {key} {val}\n")
        fh.write(f"arrays {len(arrays)}\n")
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            dims = " ".join(str(s) for s in arr.shape)
            fh.write(f"{name} {arr.ndim} {dims}\n")
            fh.write(" ".join(repr(float(v)) for v in arr.ravel()) + "\n")


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().split()
        if magic[:1] != ["moew-arrays"]:
            raise ValueError(f"{path}: not a parameter file")
        meta: dict[str, str] = {}
        line = fh.readline().split()
        while line and line[0] == "meta":
            meta[line[1]] = " ".join(line[2:])
            line = fh.readline().split()
        if not line or line[0] != "arrays":
            raise ValueError(f"{path}: missing arrays header")
        count = int(line[1])
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, ndim, *dims = fh.readline().split()
            shape = tuple(int(d) for d in dims[:int(ndim)])
            vals = np.array(fh.readline().split(), dtype=np.float64)
            arrays[name] = vals.reshape(shape)
    return arrays, meta


def save_params(path, params: ModelParams, meta: dict[str, str] | None = None):
    arrays = {}
    for k in range(params.n_layers):
        arrays[f"layer{k}.w"] = params.weights[k]
        arrays[f"layer{k}.b"] = params.biases[k]
    all_meta = {"output_kind": params.arch.output_kind}
    all_meta.update(meta or {})
    save_arrays(path, arrays, all_meta)


def load_params(path) -> ModelParams:
    arrays, meta = load_arrays(path)
    sizes = []
    k = 0
    while f"layer{k}.w" in arrays:
        w = arrays[f"layer{k}.w"]
        if not sizes:
            sizes.append(w.shape[0])
        sizes.append(w.shape[1])
        k += 1
    arch = MlpArchitecture(tuple(sizes), meta.get("output_kind", "linear"))
    params = ModelParams(arch)
    for i in range(params.n_layers):
        params.weights[i][...] = arrays[f"layer{i}.w"]
        params.biases[i][...] = arrays[f"layer{i}.b"]
    return params
