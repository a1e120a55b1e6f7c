"""Dense feed-forward networks in plain numpy.

Weights are stored output-major (``W.shape == (output_dim, input_dim)``) so a
layer computes ``z = x @ W.T + b``. Every function accepts either a single
sample (1-D) or a batch (2-D, one sample per row) and returns the same rank.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._config import from_dict, to_dict
from .errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    ShapeError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "linear", "softmax")
NETWORK_FORMAT = "genesig.network"
NETWORK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"
    dropout_after: float = 0.0

    def __post_init__(self):
        if int(self.input_dim) < 1 or int(self.output_dim) < 1:
            raise ConfigError(f"layer dims must be positive, got {self.input_dim}->{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_after < 1.0:
            raise ConfigError(f"dropout_after must be in [0, 1), got {self.dropout_after}")


def validate_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigError("a network needs at least one layer")
    for i, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.output_dim != b.input_dim:
            raise ShapeError(f"layer {i} outputs {a.output_dim} values but layer {i + 1} expects {b.input_dim}")
    for i, s in enumerate(specs[:-1]):
        if s.activation == "softmax":
            raise ConfigError(f"softmax is only allowed on the final layer (found on layer {i})")
    if specs[-1].dropout_after:
        raise ConfigError("dropout after the output layer is not supported")


def chain_specs(dims: Sequence[int], hidden_activation="relu", output_activation="softmax",
                dropout=0.0, dropout_layers=None) -> list[LayerSpec]:
    """Build specs for ``dims[0] -> dims[1] -> ... -> dims[-1]``.

    ``dropout`` is placed after every hidden layer unless ``dropout_layers``
    names the hidden-layer indices that get it.
    """
    n = len(dims) - 1
    specs = []
    for i in range(n):
        last = i == n - 1
        use_dropout = not last and (dropout_layers is None or i in dropout_layers)
        specs.append(LayerSpec(
            int(dims[i]), int(dims[i + 1]),
            output_activation if last else hidden_activation,
            dropout if use_dropout else 0.0,
        ))
    return specs


class Layer(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray
    spec: LayerSpec


@dataclass(frozen=True)
class DenseNetwork:
    layers: tuple[Layer, ...]
    rng_seed: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        layers = tuple(Layer(*layer) for layer in self.layers)
        validate_specs([layer.spec for layer in layers])
        frozen = []
        for i, (w, b, spec) in enumerate(layers):
            w = np.array(w, dtype=float)
            b = np.array(b, dtype=float)
            if w.shape != (spec.output_dim, spec.input_dim) or b.shape != (spec.output_dim,):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} inconsistent with "
                    f"{spec.input_dim}->{spec.output_dim}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {i} has non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            frozen.append(Layer(w, b, spec))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.output_dim

    @property
    def final_activation(self) -> str:
        return self.layers[-1].spec.activation

    def with_metadata(self, **meta) -> "DenseNetwork":
        merged = dict(self.metadata)
        merged.update(meta)
        return DenseNetwork(self.layers, self.rng_seed, merged)

    def equals(self, other: "DenseNetwork") -> bool:
        """Bit-level parameter equality."""
        if self.specs != other.specs:
            return False
        return all(np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
                   for a, b in zip(self.layers, other.layers))


def init_network(specs: Sequence[LayerSpec], seed: int = 0) -> DenseNetwork:
    """He-style uniform init scaled by fan-in; biases start at zero."""
    specs = list(specs)
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for s in specs:
        limit = math.sqrt(6.0 / s.input_dim)
        w = rng.uniform(-limit, limit, size=(s.output_dim, s.input_dim))
        layers.append(Layer(w, np.zeros(s.output_dim), s))
    return DenseNetwork(tuple(layers), rng_seed=seed)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_batch(x, input_dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != input_dim:
        raise ShapeError(f"expected input of length {input_dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("input contains non-finite values")
    return arr, single


class _Step(NamedTuple):
    a_in: np.ndarray
    z: np.ndarray
    mask: np.ndarray | None


def _forward(layers, X, train=False, rng=None):
    """Run the stack; return (scores, cache).

    ``scores`` is the final layer's output with any softmax left off, i.e.
    the logits for a softmax head.
    """
    a = X
    cache = []
    for w, b, spec in layers:
        z = a @ w.T + b
        if spec.activation == "relu":
            out = np.maximum(z, 0.0)
        else:
            out = z
        mask = None
        if train and spec.dropout_after > 0:
            keep = 1.0 - spec.dropout_after
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        cache.append(_Step(a, z, mask))
        a = out
    return a, cache


def _backward(layers, cache, grad_scores, guided=False, need_params=False):
    """Reverse pass from d(objective)/d(scores).

    Returns (input gradient, per-layer (dW, db) list or None). With
    ``guided`` each ReLU also zeroes negative incoming signals.
    """
    g = grad_scores
    grads = [None] * len(layers) if need_params else None
    for i in range(len(layers) - 1, -1, -1):
        w, _, spec = layers[i]
        step = cache[i]
        if step.mask is not None:
            g = g * step.mask
        if spec.activation == "relu":
            gate = step.z > 0
            if guided:
                gate = gate & (g >= 0)
            g = g * gate
        if need_params:
            grads[i] = (g.T @ step.a_in, g.sum(axis=0))
        g = g @ w
    return g, grads


def forward(network: DenseNetwork, x, mode: str = "infer", rng=None) -> np.ndarray:
    """Class scores, or probabilities when the head is softmax.

    In ``train`` mode dropout masks are drawn from ``rng`` (a numpy
    Generator; defaults to one seeded from the network).
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    X, single = _as_batch(x, network.input_dim)
    if mode == "train" and rng is None:
        rng = np.random.default_rng(network.rng_seed)
    scores, _ = _forward(network.layers, X, train=mode == "train", rng=rng)
    out = softmax(scores) if network.final_activation == "softmax" else scores
    return out[0] if single else out


def logits(network: DenseNetwork, x) -> np.ndarray:
    """Inference-mode scores with the softmax stripped."""
    X, single = _as_batch(x, network.input_dim)
    scores, _ = _forward(network.layers, X)
    return scores[0] if single else scores


def predict(network: DenseNetwork, x) -> np.ndarray:
    return np.argmax(logits(network, x), axis=-1)


def _targets(target_class, n: int, n_out: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(target_class), (n,)).astype(int)
    if np.any(t < 0) or np.any(t >= n_out):
        bad = t[(t < 0) | (t >= n_out)][0]
        raise IndexError(f"target class {bad} out of range for {n_out} outputs")
    return t


def score_gradient(network, X, targets, score_kind="logit", guided=False):
    """Batch gradient of the chosen score w.r.t. inputs (no validation)."""
    scores, cache = _forward(network.layers, X)
    onehot = np.zeros_like(scores)
    onehot[np.arange(len(X)), targets] = 1.0
    if score_kind == "logit" or network.final_activation != "softmax":
        seed_grad = onehot
    elif score_kind == "probability":
        p = softmax(scores)
        pc = p[np.arange(len(X)), targets][:, None]
        seed_grad = pc * (onehot - p)
    else:
        raise ConfigError(f"score_kind must be 'logit' or 'probability', got {score_kind!r}")
    g, _ = _backward(network.layers, cache, seed_grad, guided=guided)
    return g


def input_gradient(network: DenseNetwork, x, target_class, score_kind: str = "logit") -> np.ndarray:
    """d score[target_class] / d input, dropout disabled.

    ``score_kind="logit"`` differentiates the pre-softmax score;
    ``"probability"`` differentiates the softmax output.
    """
    X, single = _as_batch(x, network.input_dim)
    t = _targets(target_class, len(X), network.output_dim)
    g = score_gradient(network, X, t, score_kind)
    return g[0] if single else g


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "cross_entropy"
    seed: int = 0
    early_stop_patience: int | None = None
    freeze_init: bool = False

    def __post_init__(self):
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be >= 0")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.early_stop_patience is not None and int(self.early_stop_patience) < 1:
            raise ConfigError("early_stop_patience must be >= 1")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "TrainingConfig":
        return from_dict(cls, data)


@dataclass
class TrainReport:
    losses: list[float]
    train_accuracy: float | None
    epochs_run: int
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "losses": [float(v) for v in self.losses],
            "train_accuracy": self.train_accuracy,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
        }


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _make_optimizer(cfg, params):
    if cfg.optimizer == "adam":
        return _Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return _SGD(params, cfg.learning_rate)


def _cross_entropy(scores, y):
    logp = log_softmax(scores)
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    return loss, delta / n


def _mse(out, target):
    diff = out - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _fit(layers, X, target, loss_fn, epochs, batch_size, optimizer_factory,
         rng, trainable, patience=None):
    """Minibatch loop shared by classifier and autoencoder training.

    ``layers`` holds mutable (W, b, spec) triples updated in place.
    """
    n = len(X)
    params, index = [], []
    for i, (w, b, _) in enumerate(layers):
        if trainable[i]:
            params += [w, b]
            index.append(i)
    opt = optimizer_factory(params)
    losses = []
    best, since_best = math.inf, 0
    stopped = False
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            scores, cache = _forward(layers, X[idx], train=True, rng=rng)
            loss, delta = loss_fn(scores, target[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            total += loss * len(idx)
            _, grads = _backward(layers, cache, delta, need_params=True)
            opt.step(params, [g for i in index for g in grads[i]])
        epoch_loss = total / n
        losses.append(epoch_loss)
        logger.debug("epoch %d loss %.6f", epoch, epoch_loss)
        if patience is not None:
            if epoch_loss < best:
                best, since_best = epoch_loss, 0
            else:
                since_best += 1
                if since_best >= patience:
                    stopped = True
                    break
    return losses, stopped


def _values(X):
    return np.asarray(getattr(X, "values", X), dtype=float)


def _labels(y):
    return np.asarray(getattr(y, "labels", y), dtype=int)


def train_classifier(specs: Sequence[LayerSpec], X, y, cfg: TrainingConfig | None = None,
                     init=None) -> tuple[DenseNetwork, TrainReport]:
    """Train a softmax classifier with cross-entropy.

    ``init`` optionally supplies (weight, bias) pairs for the leading layers,
    typically an autoencoder's encoder. With ``cfg.freeze_init`` those layers
    are held fixed; otherwise they are fine-tuned with the rest.
    """
    cfg = cfg or TrainingConfig()
    specs = list(specs)
    validate_specs(specs)
    Xv, yv = _values(X), _labels(y)
    if Xv.ndim != 2 or Xv.shape[0] != yv.shape[0]:
        raise ShapeError(f"X has {Xv.shape[0]} rows but y has {yv.shape[0]} labels")
    if Xv.shape[1] != specs[0].input_dim:
        raise ShapeError(f"X has {Xv.shape[1]} columns, network expects {specs[0].input_dim}")
    if not np.all(np.isfinite(Xv)):
        raise DomainError("training data contains non-finite values")
    n_classes = specs[-1].output_dim
    if yv.size and (yv.min() < 0 or yv.max() >= n_classes):
        raise ConfigError(f"labels must lie in 0..{n_classes - 1}")
    if specs[-1].activation == "relu":
        raise ConfigError("classifier output layer must be softmax or linear")
    if cfg.epochs > 0 and cfg.batch_size > len(Xv):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {len(Xv)}")

    start = init_network(specs, seed=cfg.seed)
    layers = [[np.array(w), np.array(b), s] for w, b, s in start.layers]
    trainable = [True] * len(layers)
    if init is not None:
        init = list(init)
        if len(init) > len(layers):
            raise ShapeError("init supplies more layers than the network has")
        for i, pair in enumerate(init):
            w, b = (np.asarray(pair[0], dtype=float), np.asarray(pair[1], dtype=float))
            if w.shape != layers[i][0].shape or b.shape != layers[i][1].shape:
                raise ShapeError(f"init layer {i} has shape {w.shape}, expected {layers[i][0].shape}")
            layers[i][0], layers[i][1] = w.copy(), b.copy()
            trainable[i] = not cfg.freeze_init

    rng = np.random.default_rng([cfg.seed, 1])
    losses, stopped = _fit(layers, Xv, yv, _cross_entropy, cfg.epochs, cfg.batch_size,
                           lambda p: _make_optimizer(cfg, p), rng, trainable,
                           cfg.early_stop_patience)
    net = DenseNetwork(tuple(Layer(*layer) for layer in layers), rng_seed=cfg.seed)
    acc = float(np.mean(predict(net, Xv) == yv)) if len(Xv) else None
    return net, TrainReport(losses, acc, len(losses), stopped)


# --------------------------------------------------------------------------
# autoencoder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AutoencoderConfig:
    encoder_dims: tuple[int, ...] = (500, 128)
    activation: str = "relu"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.encoder_dims)
        object.__setattr__(self, "encoder_dims", dims)
        if not dims or min(dims) < 1:
            raise ConfigError("encoder_dims must be a nonempty list of positive integers")
        if self.activation not in ("relu", "linear"):
            raise ConfigError(f"autoencoder activation must be relu or linear, got {self.activation!r}")
        if int(self.epochs) < 0 or int(self.batch_size) < 1 or not self.learning_rate > 0:
            raise ConfigError("invalid autoencoder epochs/batch_size/learning_rate")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "AutoencoderConfig":
        return from_dict(cls, data)


@dataclass
class Autoencoder:
    encoder: tuple[Layer, ...]
    decoder: tuple[Layer, ...]
    losses: list[float]
    initial_mse: float
    final_mse: float
    baseline_mse: float

    @property
    def code_dim(self) -> int:
        return self.encoder[-1].spec.output_dim

    @property
    def init(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) pairs for ``train_classifier(init=...)``."""
        return [(layer.weight.copy(), layer.bias.copy()) for layer in self.encoder]

    def encode(self, X) -> np.ndarray:
        out, _ = _forward(self.encoder, np.asarray(X, dtype=float))
        return out

    def reconstruct(self, X) -> np.ndarray:
        out, _ = _forward(self.encoder + self.decoder, np.asarray(X, dtype=float))
        return out


def pretrain_autoencoder(cfg: AutoencoderConfig, X) -> Autoencoder:
    """Fit a mirrored autoencoder by minimising reconstruction MSE."""
    Xv = _values(X)
    if Xv.ndim != 2 or Xv.shape[0] == 0:
        raise ConfigError("autoencoder needs a nonempty 2-D matrix")
    d = Xv.shape[1]
    if max(cfg.encoder_dims) > d:
        raise ConfigError(f"encoder dim {max(cfg.encoder_dims)} exceeds input dim {d}")
    dims = (d,) + cfg.encoder_dims
    act = cfg.activation
    enc = [LayerSpec(dims[i], dims[i + 1], act) for i in range(len(dims) - 1)]
    rev = dims[::-1]
    dec = [LayerSpec(rev[i], rev[i + 1], act if i < len(rev) - 2 else "linear")
           for i in range(len(rev) - 1)]
    start = init_network(enc + dec, seed=cfg.seed)
    layers = [[np.array(w), np.array(b), s] for w, b, s in start.layers]
    layers[-1][1] = Xv.mean(axis=0)

    def mse_of(ls):
        out, _ = _forward(ls, Xv)
        return float(np.mean((out - Xv) ** 2))

    initial = mse_of(layers)
    batch = min(cfg.batch_size, len(Xv))
    rng = np.random.default_rng([cfg.seed, 2])
    losses, _ = _fit(layers, Xv, Xv, _mse, cfg.epochs, batch,
                     lambda p: _Adam(p, cfg.learning_rate, 0.9, 0.999, 1e-8),
                     rng, [True] * len(layers))
    final = mse_of(layers)
    frozen = DenseNetwork(tuple(Layer(*lay) for lay in layers)).layers
    k = len(enc)
    return Autoencoder(frozen[:k], frozen[k:], losses, initial, final, float(np.mean(Xv ** 2)))


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def network_to_dict(network: DenseNetwork) -> dict:
    doc = {
        "format": NETWORK_FORMAT,
        "version": NETWORK_FORMAT_VERSION,
        "seed": int(network.rng_seed),
        "layers": [
            {
                "input_dim": s.input_dim,
                "output_dim": s.output_dim,
                "activation": s.activation,
                "dropout_after": s.dropout_after,
                "weights": w.tolist(),
                "bias": b.tolist(),
            }
            for w, b, s in network.layers
        ],
    }
    if network.metadata:
        doc["metadata"] = network.metadata
    return doc


def network_from_dict(doc: dict) -> DenseNetwork:
    if doc.get("format") != NETWORK_FORMAT:
        raise DataFormatError(f"not a {NETWORK_FORMAT} document")
    if doc.get("version") != NETWORK_FORMAT_VERSION:
        raise DataFormatError(f"unsupported network format version {doc.get('version')!r}")
    layers = []
    try:
        for i, entry in enumerate(doc["layers"]):
            spec = LayerSpec(int(entry["input_dim"]), int(entry["output_dim"]),
                             entry["activation"], float(entry.get("dropout_after", 0.0)))
            w = np.asarray(entry["weights"], dtype=float)
            b = np.asarray(entry["bias"], dtype=float)
            if w.shape != (spec.output_dim, spec.input_dim) or b.shape != (spec.output_dim,):
                raise ShapeError(f"layer {i}: stored arrays {w.shape}/{b.shape} do not match "
                                 f"{spec.input_dim}->{spec.output_dim}")
            layers.append(Layer(w, b, spec))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"malformed network document: {exc}") from exc
    return DenseNetwork(tuple(layers), rng_seed=int(doc.get("seed", 0)),
                        metadata=dict(doc.get("metadata", {})))


def save_network(network: DenseNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(network)))


def load_network(path) -> DenseNetwork:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    return network_from_dict(doc)
