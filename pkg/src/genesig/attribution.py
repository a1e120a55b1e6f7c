"""Input attributions for dense ReLU networks.

All methods share one calling convention: a trained ``DenseNetwork``, one
sample (1-D) or a batch (rows), and the output class to explain (an int or
one per row). The explained score is the pre-softmax logit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DivisionHazardError, ShapeError
from .nn import DenseNetwork, _as_batch, _forward, _targets, score_gradient

METHOD_KINDS = (
    "gradient",
    "smoothgrad",
    "input_x_gradient",
    "integrated_gradients",
    "guided_backprop",
    "lrp_epsilon",
    "lrp_z",
)


@dataclass(frozen=True)
class AttributionMethod:
    """One attribution technique plus its parameters.

    Only the fields relevant to ``kind`` are used: ``n_samples``,
    ``sigma_fraction`` and ``seed`` for smoothgrad; ``steps`` and
    ``baseline`` (``None`` means zeros) for integrated gradients;
    ``epsilon`` for lrp_epsilon.
    """

    kind: str
    n_samples: int = 25
    sigma_fraction: float = 0.1
    seed: int = 0
    steps: int = 50
    baseline: tuple[float, ...] | None = None
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown attribution method {self.kind!r}; expected one of {METHOD_KINDS}")
        if int(self.n_samples) < 1:
            raise ConfigError("smoothgrad n_samples must be >= 1")
        if int(self.steps) < 1:
            raise ConfigError("integrated_gradients steps must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("lrp epsilon must be > 0")
        if self.sigma_fraction < 0:
            raise ConfigError("sigma_fraction must be >= 0")

    @property
    def name(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "smoothgrad":
            out.update(n_samples=self.n_samples, sigma_fraction=self.sigma_fraction, seed=self.seed)
        elif self.kind == "integrated_gradients":
            out.update(steps=self.steps, baseline=None if self.baseline is None else list(self.baseline))
        elif self.kind == "lrp_epsilon":
            out.update(epsilon=self.epsilon)
        return out

    @classmethod
    def from_dict(cls, data) -> "AttributionMethod":
        if isinstance(data, str):
            return cls(data)
        if isinstance(data, cls):
            return data
        data = dict(data)
        if "baseline" in data and data["baseline"] is not None:
            data["baseline"] = tuple(float(v) for v in data["baseline"])
        allowed = {"kind", "n_samples", "sigma_fraction", "seed", "steps", "baseline", "epsilon"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown attribution parameter(s): {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError("attribution method needs a 'kind'")
        return cls(**data)


def default_methods(seed: int = 0) -> list[AttributionMethod]:
    return [AttributionMethod(k, seed=seed) for k in METHOD_KINDS]


@dataclass
class AttributionMap:
    sample_id: str
    target_class: int
    method: AttributionMethod
    relevance: np.ndarray = field(repr=False)


def _prepare(network, sample, target_class):
    X, single = _as_batch(sample, network.input_dim)
    t = _targets(target_class, len(X), network.output_dim)
    return X, single, t


def _finish(R, single):
    return R[0] if single else R


def gradient(network: DenseNetwork, sample, target_class) -> np.ndarray:
    X, single, t = _prepare(network, sample, target_class)
    return _finish(score_gradient(network, X, t), single)


def input_x_gradient(network: DenseNetwork, sample, target_class) -> np.ndarray:
    X, single, t = _prepare(network, sample, target_class)
    return _finish(X * score_gradient(network, X, t), single)


def integrated_gradients(network: DenseNetwork, sample, target_class, steps: int = 50,
                         baseline=None) -> np.ndarray:
    """Path integral of the gradient from ``baseline`` to the sample.

    Midpoint Riemann rule: gradients at ``baseline + (k + 0.5)/steps * (x - baseline)``.
    """
    if int(steps) < 1:
        raise ConfigError("integrated_gradients steps must be >= 1")
    X, single, t = _prepare(network, sample, target_class)
    base = np.zeros(X.shape[1]) if baseline is None else np.asarray(baseline, dtype=float)
    if base.shape[-1] != X.shape[1]:
        raise ShapeError(f"baseline length {base.shape[-1]} != sample length {X.shape[1]}")
    delta = X - base
    total = np.zeros_like(X)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        total += score_gradient(network, base + alpha * delta, t)
    return _finish(delta * (total / steps), single)


def smoothgrad_noise(n_features: int, n_samples: int, seed: int) -> np.ndarray:
    """Unit-scale Gaussian draws used by :func:`smoothgrad`, one row per draw."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_samples, n_features))


def smoothgrad(network: DenseNetwork, sample, target_class, n_samples: int = 25,
               sigma_fraction: float = 0.1, seed: int = 0) -> np.ndarray:
    """Mean gradient over Gaussian-perturbed copies of the sample.

    Noise std is ``sigma_fraction * (max(sample) - min(sample))`` per sample.
    The same seeded draws are reused for every row, so a row's result does
    not depend on what else is in the batch.
    """
    X, single, t = _prepare(network, sample, target_class)
    if sigma_fraction == 0:
        return _finish(score_gradient(network, X, t), single)
    sigma = sigma_fraction * (X.max(axis=1) - X.min(axis=1))
    noise = smoothgrad_noise(X.shape[1], n_samples, seed)
    total = np.zeros_like(X)
    for eps in noise:
        total += score_gradient(network, X + sigma[:, None] * eps, t)
    return _finish(total / n_samples, single)


def guided_backprop(network: DenseNetwork, sample, target_class) -> np.ndarray:
    X, single, t = _prepare(network, sample, target_class)
    return _finish(score_gradient(network, X, t, guided=True), single)


def lrp(network: DenseNetwork, sample, target_class, rule: str = "z", epsilon: float = 1e-3) -> np.ndarray:
    """Layer-wise relevance propagation with the z or epsilon rule.

    Output relevance is the target logit. Each dense layer passes
    ``R_i = x_i * sum_j w_ji * R_j / z_j`` down, where ``z_j`` includes the
    bias (bias relevance is absorbed). The epsilon rule uses
    ``z_j + eps * sign(z_j)`` with ``sign(0) = +1``.
    """
    if rule not in ("z", "epsilon"):
        raise ConfigError(f"lrp rule must be 'z' or 'epsilon', got {rule!r}")
    X, single, t = _prepare(network, sample, target_class)
    scores, cache = _forward(network.layers, X)
    R = np.zeros_like(scores)
    rows = np.arange(len(X))
    R[rows, t] = scores[rows, t]
    for i in range(len(network.layers) - 1, -1, -1):
        w = network.layers[i].weight
        z = cache[i].z
        if rule == "epsilon":
            denom = z + epsilon * np.where(z >= 0, 1.0, -1.0)
        else:
            hazard = (z == 0) & (R != 0)
            if hazard.any():
                raise DivisionHazardError(
                    f"layer {i}: zero pre-activation carries relevance under the z rule; "
                    "use rule='epsilon' (lrp_epsilon) instead")
            denom = np.where(z == 0, 1.0, z)
        s = np.where(R == 0, 0.0, R / denom)
        R = cache[i].a_in * (s @ w)
    return _finish(R, single)


def attribute_batch(network: DenseNetwork, X, target_class, method: AttributionMethod) -> np.ndarray:
    """Relevance rows for every sample in ``X``."""
    kind = method.kind
    if kind == "gradient":
        return gradient(network, X, target_class)
    if kind == "smoothgrad":
        return smoothgrad(network, X, target_class, method.n_samples, method.sigma_fraction, method.seed)
    if kind == "input_x_gradient":
        return input_x_gradient(network, X, target_class)
    if kind == "integrated_gradients":
        return integrated_gradients(network, X, target_class, method.steps, method.baseline)
    if kind == "guided_backprop":
        return guided_backprop(network, X, target_class)
    if kind == "lrp_epsilon":
        return lrp(network, X, target_class, "epsilon", method.epsilon)
    if kind == "lrp_z":
        return lrp(network, X, target_class, "z")
    raise ConfigError(f"unknown attribution method {kind!r}")


def attribute(network: DenseNetwork, sample, target_class: int, method: AttributionMethod,
              sample_id: str = "") -> AttributionMap:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 1:
        raise ShapeError("attribute takes a single sample; use attribute_batch for matrices")
    relevance = attribute_batch(network, sample, int(target_class), method)
    return AttributionMap(sample_id, int(target_class), method, relevance)


def write_maps_csv(maps: Sequence[AttributionMap], gene_names: Sequence[str], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "method", "target_class", *gene_names])
        for m in maps:
            w.writerow([m.sample_id, m.method.name, m.target_class, *(repr(float(v)) for v in m.relevance)])
