"""Encoder-decoder MLP student with hand-written backpropagation.

The encoder maps ``p -> hidden... -> r`` and the decoder ``r -> hidden... -> p``.
The bottleneck layer and the output layer are always affine; hidden layers use
the configured activation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .teacher import TeacherNorm

__all__ = [
    "StudentSpec",
    "Layer",
    "StudentModel",
    "Adam",
    "PlateauScheduler",
    "DivergenceError",
    "init_student",
    "encode",
    "decode",
    "losses",
    "loss_and_grads",
    "grad_step",
    "param_count",
    "width_for_depth",
    "reference_budget",
    "save_model",
    "load_model",
    "SELU_ALPHA",
    "SELU_SCALE",
]

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946

ACTIVATIONS = ("relu", "selu", "linear")


class DivergenceError(FloatingPointError):
    """Non-finite loss or gradient during training."""


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "selu":
        return SELU_SCALE * np.where(a > 0, a, SELU_ALPHA * np.expm1(np.minimum(a, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(a)
    if name == "relu":
        return (a > 0).astype(a.dtype)
    if name == "selu":
        return SELU_SCALE * np.where(a > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(a, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class StudentSpec:
    input_dim: int
    bottleneck_dim: int
    encoder_hidden: tuple[int, ...] = (256, 256)
    decoder_hidden: tuple[int, ...] | None = None
    hidden_activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(w) for w in self.encoder_hidden))
        if self.decoder_hidden is None:
            object.__setattr__(self, "decoder_hidden", tuple(reversed(self.encoder_hidden)))
        else:
            object.__setattr__(self, "decoder_hidden", tuple(int(w) for w in self.decoder_hidden))
        if self.input_dim < 1 or self.bottleneck_dim < 1:
            raise ValueError("input and bottleneck dimensions must be >= 1")
        if any(w < 1 for w in self.encoder_hidden + self.decoder_hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {ACTIVATIONS}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.encoder_hidden, self.bottleneck_dim, *self.decoder_hidden, self.input_dim]

    @property
    def n_encoder_layers(self) -> int:
        return len(self.encoder_hidden) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudentSpec":
        d = dict(d)
        d["encoder_hidden"] = tuple(d["encoder_hidden"])
        d["decoder_hidden"] = tuple(d["decoder_hidden"]) if d.get("decoder_hidden") is not None else None
        return cls(**d)


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str

    def __call__(self, h):
        return _act(self.activation, h @ self.W.T + self.b)


@dataclass
class StudentModel:
    layers: list[Layer]
    spec: StudentSpec
    teacher_norm: TeacherNorm | None = None

    def __post_init__(self):
        dims = self.spec.dims
        if len(self.layers) != len(dims) - 1:
            raise ValueError(f"expected {len(dims) - 1} layers, got {len(self.layers)}")
        for i, layer in enumerate(self.layers):
            if layer.W.shape != (dims[i + 1], dims[i]) or layer.b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} shape {layer.W.shape} breaks the chain {dims}")
        k = self.spec.n_encoder_layers
        if self.layers[k - 1].activation != "linear" or self.layers[-1].activation != "linear":
            raise ValueError("bottleneck and output layers must be affine (identity activation)")

    @property
    def encoder(self) -> list[Layer]:
        return self.layers[: self.spec.n_encoder_layers]

    @property
    def decoder(self) -> list[Layer]:
        return self.layers[self.spec.n_encoder_layers :]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "StudentModel":
        layers = [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        return StudentModel(layers, self.spec, self.teacher_norm)


def init_student(spec: StudentSpec) -> StudentModel:
    """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(spec.init_seed)
    dims = spec.dims
    k = spec.n_encoder_layers
    last = len(dims) - 2
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        act = "linear" if i in (k - 1, last) else spec.hidden_activation
        layers.append(Layer(W, b, act))
    return StudentModel(layers, spec)


def _values(X) -> np.ndarray:
    return getattr(X, "values", X)


def _forward(layers: Sequence[Layer], h: np.ndarray):
    pre, post = [], [h]
    for layer in layers:
        a = h @ layer.W.T + layer.b
        h = _act(layer.activation, a)
        pre.append(a)
        post.append(h)
    return pre, post


def encode(model: StudentModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(_values(X), dtype=np.float64))
    if X.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected {model.spec.input_dim} columns, got {X.shape[1]}")
    h = X
    for layer in model.encoder:
        h = layer(h)
    return h


def decode(model: StudentModel, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != model.spec.bottleneck_dim:
        raise ValueError(f"expected {model.spec.bottleneck_dim} latent columns, got {Z.shape[1]}")
    h = Z
    for layer in model.decoder:
        h = layer(h)
    return h


def reconstruct(model: StudentModel, X) -> np.ndarray:
    return decode(model, encode(model, X))


def _check_batch(model, X, Z):
    X = np.atleast_2d(np.asarray(_values(X), dtype=np.float64))
    Z = np.atleast_2d(np.asarray(getattr(Z, "coords", Z), dtype=np.float64))
    if X.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected {model.spec.input_dim} input columns, got {X.shape[1]}")
    if Z.shape != (X.shape[0], model.spec.bottleneck_dim):
        raise ValueError(f"teacher batch shape {Z.shape} does not pair with inputs {X.shape}")
    return X, Z


def losses(model: StudentModel, X, Z) -> tuple[float, float]:
    """Return ``(L_rec, L_dist)``: batch means of squared Euclidean norms."""
    X, Z = _check_batch(model, X, Z)
    E = encode(model, X)
    Xh = decode(model, E)
    l_rec = float(np.mean(np.sum((X - Xh) ** 2, axis=1)))
    l_dist = float(np.mean(np.sum((E - Z) ** 2, axis=1)))
    return l_rec, l_dist


def loss_and_grads(model: StudentModel, X, Z, lambda_d: float):
    """Total loss ``lambda_d * L_dist + L_rec`` and exact gradients.

    Returns ``(l_rec, l_dist, grads)`` where ``grads`` pairs with
    ``model.params()``.
    """
    X, Z = _check_batch(model, X, Z)
    n = X.shape[0]
    k = model.spec.n_encoder_layers
    with np.errstate(over="ignore", invalid="ignore"):
        return _backprop(model, X, Z, lambda_d, n, k)


def _backprop(model, X, Z, lambda_d, n, k):
    pre, post = _forward(model.layers, X)
    E, Xh = post[k], post[-1]
    dE = E - Z
    dX = Xh - X
    l_rec = float(np.mean(np.sum(dX**2, axis=1)))
    l_dist = float(np.mean(np.sum(dE**2, axis=1)))

    grads: list[np.ndarray] = [None] * (2 * len(model.layers))
    delta = (2.0 / n) * dX  # dL/d(output), output layer is linear
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i != len(model.layers) - 1:
            delta = delta * _act_grad(layer.activation, pre[i])
        grads[2 * i] = delta.T @ post[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ layer.W
            if i == k:
                # entering the bottleneck output from the decoder side
                delta = delta + (2.0 * lambda_d / n) * dE
    return l_rec, l_dist, grads


@dataclass
class Adam:
    """Adam state: first/second moments, step count and current learning rate."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_step(model: StudentModel, opt: Adam, X, Z, lambda_d: float) -> tuple[float, float]:
    """One in-place Adam update of ``model`` on a batch; returns pre-step ``(L_rec, L_dist)``."""
    if lambda_d < 0:
        raise ValueError("lambda_d must be non-negative")
    l_rec, l_dist, grads = loss_and_grads(model, X, Z, lambda_d)
    if not (math.isfinite(l_rec) and math.isfinite(l_dist)):
        raise DivergenceError(f"non-finite loss (L_rec={l_rec}, L_dist={l_dist})")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError("non-finite gradient")
    opt.update(model.params(), grads)
    return l_rec, l_dist


@dataclass
class PlateauScheduler:
    """Reduce the learning rate when the monitored loss stops improving.

    A checkpoint improves when ``value < best * (1 - threshold)``. After
    ``patience`` consecutive non-improving checkpoints the rate is multiplied
    by ``factor`` (floored at ``min_lr``) and the counter resets.
    """

    factor: float = 0.5
    patience: int = 20
    threshold: float = 1e-4
    min_lr: float = 1e-7
    best: float = math.inf
    num_bad: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")

    def step(self, value: float, lr: float) -> float:
        if value < self.best * (1.0 - self.threshold):
            self.best = value
            self.num_bad = 0
            return lr
        self.num_bad += 1
        if self.num_bad >= self.patience:
            self.num_bad = 0
            return max(lr * self.factor, self.min_lr)
        return lr


def plateau_schedule(history: Sequence[float], lr: float, factor=0.5, patience=20, min_lr=1e-7, threshold=1e-4) -> float:
    """Replay ``history`` through a fresh scheduler and return the resulting rate."""
    sched = PlateauScheduler(factor, patience, threshold, min_lr)
    for value in history:
        lr = sched.step(value, lr)
    return lr


def param_count(L: int, w: int, D: int, z: int) -> int:
    """Weights (no biases) of a symmetric ``L``-hidden-layer, width-``w`` autoencoder."""
    if L < 1 or w < 1:
        raise ValueError("L and w must be >= 1")
    return 2 * (L - 1) * w * w + 2 * (D + z) * w


def reference_budget(D: int, z: int, L_ref: int = 3, w_ref: int = 256) -> int:
    return param_count(L_ref, w_ref, D, z)


def width_for_depth(L: int, P_star: float, D: int, z: int) -> int:
    """Width that keeps ``param_count(L, w, D, z)`` at the budget ``P_star``, rounded."""
    if L < 2:
        raise ValueError("width_for_depth needs L >= 2")
    a = D + z
    w = (-a + math.sqrt(a * a + 2 * (L - 1) * P_star)) / (2 * (L - 1))
    return int(math.floor(w + 0.5))


def save_model(model: StudentModel, out_dir) -> None:
    """Write ``model.json`` plus ``layer_{i}_W.npy`` / ``layer_{i}_b.npy``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": 1,
        "spec": model.spec.to_dict(),
        "teacher_norm": None if model.teacher_norm is None else model.teacher_norm.to_dict(),
        "layers": [
            {"in": l.W.shape[1], "out": l.W.shape[0], "activation": l.activation} for l in model.layers
        ],
    }
    (out / "model.json").write_text(json.dumps(manifest, indent=1))
    for i, layer in enumerate(model.layers):
        np.save(out / f"layer_{i}_W.npy", np.ascontiguousarray(layer.W, dtype="<f8"))
        np.save(out / f"layer_{i}_b.npy", np.ascontiguousarray(layer.b, dtype="<f8"))


def load_model(model_dir) -> StudentModel:
    d = Path(model_dir)
    manifest = json.loads((d / "model.json").read_text())
    spec = StudentSpec.from_dict(manifest["spec"])
    layers = []
    for i, meta in enumerate(manifest["layers"]):
        W = np.load(d / f"layer_{i}_W.npy")
        b = np.load(d / f"layer_{i}_b.npy")
        layers.append(Layer(W, b, meta["activation"]))
    tn = manifest.get("teacher_norm")
    return StudentModel(layers, spec, None if tn is None else TeacherNorm.from_dict(tn))
