"""Desk-scale differentiable objectives and synthetic datasets.

All gradients are analytic. MLP parameters are flattened layer by layer:
for each layer ``l`` the weight matrix ``W_l`` (shape ``fan_in x fan_out``,
row-major) is followed by its bias ``b_l``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

Vector = np.ndarray


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    eval: Callable[[Vector], float]
    grad: Callable[[Vector], Vector]
    init: Callable[[np.random.Generator], Vector]
    optimum_value: float | None = None
    optimum_point: Vector | None = None
    lipschitz_L: float | None = None
    scale_invariant: bool = False
    # mini-batch oracles over sample indices; None for closed-form objectives
    n_samples: int | None = None
    batch_eval: Callable[[Vector, np.ndarray], float] | None = None
    batch_grad: Callable[[Vector, np.ndarray], Vector] | None = None
    # changes value whenever a perturbation crosses a non-differentiable kink
    kink_signature: Callable[[Vector], bytes] | None = None
    fd_tolerance: float = 1e-4


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    seed: int
    kind: str = "custom"
    noise: float = 0.0

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.seed, self.kind, self.noise)


def make_quadratic(L: float, mu: float, dim: int) -> Problem:
    """``f(x) = 0.5 * x^T D x`` with ``D`` linearly spaced in ``[mu, L]``."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    diag = np.array([L]) if dim == 1 else np.linspace(mu, L, dim)

    def f(x: Vector) -> float:
        return 0.5 * float(np.dot(diag * x, x))

    def grad(x: Vector) -> Vector:
        return diag * x

    return Problem(
        name="quadratic",
        dim=dim,
        eval=f,
        grad=grad,
        init=lambda rng: rng.standard_normal(dim),
        optimum_value=0.0,
        optimum_point=np.zeros(dim),
        lipschitz_L=float(L),
        fd_tolerance=1e-6,
    )


def quadratic_diagonal(problem: Problem) -> np.ndarray:
    """Recover the curvature diagonal of a quadratic built by :func:`make_quadratic`."""
    return problem.grad(np.ones(problem.dim))


def make_rosenbrock(dim: int = 2) -> Problem:
    """Extended Rosenbrock: independent 2-D Rosenbrock terms on consecutive pairs."""
    if dim < 2 or dim % 2:
        raise ValueError(f"rosenbrock dim must be even and >= 2, got {dim}")

    def f(x: Vector) -> float:
        a, b = x[0::2], x[1::2]
        return float(np.sum(100.0 * (b - a * a) ** 2 + (1.0 - a) ** 2))

    def grad(x: Vector) -> Vector:
        a, b = x[0::2], x[1::2]
        r = b - a * a
        g = np.empty_like(x, dtype=float)
        g[0::2] = -400.0 * a * r - 2.0 * (1.0 - a)
        g[1::2] = 200.0 * r
        return g

    start = np.tile([-1.2, 1.0], dim // 2)
    return Problem(
        name="rosenbrock",
        dim=dim,
        eval=f,
        grad=grad,
        init=lambda rng: start + 0.1 * rng.standard_normal(dim),
        optimum_value=0.0,
        optimum_point=np.ones(dim),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def make_logistic(data: Dataset, l2: float = 0.0) -> Problem:
    """Mean logistic loss (labels mapped to +-1, no intercept) plus ``l2/2 |x|^2``."""
    if l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {l2}")
    labels = np.asarray(data.labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("logistic regression needs binary labels in {0, 1}")
    X = np.asarray(data.features, dtype=float)
    y = 2.0 * labels - 1.0
    n, d = X.shape

    def batch_eval(w: Vector, idx: np.ndarray) -> float:
        z = y[idx] * (X[idx] @ w)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * l2 * float(w @ w)

    def batch_grad(w: Vector, idx: np.ndarray) -> Vector:
        Xb, yb = X[idx], y[idx]
        s = _sigmoid(-yb * (Xb @ w))
        return -(Xb.T @ (yb * s)) / len(idx) + l2 * w

    every = np.arange(n)
    return Problem(
        name="logistic",
        dim=d,
        eval=lambda w: batch_eval(w, every),
        grad=lambda w: batch_grad(w, every),
        init=lambda rng: 0.1 * rng.standard_normal(d),
        lipschitz_L=float(np.max(np.sum(X * X, axis=1))) / 4.0 + l2,
        n_samples=n,
        batch_eval=batch_eval,
        batch_grad=batch_grad,
    )


def logistic_accuracy(data: Dataset, w: Vector) -> float:
    pred = (np.asarray(data.features) @ w > 0).astype(int)
    return float(np.mean(pred == data.labels))


class _MLP:
    def __init__(self, sizes: Sequence[int], activation: str):
        self.sizes = list(sizes)
        self.activation = activation
        self.shapes = list(zip(self.sizes[:-1], self.sizes[1:]))
        self.slices = []
        offset = 0
        for fan_in, fan_out in self.shapes:
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self.slices.append((w, b))
        self.dim = offset

    def unpack(self, theta: Vector):
        return [
            (theta[ws].reshape(fan_in, fan_out), theta[bs])
            for (ws, bs), (fan_in, fan_out) in zip(self.slices, self.shapes)
        ]

    def act(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def act_grad(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        return (z > 0).astype(float)

    def forward(self, theta, X):
        params = self.unpack(theta)
        a = X
        cache = []
        for i, (W, b) in enumerate(params):
            z = a @ W + b
            if i < len(params) - 1:
                out = self.act(z)
            else:
                out = z
            cache.append((a, z, out))
            a = out
        return params, cache

    def loss_and_grad(self, theta, X, labels, need_grad=True):
        params, cache = self.forward(theta, X)
        logits = cache[-1][2]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.sum(np.exp(shifted), axis=1))
        n = X.shape[0]
        loss = float(np.mean(logsum - shifted[np.arange(n), labels]))
        if not need_grad:
            return loss, None
        probs = np.exp(shifted - logsum[:, None])
        delta = probs
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grad = np.empty(self.dim)
        for i in range(len(params) - 1, -1, -1):
            a_in, z, _ = cache[i]
            ws, bs = self.slices[i]
            grad[ws] = (a_in.T @ delta).ravel()
            grad[bs] = delta.sum(axis=0)
            if i > 0:
                prev_a, prev_z = cache[i - 1][2], cache[i - 1][1]
                delta = (delta @ params[i][0].T) * self.act_grad(prev_z, prev_a)
        return loss, grad


def make_mlp(
    layer_sizes: Sequence[int],
    activation: str = "tanh",
    data: Dataset | None = None,
    seed: int = 0,
) -> Problem:
    """Softmax cross-entropy MLP with exact backpropagation.

    ``layer_sizes`` runs from the input width to the number of classes and
    must contain at least one hidden layer. ``seed`` fixes the default
    initial point used when no generator is passed to ``init``.
    """
    if activation not in ("tanh", "relu"):
        raise ValueError(f"activation must be tanh or relu, got {activation!r}")
    if len(layer_sizes) < 3:
        raise ValueError("need at least one hidden layer")
    if data is None:
        raise ValueError("make_mlp needs a dataset")
    X = np.asarray(data.features, dtype=float)
    labels = np.asarray(data.labels).astype(int)
    if X.shape[1] != layer_sizes[0]:
        raise ValueError(f"input width {layer_sizes[0]} does not match data dimension {X.shape[1]}")
    if labels.min() < 0 or labels.max() >= layer_sizes[-1]:
        raise ValueError(f"labels must lie in [0, {layer_sizes[-1]}) for this output layer")
    net = _MLP(layer_sizes, activation)

    def init(rng: np.random.Generator | None = None) -> Vector:
        rng = np.random.default_rng(seed) if rng is None else rng
        theta = np.zeros(net.dim)
        for (ws, _), (fan_in, fan_out) in zip(net.slices, net.shapes):
            scale = math.sqrt(1.0 / fan_in) if activation == "tanh" else math.sqrt(2.0 / fan_in)
            theta[ws] = scale * rng.standard_normal(fan_in * fan_out)
        return theta

    def batch_eval(theta: Vector, idx: np.ndarray) -> float:
        return net.loss_and_grad(theta, X[idx], labels[idx], need_grad=False)[0]

    def batch_grad(theta: Vector, idx: np.ndarray) -> Vector:
        return net.loss_and_grad(theta, X[idx], labels[idx])[1]

    def kink_signature(theta: Vector) -> bytes:
        _, cache = net.forward(theta, X)
        return np.packbits(np.concatenate([(z > 0).ravel() for _, z, _ in cache[:-1]])).tobytes()

    return Problem(
        name=f"mlp_{activation}",
        dim=net.dim,
        eval=lambda theta: net.loss_and_grad(theta, X, labels, need_grad=False)[0],
        grad=lambda theta: net.loss_and_grad(theta, X, labels)[1],
        init=init,
        n_samples=X.shape[0],
        batch_eval=batch_eval,
        batch_grad=batch_grad,
        kink_signature=kink_signature if activation == "relu" else None,
    )


def mlp_layout(layer_sizes: Sequence[int]) -> list[tuple[slice, slice]]:
    """(weight slice, bias slice) per layer in the flattened parameter vector."""
    return _MLP(layer_sizes, "tanh").slices


def mlp_accuracy(layer_sizes: Sequence[int], activation: str, data: Dataset, theta: Vector) -> float:
    net = _MLP(layer_sizes, activation)
    _, cache = net.forward(theta, np.asarray(data.features, dtype=float))
    return float(np.mean(cache[-1][2].argmax(axis=1) == data.labels))


def make_scale_invariant(base_dim: int, seed: int = 0) -> Problem:
    """``f(x) = g(x / |x|)`` for a fixed quartic ``g``, so ``f(c x) = f(x)`` for ``c > 0``."""
    if base_dim < 2:
        raise ValueError(f"base_dim must be >= 2, got {base_dim}")
    rng = np.random.default_rng(seed)
    quartic = rng.uniform(0.5, 1.5, base_dim)
    linear = rng.standard_normal(base_dim)

    def _unit(x: Vector) -> tuple[Vector, float]:
        r = float(np.linalg.norm(x))
        if r == 0.0:
            raise ValueError("scale-invariant objective is undefined at the origin")
        return x / r, r

    def f(x: Vector) -> float:
        u, _ = _unit(x)
        return float(np.sum(quartic * u**4) + linear @ u)

    def grad(x: Vector) -> Vector:
        u, r = _unit(x)
        gu = 4.0 * quartic * u**3 + linear
        return (gu - (u @ gu) * u) / r

    return Problem(
        name="scale_invariant",
        dim=base_dim,
        eval=f,
        grad=grad,
        init=lambda rng: rng.standard_normal(base_dim),
        scale_invariant=True,
        fd_tolerance=1e-6,
    )


SYNTHETIC_KINDS = ("two_gaussians", "two_moons", "multiclass_blobs")
BLOB_CLASSES = 3


def make_synthetic_data(kind: str, n: int, d: int, noise: float, seed: int) -> Dataset:
    """Seeded, class-balanced synthetic classification data.

    ``two_moons`` is centred at the origin so that models without an
    intercept can still separate most of it.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if n < 2 or d < 2:
        raise ValueError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    classes = BLOB_CLASSES if kind == "multiclass_blobs" else 2
    labels = rng.permutation(np.arange(n) % classes)
    X = np.zeros((n, d))
    if kind == "two_gaussians":
        X[:] = np.where(labels[:, None] == 1, 1.0, -1.0)
    elif kind == "two_moons":
        angle = rng.uniform(0.0, math.pi, n)
        upper = labels == 0
        X[:, 0] = np.where(upper, np.cos(angle), 1.0 - np.cos(angle)) - 0.5
        X[:, 1] = np.where(upper, np.sin(angle), 0.5 - np.sin(angle)) - 0.25
    else:
        phase = 2.0 * math.pi * labels / classes
        X[:, 0] = 2.0 * np.cos(phase)
        X[:, 1] = 2.0 * np.sin(phase)
    if noise > 0:
        X += noise * rng.standard_normal((n, d))
    return Dataset(features=X, labels=labels, seed=seed, kind=kind, noise=noise)


def train_val_split(data: Dataset, seed: int, val_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive split by seeded permutation."""
    perm = np.random.default_rng(seed).permutation(data.n)
    n_val = int(round(val_fraction * data.n))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def dataset_filename(data: Dataset) -> str:
    return f"{data.kind}_{data.n}_{data.d}_{data.noise!r}_{data.seed}.csv"


def save_dataset(data: Dataset, directory: str | os.PathLike) -> Path:
    path = Path(directory) / dataset_filename(data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(data.d)] + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


def load_dataset(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    parts = path.stem.split("_")
    try:
        seed = int(parts[-1])
        noise = float(parts[-2])
        kind = "_".join(parts[:-4])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path.name} does not follow kind_n_d_noise_seed.csv") from exc
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[-1] != "label":
        raise ValueError(f"{path}: last column must be 'label', got {header[-1]!r}")
    d = len(header) - 1
    X = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(len(rows), d)
    y = np.array([int(r[d]) for r in rows], dtype=int)
    return Dataset(features=X, labels=y, seed=seed, kind=kind, noise=noise)
