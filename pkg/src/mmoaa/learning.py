"""Desk-scale models, local SGD and datasets (synthetic and MNIST IDX)."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ConfigurationError, IDXFormatError

LOGISTIC = "logistic"
MLP = "mlp"


@dataclass(frozen=True)
class Model:
    """Architecture of a classifier; parameters live in a flat vector.

    Logistic layout: ``W (C x b)`` row-major then bias ``(C,)``.
    MLP layout: ``W1 (H x b)``, ``b1 (H,)``, ``W2 (C x H)``, ``b2 (C,)``
    with a tanh hidden layer.
    """

    kind: str
    n_features: int
    n_classes: int
    hidden: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in (LOGISTIC, MLP):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.kind == MLP and self.hidden < 1:
            raise ConfigurationError("mlp needs hidden >= 1")
        if self.n_classes < 2 or self.n_features < 1:
            raise ConfigurationError("need at least 2 classes and 1 feature")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be non-negative")

    @property
    def dim(self) -> int:
        b, C, H = self.n_features, self.n_classes, self.hidden
        if self.kind == LOGISTIC:
            return C * b + C
        return H * b + H + C * H + C

    def init(self, rng, scale=0.1) -> np.ndarray:
        if self.kind == LOGISTIC:
            return np.zeros(self.dim)
        return rng.normal(0.0, scale, size=self.dim)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {theta.shape}, expected ({self.dim},)")
        b, C, H = self.n_features, self.n_classes, self.hidden
        if self.kind == LOGISTIC:
            return theta[:C * b].reshape(C, b), theta[C * b:]
        o = 0
        W1 = theta[o:o + H * b].reshape(H, b); o += H * b
        b1 = theta[o:o + H]; o += H
        W2 = theta[o:o + C * H].reshape(C, H); o += C * H
        return W1, b1, W2, theta[o:]

    def logits(self, theta, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"features must be (n, {self.n_features}), got {X.shape}")
        if self.kind == LOGISTIC:
            W, c = self._split(theta)
            return X @ W.T + c
        W1, b1, W2, b2 = self._split(theta)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def predict(self, theta, X) -> np.ndarray:
        # argmax ties resolve to the lowest class index
        return np.argmax(self.logits(theta, X), axis=1)


def sample_loss_grad(model: Model, theta, X, y):
    """Mean cross-entropy over the batch (plus ``l2/2 ||theta||^2``) and its gradient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty batch")
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on batch size")
    theta = np.asarray(theta, dtype=float)
    n = X.shape[0]
    rows = np.arange(n)
    if model.kind == LOGISTIC:
        W, c = model._split(theta)
        z = X @ W.T + c
        loss = -np.mean(log_softmax(z, axis=1)[rows, y])
        delta = softmax(z, axis=1)
        delta[rows, y] -= 1.0
        delta /= n
        grad = np.concatenate([(delta.T @ X).ravel(), delta.sum(axis=0)])
    else:
        W1, b1, W2, b2 = model._split(theta)
        a = np.tanh(X @ W1.T + b1)
        z = a @ W2.T + b2
        loss = -np.mean(log_softmax(z, axis=1)[rows, y])
        delta = softmax(z, axis=1)
        delta[rows, y] -= 1.0
        delta /= n
        back = (delta @ W2) * (1.0 - a ** 2)
        grad = np.concatenate([(back.T @ X).ravel(), back.sum(axis=0),
                               (delta.T @ a).ravel(), delta.sum(axis=0)])
    if model.l2:
        loss += 0.5 * model.l2 * np.dot(theta, theta)
        grad = grad + model.l2 * theta
    return float(loss), grad


def local_sgd(model: Model, theta_start, X, y, J, batch_size, eta, rng) -> np.ndarray:
    """``J`` mini-batch SGD steps from ``theta_start`` on one device's data.

    Batches are drawn without replacement from a fresh permutation each
    epoch; a tail shorter than ``batch_size`` is dropped.
    """
    n = len(y)
    if J < 1 or eta < 0:
        raise ValueError("J must be >= 1 and eta >= 0")
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} incompatible with {n} local samples")
    theta = np.array(theta_start, dtype=float)
    per_epoch = n // batch_size
    order = None
    for step in range(J):
        slot = step % per_epoch
        if slot == 0:
            order = rng.permutation(n)
        idx = order[slot * batch_size:(slot + 1) * batch_size]
        _, g = sample_loss_grad(model, theta, X[idx], y[idx])
        theta -= eta * g
    return theta


def test_accuracy(model: Model, theta, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    return float(np.mean(model.predict(theta, X) == y))


test_accuracy.__test__ = False  # not a pytest test


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def even_partition(n_samples, K, rng) -> list:
    """Shuffle and split indices into ``K`` shards of ``n_samples // K``.

    A remainder of ``n_samples mod K`` samples is left unused so every
    shard has exactly the same size.
    """
    if K < 1 or n_samples < K:
        raise ConfigurationError(f"cannot split {n_samples} samples over {K} devices")
    size = n_samples // K
    perm = rng.permutation(n_samples)
    return [np.sort(perm[k * size:(k + 1) * size]) for k in range(K)]


def make_synthetic(C, b, S, margin, rng) -> Dataset:
    """Gaussian class clusters scaled into ``[0, 1]``.

    Class means are ``margin`` times standard normal vectors; samples add
    unit-variance noise. Labels are balanced (cyclic) and then shuffled.
    """
    if C < 2 or S < C or b < 1:
        raise ConfigurationError("need C >= 2, b >= 1 and S >= C")
    means = margin * rng.standard_normal((C, b))
    labels = rng.permutation(np.arange(S) % C)
    X = means[labels] + rng.standard_normal((S, b))
    lo, hi = X.min(), X.max()
    X = (X - lo) / (hi - lo) if hi > lo else np.zeros_like(X)
    return Dataset(X, labels.astype(np.int64), C)


# IDX layout: magic (>I), one >I per dimension, then unsigned bytes.
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into a uint8 array."""
    raw = _read_bytes(path)
    name = Path(path).name
    if len(raw) < 4:
        raise IDXFormatError(f"{name}: header truncated at byte 0 (have {len(raw)} bytes, need 4)")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IDXFormatError(f"{name}: bad magic 0x{magic:08x} at byte 0, "
                             f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{name}: header truncated at byte {len(raw)}, need {header} bytes")
    shape = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = header + int(np.prod(shape))
    if len(raw) != expected:
        raise IDXFormatError(f"{name}: expected {expected} bytes for shape {shape}, "
                             f"got {len(raw)} (payload starts at byte {header})")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an MNIST image/label IDX pair; pixels scaled to ``[0, 1]``."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"count mismatch at byte 4: {images.shape[0]} images "
                             f"vs {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(X, labels.astype(np.int64), 10)


def write_idx(path, array):
    """Write a uint8 array as an IDX file (used to build fixtures)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        fh.write(array.tobytes())
