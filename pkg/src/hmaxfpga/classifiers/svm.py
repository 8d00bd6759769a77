"""Linear one-vs-all SVM trained by dual coordinate descent (hinge loss).

The bias is learned as the weight of an appended constant feature, the
usual trick for dual coordinate descent. Weights are rounded to float32
after training because the stored model holds 32-bit coefficients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateTrainingError, FormatError, InvalidArgumentError, TruncatedFileError

SVM_MAGIC = b"HMXS"
MODEL_VERSION = 1
RESULT_BITS = 84
COEFF_BITS = 32
_HEADER = struct.Struct("<4sIII")


@dataclass(eq=False)
class SvmModel:
    weights: np.ndarray  # (classes, d) float32
    biases: np.ndarray   # (classes,) float32

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SvmModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.biases, other.biases)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise InvalidArgumentError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X @ self.weights.astype(np.float64).T + self.biases.astype(np.float64)

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(self.decision_function(X), axis=1)

    def memory_bits(self) -> int:
        return svm_memory_bits(self.classes, self.n_features)

    def summary(self) -> str:
        lines = [f"linear one-vs-all SVM: {self.classes} classes x {self.n_features} features"]
        for c in range(self.classes):
            w = self.weights[c]
            lines.append(f"class {c}: bias {self.biases[c]:+.6g} |w| {np.linalg.norm(w):.6g} "
                         f"max |w_i| {np.abs(w).max():.6g}")
        return "\n".join(lines)


def svm_memory_bits(classes: int, n_features: int) -> int:
    return classes * n_features * COEFF_BITS + RESULT_BITS


def _dual_cd(X, y, C, epochs, tol, rng):
    """Hinge-loss dual coordinate descent for one binary problem.

    Stops when the duality gap falls to ``tol * max(1, primal)``.
    """
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qii = np.einsum("ij,ij->i", X, X)
    for _ in range(epochs):
        for i in rng.permutation(n):
            if qii[i] == 0.0:
                continue
            g = y[i] * (w @ X[i]) - 1.0
            a = alpha[i]
            new = min(max(a - g / qii[i], 0.0), C)
            if new != a:
                w += (new - a) * y[i] * X[i]
                alpha[i] = new
        margins = 1.0 - y * (X @ w)
        ww = w @ w
        primal = 0.5 * ww + C * np.maximum(margins, 0.0).sum()
        dual = alpha.sum() - 0.5 * ww
        if primal - dual <= tol * max(1.0, primal):
            break
    return w


def train_linear_svm_ova(X, labels, classes: int, C: float = 1.0, seed: int = 0,
                         epochs: int = 1000, tol: float = 1e-4) -> SvmModel:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise InvalidArgumentError("features must be (n, d) with one label per row")
    if classes < 2:
        raise DegenerateTrainingError("need at least two classes")
    if labels.min() < 0 or labels.max() >= classes:
        raise InvalidArgumentError(f"class ids must lie in [0, {classes})")
    counts = np.bincount(labels, minlength=classes)
    if (counts == 0).any():
        raise DegenerateTrainingError(f"classes without examples: {np.flatnonzero(counts == 0).tolist()}")
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    weights = np.zeros((classes, X.shape[1]), dtype=np.float32)
    biases = np.zeros(classes, dtype=np.float32)
    for c in range(classes):
        rng = np.random.default_rng([seed, c])
        y = np.where(labels == c, 1.0, -1.0)
        w = _dual_cd(Xb, y, C, epochs, tol, rng)
        weights[c] = w[:-1]
        biases[c] = w[-1]
    return SvmModel(weights, biases)


def save_svm(model: SvmModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SVM_MAGIC, MODEL_VERSION, model.classes, model.n_features))
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.biases.astype("<f4").tobytes())


def load_svm(path) -> SvmModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: SVM header truncated")
    magic, version, classes, d = _HEADER.unpack_from(data)
    if magic != SVM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    need = 4 * (classes * d + classes)
    body = data[_HEADER.size:]
    if len(body) != need:
        raise TruncatedFileError(f"{path}: expected {need} bytes of coefficients, got {len(body)}")
    w = np.frombuffer(body, dtype="<f4", count=classes * d).reshape(classes, d).astype(np.float32)
    b = np.frombuffer(body, dtype="<f4", offset=4 * classes * d, count=classes).astype(np.float32)
    return SvmModel(w, b)
