"""Gentle boosting with complete depth-3 regression trees as weak learners."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateTrainingError, FormatError, InvalidArgumentError, TruncatedFileError

N_NODES = 7
N_LEAVES = 8
BOOST_MAGIC = b"HMXB"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(eq=False)
class BoostModel:
    """Trees stored heap-style: node i has children 2i+1 and 2i+2; leaf i is node 7+i.

    A sample goes left when ``x[feature] <= threshold``.
    """

    features: np.ndarray    # (T, 7) int64
    thresholds: np.ndarray  # (T, 7) float64
    leaves: np.ndarray      # (T, 8) float64
    n_features: int

    @classmethod
    def empty(cls, n_features: int) -> "BoostModel":
        return cls(np.zeros((0, N_NODES), np.int64), np.zeros((0, N_NODES)), np.zeros((0, N_LEAVES)), n_features)

    def __len__(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BoostModel):
            return NotImplemented
        return (self.n_features == other.n_features
                and all(np.array_equal(a, b) for a, b in
                        ((self.features, other.features), (self.thresholds, other.thresholds),
                         (self.leaves, other.leaves))))

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        """(n, T) index of the leaf each sample reaches in each tree."""
        X = np.atleast_2d(X)
        n = X.shape[0]
        node = np.zeros((n, len(self)), dtype=np.int64)
        cols = np.arange(len(self))
        for _ in range(3):
            f = self.features[cols, node]
            thr = self.thresholds[cols, node]
            go_right = X[np.arange(n)[:, None], f] > thr
            node = 2 * node + 1 + go_right
        return node - N_NODES

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise InvalidArgumentError(f"expected {self.n_features} features, got {X.shape[1]}")
        if len(self) == 0:
            scores = np.zeros(X.shape[0])
        else:
            leaf = self.leaf_index(X)
            scores = self.leaves[np.arange(len(self)), leaf].sum(axis=1)
        return scores[0] if single else scores

    def predict(self, X) -> np.ndarray:
        return np.where(np.asarray(self.decision_function(X)) >= 0, 1, -1)

    def summary(self) -> str:
        lines = [f"gentle boost: {len(self)} trees over {self.n_features} features"]
        for t in range(len(self)):
            nodes = " ".join(f"x{f}<={thr:.6g}" for f, thr in zip(self.features[t], self.thresholds[t]))
            leaves = " ".join(f"{v:+.4f}" for v in self.leaves[t])
            lines.append(f"tree {t}: {nodes} | {leaves}")
        return "\n".join(lines)


def boost_predict(model: BoostModel, x) -> float:
    return float(model.decision_function(np.asarray(x, dtype=np.float64).reshape(-1)))


def _best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """(feature, threshold, gain) minimizing weighted squared error, or None.

    Thresholds are midpoints between consecutive distinct values. With
    labels in {-1, +1} the residual error of a split is
    ``W - S_L^2 / W_L - S_R^2 / W_R``, so we maximize the subtracted term.
    """
    n, nf = X.shape
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ws = w[order]
    wys = (w * y)[order]
    cw = np.cumsum(ws, axis=0)[:-1]
    cs = np.cumsum(wys, axis=0)[:-1]
    tw, ts = ws.sum(axis=0), wys.sum(axis=0)
    rw, rs = tw - cw, ts - cs
    valid = (xs[1:] > xs[:-1]) & (cw > 0) & (rw > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(valid, cs * cs / cw + rs * rs / rw, -np.inf)
    # ties: lowest feature, then lowest threshold
    flat = int(np.argmax(score.T))
    f, i = divmod(flat, n - 1)
    return f, 0.5 * (xs[i, f] + xs[i + 1, f]), float(score[i, f])


def _fit_tree(X, y, w):
    features = np.zeros(N_NODES, dtype=np.int64)
    thresholds = np.full(N_NODES, np.inf)
    leaves = np.zeros(N_LEAVES)
    members = {0: np.arange(X.shape[0])}
    for node in range(N_NODES):
        idx = members[node]
        split = _best_split(X[idx], y[idx], w[idx]) if idx.size else None
        if split is not None:
            features[node], thresholds[node], _ = split
        right = X[idx, features[node]] > thresholds[node]
        members[2 * node + 1] = idx[~right]
        members[2 * node + 2] = idx[right]
    for leaf in range(N_LEAVES):
        idx = members[N_NODES + leaf]
        wsum = w[idx].sum()
        if wsum > 0:
            leaves[leaf] = np.clip((w[idx] * y[idx]).sum() / wsum, -1.0, 1.0)
    return features, thresholds, leaves


def train_gentleboost(X, y, rounds: int, callback=None) -> BoostModel:
    """Gentle boosting: each round fits a tree to the labels by weighted least
    squares and reweights ``w <- w exp(-y f(x))``.

    ``callback(round, model_so_far_scores)`` is invoked after every round
    with the training-set scores, if given.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if rounds < 1:
        raise DegenerateTrainingError(f"rounds must be >= 1, got {rounds}")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("features must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1, 1))):
        raise InvalidArgumentError("boosting labels must be -1 or +1")
    if (y == 1).sum() < 2 or (y == -1).sum() < 2:
        raise DegenerateTrainingError("need at least two examples of each label")
    y = y.astype(np.float64)
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    F = np.zeros(n)
    feats, thrs, lvs = [], [], []
    for r in range(rounds):
        f, t, lv = _fit_tree(X, y, w)
        feats.append(f)
        thrs.append(t)
        lvs.append(lv)
        tree = BoostModel(f[None], t[None], lv[None], X.shape[1])
        fx = lv[tree.leaf_index(X)[:, 0]]
        F += fx
        w = w * np.exp(-y * fx)
        w /= w.sum()
        if callback is not None:
            callback(r, F.copy())
    return BoostModel(np.array(feats), np.array(thrs), np.array(lvs), X.shape[1])


def exp_loss(model: BoostModel, X, y) -> float:
    return float(np.exp(-np.asarray(y) * model.decision_function(X)).sum())


def save_boost(model: BoostModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BOOST_MAGIC, MODEL_VERSION, len(model), model.n_features))
        for t in range(len(model)):
            fh.write(model.features[t].astype("<u4").tobytes())
            fh.write(model.thresholds[t].astype("<f8").tobytes())
            fh.write(model.leaves[t].astype("<f8").tobytes())


def load_boost(path) -> BoostModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: boost model header truncated")
    magic, version, n_trees, n_features = _HEADER.unpack_from(data)
    if magic != BOOST_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    per_tree = 4 * N_NODES + 8 * N_NODES + 8 * N_LEAVES
    body = data[_HEADER.size:]
    if len(body) != n_trees * per_tree:
        raise TruncatedFileError(f"{path}: expected {n_trees * per_tree} bytes of trees, got {len(body)}")
    rec = np.dtype([("f", "<u4", N_NODES), ("t", "<f8", N_NODES), ("l", "<f8", N_LEAVES)])
    arr = np.frombuffer(body, dtype=rec, count=n_trees)
    return BoostModel(arr["f"].astype(np.int64).reshape(n_trees, N_NODES),
                      arr["t"].astype(np.float64).reshape(n_trees, N_NODES),
                      arr["l"].astype(np.float64).reshape(n_trees, N_LEAVES), n_features)
