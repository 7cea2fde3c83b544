"""Linear detection heads over frozen encoder features.

A head is one fully connected layer: logit = w . feature + b, trained with
binary cross-entropy where label 1 means fake. Because the layer is affine,
averaging several views' features and then applying the head equals
averaging the per-view logits; the detector leans on that identity.

Training is plain mini-batch gradient descent written against numpy so runs
are bit-reproducible from a seed: fixed zero init, Fisher-Yates batch
order, and a hand-rolled Adam/SGD step with no threading underneath.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .config import canonical_digest
from .encoders import EncoderBackend
from .errors import (
    DimensionMismatchError,
    EmptyBatchError,
    ImageTooSmallError,
    ManifestError,
    SingleClassDatasetError,
)
from .manifest import Manifest, load_image, split_train_val
from .patches import sample_composite
from .rng import derive_seed, fisher_yates_permutation, make_rng
from .validation import (
    center_crop,
    check_binary_labels,
    check_feature_matrix,
)

HEAD_SCHEMA = "shuffleprobe-head/v1"


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy from raw logits.

    Uses the log-sum-exp form max(z,0) - z*y + log(1 + exp(-|z|)), which is
    finite for any float logit.
    """
    z = np.asarray(logits, dtype=np.float64).ravel()
    if z.size == 0:
        raise EmptyBatchError("BCE over an empty batch is undefined")
    y = check_binary_labels(labels, z.size).astype(np.float64)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


class _Optimizer:
    """First-order update rule over a flat parameter vector."""

    def __init__(self, kind: str, lr: float, dim: int):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {kind!r}")
        self.kind = kind
        self.lr = lr
        self.t = 0
        if kind == "adam":
            self.m = np.zeros(dim)
            self.v = np.zeros(dim)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        if self.kind == "sgd":
            return params - self.lr * grad
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + eps)


class LinearHeadClassifier(ClassifierMixin, BaseEstimator):
    """One-layer logistic probe with a serializable fitted state.

    Parameters mirror the training recipe; patch_size and backend_name are
    carried as provenance so a saved head knows which encoder and tile size
    produced its features. Fitted attributes: coef_ (d,), intercept_,
    loss_trace_ (mean BCE per epoch), n_features_in_, n_epochs_run_.
    """

    def __init__(
        self,
        patch_size: int = 28,
        backend_name: str = "avgpool-texture",
        learning_rate: float = 1e-3,
        batch_size: int = 256,
        n_epochs: int = 30,
        optimizer: str = "adam",
        validation_fraction: float = 0.0,
        patience: int = 5,
        threshold: float = 0.5,
        random_state: int = 0,
    ):
        self.patch_size = patch_size
        self.backend_name = backend_name
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.patience = patience
        self.threshold = threshold
        self.random_state = random_state

    # -- training ----------------------------------------------------------

    def _init_state(self, dim: int) -> None:
        self.coef_ = np.zeros(dim)
        self.intercept_ = 0.0
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = dim
        self.loss_trace_: list[float] = []
        self.n_epochs_run_ = 0
        self._rng = make_rng(self.random_state)
        self._opt = _Optimizer(self.optimizer, self.learning_rate, dim + 1)

    def _run_epoch(self, X: np.ndarray, y: np.ndarray) -> float:
        n = X.shape[0]
        order = fisher_yates_permutation(n, self._rng)
        total = 0.0
        for start in range(0, n, self.batch_size):
            idx = order[start : start + self.batch_size]
            xb, yb = X[idx], y[idx].astype(np.float64)
            z = xb @ self.coef_ + self.intercept_
            total += bce_loss(z, y[idx]) * len(idx)
            residual = sigmoid(z) - yb
            grad_w = xb.T @ residual / len(idx)
            grad_b = float(residual.mean())
            packed = self._opt.step(
                np.concatenate([self.coef_, [self.intercept_]]),
                np.concatenate([grad_w, [grad_b]]),
            )
            self.coef_, self.intercept_ = packed[:-1], float(packed[-1])
        self.n_epochs_run_ += 1
        loss = total / n
        self.loss_trace_.append(loss)
        return loss

    def partial_fit(self, X, y, classes=None) -> "LinearHeadClassifier":
        """One pass over the given batch; state persists across calls."""
        X = check_feature_matrix(X)
        y = check_binary_labels(y, X.shape[0])
        if not hasattr(self, "coef_"):
            self._init_state(X.shape[1])
        elif X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"features have {X.shape[1]} columns, head expects "
                f"{self.n_features_in_}"
            )
        self._run_epoch(X, y)
        return self

    def fit(self, X, y) -> "LinearHeadClassifier":
        X = check_feature_matrix(X)
        y = check_binary_labels(y, X.shape[0], require_both=True)
        self._init_state(X.shape[1])

        if self.validation_fraction > 0.0:
            n = X.shape[0]
            order = fisher_yates_permutation(n, make_rng(self.random_state))
            n_val = max(1, int(round(n * self.validation_fraction)))
            val_idx, train_idx = order[:n_val], order[n_val:]
            check_binary_labels(y[train_idx], len(train_idx), require_both=True)
            stopper = _PlateauStopper(self.patience)
            for _ in range(self.n_epochs):
                self._run_epoch(X[train_idx], y[train_idx])
                score = _val_ap(self, X[val_idx], y[val_idx])
                if stopper.update(score, (self.coef_.copy(), self.intercept_)):
                    break
            if stopper.best_state is not None:
                self.coef_, self.intercept_ = stopper.best_state
        else:
            for _ in range(self.n_epochs):
                self._run_epoch(X, y)
        return self

    # -- inference ---------------------------------------------------------

    def _check_ready(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("head is not fitted; call fit or load")
        X = check_feature_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"features have {X.shape[1]} columns, head expects "
                f"{self.n_features_in_}"
            )
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check_ready(X)
        return X @ self.coef_ + self.intercept_

    def logit(self, feature: np.ndarray) -> float:
        """Raw score of a single feature vector."""
        return float(self.decision_function(np.asarray(feature)[None, :])[0])

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        # Ties at the threshold count as fake.
        p = self.predict_proba(X)[:, 1]
        return (p >= self.threshold).astype(np.int64)

    # -- serialization -----------------------------------------------------

    def train_config_digest(self) -> str:
        return canonical_digest(self.get_params())

    def save(self, path: str | Path) -> Path:
        """Write the fitted head as versioned JSON.

        Floats are serialized with shortest-round-trip repr, so a load
        restores bit-identical parameters on any platform.
        """
        if not hasattr(self, "coef_"):
            raise NotFittedError("cannot save an unfitted head")
        payload = {
            "schema": HEAD_SCHEMA,
            "backend_name": self.backend_name,
            "patch_size": self.patch_size,
            "feature_dim": int(self.n_features_in_),
            "weights": [float(v) for v in self.coef_],
            "bias": float(self.intercept_),
            "threshold": float(self.threshold),
            "train_config": self.get_params(),
            "train_config_digest": self.train_config_digest(),
            "loss_trace": [float(v) for v in self.loss_trace_],
            "n_epochs_run": int(self.n_epochs_run_),
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "LinearHeadClassifier":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != HEAD_SCHEMA:
            raise ManifestError(
                f"{path}: expected schema {HEAD_SCHEMA!r}, "
                f"got {data.get('schema')!r}"
            )
        clf = cls(**data["train_config"])
        weights = np.asarray(data["weights"], dtype=np.float64)
        if weights.shape != (data["feature_dim"],):
            raise DimensionMismatchError(
                f"{path}: weight count {weights.shape[0]} does not match "
                f"declared feature_dim {data['feature_dim']}"
            )
        clf.coef_ = weights
        clf.intercept_ = float(data["bias"])
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = int(data["feature_dim"])
        clf.loss_trace_ = list(data.get("loss_trace", []))
        clf.n_epochs_run_ = int(data.get("n_epochs_run", 0))
        return clf


class _PlateauStopper:
    """Keeps the best-scoring state; fires after `patience` stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_state = None
        self.stale = 0

    def update(self, score: float, state) -> bool:
        if score > self.best_score + 1e-9:
            self.best_score = score
            self.best_state = state
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def _val_ap(clf: LinearHeadClassifier, X: np.ndarray, y: np.ndarray) -> float:
    from .metrics import average_precision

    if len(np.unique(y)) < 2:
        # Degenerate validation slice: fall back to negative loss.
        return -bce_loss(clf.decision_function(X), y)
    return average_precision(clf.decision_function(X), y)


# ---------------------------------------------------------------------------
# Feature building from manifests
# ---------------------------------------------------------------------------


def build_training_features(
    manifest: Manifest,
    backend: EncoderBackend,
    patch_size: int,
    seed: int,
    views_per_sample: int = 1,
    image_cache: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Encode every manifest row into (X, y, ids).

    For patch_size equal to the backend input the image is center-cropped
    and encoded once (views collapse to one: the crop is deterministic).
    Smaller patch sizes draw `views_per_sample` tile composites from the
    full image grid, one feature row per view. Per-view seeds derive from
    (seed, image id, view), so row order never changes the features.

    image_cache, when given, holds decoded images keyed by image id and is
    filled on first use; repeated epochs then skip the PNG decode.
    """
    if not manifest.rows:
        raise EmptyBatchError("manifest has no rows to featurize")
    size = backend.input_size
    feats, labels, ids = [], [], []
    for row in manifest.rows:
        if image_cache is not None and row.image_id in image_cache:
            img = image_cache[row.image_id]
        else:
            img = load_image(manifest.resolve(row))
            if image_cache is not None:
                image_cache[row.image_id] = img
        if img.shape[0] < size or img.shape[1] < size:
            raise ImageTooSmallError(
                f"{row.image_path} is {img.shape[1]}x{img.shape[0]}, "
                f"needs at least {size}px on both sides"
            )
        if patch_size == size:
            views = [center_crop(img, size)]
        else:
            views = [
                sample_composite(
                    img,
                    patch_size,
                    size,
                    make_rng(derive_seed(seed, f"feat:{row.image_id}#v{v}")),
                )
                for v in range(views_per_sample)
            ]
        for view in views:
            feats.append(backend.encode(view))
            labels.append(row.label)
            ids.append(row.image_id)
    return np.stack(feats), np.asarray(labels, dtype=np.int64), ids


def train_head_on_manifest(
    manifest: Manifest,
    backend: EncoderBackend,
    patch_size: int,
    *,
    learning_rate: float = 1e-3,
    batch_size: int = 256,
    epochs: int = 30,
    optimizer: str = "adam",
    views_per_epoch: int = 1,
    validation_fraction: float = 0.1,
    patience: int = 5,
    threshold: float = 0.5,
    seed: int = 0,
) -> LinearHeadClassifier:
    """Full training loop for one head.

    Shuffled views are redrawn every epoch (the permutation is free
    augmentation); the unshuffled full-size head sees fixed features, so a
    single build feeds all epochs. An optional validation carve-out is
    split per image path and scored with average precision; training stops
    on a plateau and the best-scoring epoch's parameters win.
    """
    clf = LinearHeadClassifier(
        patch_size=patch_size,
        backend_name=backend.name,
        learning_rate=learning_rate,
        batch_size=batch_size,
        n_epochs=epochs,
        optimizer=optimizer,
        validation_fraction=0.0,
        patience=patience,
        threshold=threshold,
        random_state=seed,
    )
    if len({r.label for r in manifest.rows}) < 2:
        raise SingleClassDatasetError(
            "training manifest must hold both real and fake rows"
        )
    train_m, val_m = manifest, None
    if validation_fraction > 0.0:
        train_m, val_m = split_train_val(
            manifest, val_fraction=validation_fraction, seed=seed
        )
        if not val_m.rows or len({r.label for r in train_m.rows}) < 2:
            train_m, val_m = manifest, None

    static = patch_size == backend.input_size
    if static:
        X, y, _ = build_training_features(train_m, backend, patch_size, seed)
    val_xy = None
    if val_m is not None:
        Xv, yv, _ = build_training_features(
            val_m, backend, patch_size, derive_seed(seed, "val-views"),
            views_per_sample=views_per_epoch,
        )
        val_xy = (Xv, yv)

    stopper = _PlateauStopper(patience)
    cache: dict[str, np.ndarray] = {}
    for epoch in range(epochs):
        if not static:
            X, y, _ = build_training_features(
                train_m,
                backend,
                patch_size,
                derive_seed(seed, f"epoch:{epoch}"),
                views_per_sample=views_per_epoch,
                image_cache=cache,
            )
        clf.partial_fit(X, y)
        if val_xy is not None:
            score = _val_ap(clf, *val_xy)
            if stopper.update(score, (clf.coef_.copy(), clf.intercept_)):
                break
    if val_xy is not None and stopper.best_state is not None:
        clf.coef_, clf.intercept_ = stopper.best_state
    return clf
