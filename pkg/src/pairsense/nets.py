"""Single-hidden-layer classifiers and the linear SVM, hand-rolled on numpy.

The network is one 1024-unit rectified-linear hidden layer with either a
sigmoid head (touch detection) or a 6-way softmax head (indenter tips),
trained by mini-batch Adam on cross-entropy. Gradients are exact backprop
and are checked against central finite differences on sampled coordinates.

The linear SVM minimizes mean hinge loss plus an L2 penalty by deterministic
full-batch subgradient descent with tail-averaged weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .learning import LearningError, Standardizer

HIDDEN_UNITS = 1024
MLP_BATCH = 128
MLP_EPOCHS = 30
MLP_LR = 1e-3


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MlpModel:
    """One-hidden-layer network; head is "sigmoid" (1 unit) or "softmax"."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    head: str
    standardizer: Standardizer
    seed: int
    loss_curve: list[float] = field(default_factory=list)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def _forward(self, Z: np.ndarray):
        z1 = Z @ self.W1 + self.b1
        h = _relu(z1)
        z2 = h @ self.W2 + self.b2
        p = _sigmoid(z2) if self.head == "sigmoid" else _softmax(z2)
        return z1, h, p

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self._forward(self.standardizer.transform(X))[2]

    def predict(self, X: np.ndarray) -> np.ndarray:
        p = self.predict_proba(X)
        if self.head == "sigmoid":
            return (p[:, 0] >= 0.5).astype(int)
        return p.argmax(axis=1)

    def loss_and_grads(self, Z: np.ndarray, y: np.ndarray):
        """Mean cross-entropy and exact parameter gradients on a
        standardized batch. y: (n,) float in {0,1} for sigmoid, (n,) int
        class ids for softmax."""
        n = len(Z)
        z1, h, p = self._forward(Z)
        eps = 1e-12
        if self.head == "sigmoid":
            y2 = y.reshape(-1, 1).astype(float)
            loss = -np.mean(y2 * np.log(p + eps) + (1 - y2) * np.log(1 - p + eps))
            dz2 = (p - y2) / n
        else:
            idx = y.astype(int).ravel()
            loss = -np.mean(np.log(p[np.arange(n), idx] + eps))
            dz2 = p.copy()
            dz2[np.arange(n), idx] -= 1.0
            dz2 /= n
        dW2 = h.T @ dz2
        db2 = dz2.sum(axis=0)
        dh = dz2 @ self.W2.T
        dz1 = dh * (z1 > 0)
        dW1 = Z.T @ dz1
        db1 = dz1.sum(axis=0)
        return loss, [dW1, db1, dW2, db2]


def init_mlp(n_features: int, head: str, standardizer: Standardizer, seed: int = 0, hidden: int = HIDDEN_UNITS) -> MlpModel:
    if head not in ("sigmoid", "softmax"):
        raise LearningError(f"unknown head {head!r}")
    n_out = 1 if head == "sigmoid" else 6
    rng = np.random.default_rng(seed)
    return MlpModel(
        W1=rng.normal(0.0, 1.0 / np.sqrt(n_features), (n_features, hidden)),
        b1=np.zeros(hidden),
        W2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, n_out)),
        b2=np.zeros(n_out),
        head=head,
        standardizer=standardizer,
        seed=seed,
    )


def fit_mlp(
    X: np.ndarray,
    y: np.ndarray,
    head: str,
    epochs: int = MLP_EPOCHS,
    batch: int = MLP_BATCH,
    lr: float = MLP_LR,
    seed: int = 0,
    hidden: int = HIDDEN_UNITS,
) -> MlpModel:
    """Mini-batch Adam training; batch order is the only seed-dependent part
    beyond initialization."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    classes = np.unique(y)
    if head == "sigmoid" and len(classes) < 2:
        raise LearningError("touch training needs both classes present")
    if head == "softmax" and len(classes) < 6:
        raise LearningError(f"tip training needs all 6 classes, got {sorted(classes.tolist())}")
    std = Standardizer.fit(X)
    Z = std.transform(X)
    model = init_mlp(X.shape[1], head, std, seed=seed, hidden=hidden)
    rng = np.random.default_rng(seed + 1)
    m = [np.zeros_like(p) for p in model.params()]
    v = [np.zeros_like(p) for p in model.params()]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(len(Z))
        losses = []
        for start in range(0, len(Z), batch):
            idx = order[start : start + batch]
            loss, grads = model.loss_and_grads(Z[idx], y[idx])
            losses.append(loss)
            t += 1
            params = model.params()
            for i, (p, g) in enumerate(zip(params, grads)):
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                mh = m[i] / (1 - b1**t)
                vh = v[i] / (1 - b2**t)
                p -= lr * mh / (np.sqrt(vh) + eps)
        model.loss_curve.append(float(np.mean(losses)))
    return model


def gradient_check(model: MlpModel, Z: np.ndarray, y: np.ndarray, n_coords: int = 60, step: float = 1e-5) -> float:
    """Max relative error of analytic gradients vs central finite
    differences over deterministically sampled parameter coordinates.

    ``Z`` is a small standardized batch (<= 8 rows). The relative error uses
    max(|analytic|, |numeric|, 1e-6) as scale so exact zeros compare clean.
    """
    if len(Z) > 8:
        raise LearningError("gradient check expects a batch of at most 8 rows")
    _, grads = model.loss_and_grads(Z, y)
    params = model.params()
    rng = np.random.default_rng(12345)
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.ravel()
        flat_g = g.ravel()
        take = min(n_coords, flat_p.size)
        coords = rng.choice(flat_p.size, size=take, replace=False)
        for c in coords:
            orig = flat_p[c]
            flat_p[c] = orig + step
            lp, _ = model.loss_and_grads(Z, y)
            flat_p[c] = orig - step
            lm, _ = model.loss_and_grads(Z, y)
            flat_p[c] = orig
            fd = (lp - lm) / (2 * step)
            scale = max(abs(flat_g[c]), abs(fd), 1e-6)
            worst = max(worst, abs(flat_g[c] - fd) / scale)
    return worst


# --- linear SVM -----------------------------------------------------------------------


@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    C: float
    standardizer: Standardizer

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(X) @ self.w + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision(X) >= 0).astype(int)


def fit_svm(X: np.ndarray, y: np.ndarray, C: float = 1.0, epochs: int = 300, lr0: float = 0.5) -> LinearSvmModel:
    """Hinge + L2 by deterministic full-batch subgradient descent.

    y in {0, 1}; the returned weights are the average over the last half of
    the epochs, which stabilizes the non-smooth descent.
    """
    X = np.asarray(X, dtype=float)
    y01 = np.asarray(y).ravel()
    if len(np.unique(y01)) < 2:
        raise LearningError("SVM training needs both classes present")
    ys = np.where(y01 > 0, 1.0, -1.0)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    n, p = Z.shape
    w = np.zeros(p)
    b = 0.0
    w_acc = np.zeros(p)
    b_acc = 0.0
    n_acc = 0
    for t in range(epochs):
        margins = ys * (Z @ w + b)
        active = margins < 1.0
        gw = w / C - (ys[active, None] * Z[active]).sum(axis=0) / n
        gb = -ys[active].sum() / n
        lr = lr0 / (1.0 + t / 20.0)
        w -= lr * gw
        b -= lr * gb
        if t >= epochs // 2:
            w_acc += w
            b_acc += b
            n_acc += 1
    return LinearSvmModel(w=w_acc / n_acc, b=b_acc / n_acc, C=C, standardizer=std)


# --- spec-facing training fronts -------------------------------------------------------


def fit_touch_classifier(X: np.ndarray, touch: np.ndarray, kind: str = "mlp", seed: int = 0, epochs: int | None = None):
    """Touch/no-touch classifier on ambient-subtracted features.

    ``touch`` is the (depth > 0) label. kind "mlp" trains the 1024-unit
    sigmoid network, "svm" the linear SVM.
    """
    if kind == "mlp":
        return fit_mlp(X, touch, head="sigmoid", seed=seed, epochs=epochs or MLP_EPOCHS)
    if kind == "svm":
        return fit_svm(X, touch)
    raise LearningError(f"unknown touch classifier kind {kind!r}")


def fit_tip_classifier(X: np.ndarray, tip_class0: np.ndarray, seed: int = 0, epochs: int | None = None) -> MlpModel:
    """Six-way softmax tip classifier; labels are 0-based class ids."""
    return fit_mlp(X, tip_class0, head="softmax", seed=seed, epochs=epochs or MLP_EPOCHS)
