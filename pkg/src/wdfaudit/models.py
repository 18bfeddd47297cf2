"""Score models ``g_theta`` with spatial derivatives, plus desk-scale trainers.

Every model classifies by ``h(x) = 1{g(x) >= 0}``.  ``score``, ``grad_x`` and
``hess_x`` accept a single point ``(d,)`` or a batch ``(N, d)``.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import DataError, TrainingError, UnsupportedModelError

FORMAT_NAME = "wdfaudit-model"
FORMAT_VERSION = 1


def dual_exponent(q: float) -> float:
    """Conjugate exponent ``q*`` with ``1/q + 1/q* = 1``."""
    if q == 1:
        return np.inf
    if np.isinf(q):
        return 1.0
    if q < 1:
        raise ValueError("q must be >= 1")
    return q / (q - 1.0)


def lp_norm(v, p: float, axis=-1):
    v = np.abs(np.asarray(v, dtype=np.float64))
    if np.isinf(p):
        return v.max(axis=axis)
    if p == 1:
        return v.sum(axis=axis)
    if p == 2:
        return np.sqrt((v * v).sum(axis=axis))
    return (v**p).sum(axis=axis) ** (1.0 / p)


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


class ScoreModel:
    """Base class; subclasses implement the batched ``_score/_grad/_hess``."""

    kind = "abstract"
    smooth = True

    def __init__(self, radius: float | None = None, standardization: dict | None = None):
        self.radius = radius
        self.standardization = standardization

    # -- evaluation -----------------------------------------------------
    def score(self, x):
        X, single = _batch(x)
        self._check_dim(X)
        s = self._score(X)
        return float(s[0]) if single else s

    def grad_x(self, x):
        X, single = _batch(x)
        self._check_dim(X)
        g = self._grad(X)
        return g[0] if single else g

    def hess_x(self, x):
        if not self.smooth:
            raise UnsupportedModelError(f"{self.kind} has no second derivatives")
        X, single = _batch(x)
        self._check_dim(X)
        H = self._hess(X)
        return H[0] if single else H

    def predict(self, x):
        s = self.score(x)
        return (np.asarray(s) >= 0).astype(np.int64)

    def _check_dim(self, X):
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DataError(f"expected points of dimension {self.dim}, got shape {X.shape}")

    # -- parameters -----------------------------------------------------
    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    def with_params(self, theta) -> "ScoreModel":
        raise NotImplementedError

    def grad_theta(self, x) -> np.ndarray:
        raise NotImplementedError

    def within_radius(self) -> bool:
        return self.radius is None or float(np.linalg.norm(self.params)) <= self.radius + 1e-12

    # -- serialization --------------------------------------------------
    def _payload(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "radius": self.radius,
            "standardization": self.standardization,
            "params": self._payload(),
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


class LinearScore(ScoreModel):
    """``g(x) = w.x + b``; ``kind`` is ``linear`` (SVM) or ``logistic``."""

    def __init__(self, w, b=0.0, kind="linear", **kw):
        super().__init__(**kw)
        self.w = np.asarray(w, dtype=np.float64).ravel()
        self.b = float(b)
        self.kind = kind

    @property
    def dim(self):
        return self.w.shape[0]

    def _score(self, X):
        return X @ self.w + self.b

    def _grad(self, X):
        return np.broadcast_to(self.w, X.shape).copy()

    def _hess(self, X):
        return np.zeros((X.shape[0], self.dim, self.dim))

    @property
    def params(self):
        return np.append(self.w, self.b)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return LinearScore(theta[:-1], theta[-1], self.kind, radius=self.radius,
                           standardization=self.standardization)

    def grad_theta(self, x):
        X, single = _batch(x)
        G = np.hstack([X, np.ones((X.shape[0], 1))])
        return G[0] if single else G

    def _payload(self):
        return {"w": self.w.tolist(), "b": self.b}


class RBFScore(ScoreModel):
    """Kernel expansion ``g(x) = sum_j c_j exp(-gamma |x - x_j|^2) + b``."""

    kind = "rbf-svm"

    def __init__(self, centers, coef, intercept, gamma, **kw):
        super().__init__(**kw)
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        self.coef = np.asarray(coef, dtype=np.float64).ravel()
        self.intercept = float(intercept)
        self.gamma = float(gamma)
        if self.centers.shape[0] != self.coef.shape[0]:
            raise ValueError("one coefficient per center")

    @property
    def dim(self):
        return self.centers.shape[1]

    def _kernel(self, X):
        # accumulate |x - c|^2 per coordinate; exact at the centers and never
        # forms the (n, k, d) difference tensor
        sq = np.zeros((X.shape[0], self.centers.shape[0]))
        for j in range(X.shape[1]):
            sq += np.subtract.outer(X[:, j], self.centers[:, j]) ** 2
        return np.exp(-self.gamma * sq)

    def _score(self, X):
        return self._kernel(X) @ self.coef + self.intercept

    def _grad(self, X):
        wk = self._kernel(X) * self.coef
        return -2.0 * self.gamma * (wk.sum(axis=1)[:, None] * X - wk @ self.centers)

    def _hess(self, X):
        wk = self._kernel(X) * self.coef
        C = self.centers
        n, d = X.shape
        s = wk.sum(axis=1)
        m = wk @ C
        cc = (wk @ np.einsum("ki,kj->kij", C, C).reshape(-1, d * d)).reshape(n, d, d)
        # sum_k w_k (x - c_k)(x - c_k)^T
        outer = s[:, None, None] * X[:, :, None] * X[:, None, :] - X[:, :, None] * m[:, None, :] \
            - m[:, :, None] * X[:, None, :] + cc
        eye = np.eye(d)[None] * (2.0 * self.gamma * s)[:, None, None]
        return 4.0 * self.gamma**2 * outer - eye

    @property
    def params(self):
        return np.append(self.coef, self.intercept)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return RBFScore(self.centers, theta[:-1], theta[-1], self.gamma, radius=self.radius,
                        standardization=self.standardization)

    def grad_theta(self, x):
        X, single = _batch(x)
        K = self._kernel(X)
        G = np.hstack([K, np.ones((X.shape[0], 1))])
        return G[0] if single else G

    def _payload(self):
        return {
            "centers": self.centers.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "gamma": self.gamma,
        }


class MLPScore(ScoreModel):
    """tanh hidden layers and a linear output unit.

    ``weights[l]`` has shape ``(n_out, n_in)``.  Second derivatives are exact,
    propagated in forward mode.
    """

    kind = "mlp"

    def __init__(self, weights, biases, activation="tanh", **kw):
        super().__init__(**kw)
        if activation != "tanh":
            raise UnsupportedModelError("only tanh activations keep the score twice differentiable")
        self.weights = [np.atleast_2d(np.asarray(W, dtype=np.float64)) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in biases]
        if self.weights[-1].shape[0] != 1:
            raise ValueError("the output layer must have a single unit")

    @property
    def dim(self):
        return self.weights[0].shape[1]

    def _forward(self, X):
        acts = [X]
        a = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ W.T + b)
            acts.append(a)
        out = a @ self.weights[-1].T + self.biases[-1]
        return out[:, 0], acts

    def _score(self, X):
        return self._forward(X)[0]

    def _grad(self, X):
        _, acts = self._forward(X)
        delta = np.broadcast_to(self.weights[-1][0], (X.shape[0], self.weights[-1].shape[1]))
        for W, a in zip(reversed(self.weights[:-1]), reversed(acts[1:])):
            delta = (delta * (1.0 - a * a)) @ W
        return np.array(delta)

    def _hess(self, X):
        n, d = X.shape
        a = X
        J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        H = np.zeros((n, d, d, d))
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ W.T + b
            Jz = np.einsum("ij,njd->nid", W, J)
            Hz = np.einsum("ij,njde->nide", W, H)
            t = np.tanh(z)
            d1 = 1.0 - t * t
            d2 = -2.0 * t * d1
            H = d2[:, :, None, None] * np.einsum("nid,nie->nide", Jz, Jz) + d1[:, :, None, None] * Hz
            J = d1[:, :, None] * Jz
            a = t
        return np.einsum("j,njde->nde", self.weights[-1][0], H)

    @property
    def params(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + W.size].reshape(W.shape))
            pos += W.size
            biases.append(theta[pos:pos + b.size])
            pos += b.size
        return MLPScore(weights, biases, radius=self.radius, standardization=self.standardization)

    def grad_theta(self, x):
        X, single = _batch(x)
        _, acts = self._forward(X)
        n = X.shape[0]
        blocks = []
        delta = np.ones((n, 1))
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = acts[layer]
            blocks.append(np.hstack([np.einsum("ni,nj->nij", delta, a_in).reshape(n, -1), delta]))
            if layer > 0:
                delta = (delta @ self.weights[layer]) * (1.0 - acts[layer] ** 2)
        G = np.hstack(blocks[::-1])
        return G[0] if single else G

    def _payload(self):
        return {
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": "tanh",
        }


class CallableScore(ScoreModel):
    """Wrap user-supplied callables (each mapping a batch to a batch)."""

    kind = "callable"

    def __init__(self, dim, score, grad, hess=None, **kw):
        super().__init__(**kw)
        self._dim = int(dim)
        self._f, self._g, self._h = score, grad, hess
        self.smooth = hess is not None

    @property
    def dim(self):
        return self._dim

    def _score(self, X):
        return np.asarray(self._f(X), dtype=np.float64)

    def _grad(self, X):
        return np.asarray(self._g(X), dtype=np.float64)

    def _hess(self, X):
        return np.asarray(self._h(X), dtype=np.float64)

    @property
    def params(self):
        return np.zeros(0)

    def _payload(self):
        raise UnsupportedModelError("callable models cannot be serialized")


def model_from_dict(record: dict) -> ScoreModel:
    if record.get("format") != FORMAT_NAME:
        raise ValueError("not a wdfaudit model record")
    if record.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model record version {record.get('version')}")
    kind, p = record["kind"], record["params"]
    kw = {"radius": record.get("radius"), "standardization": record.get("standardization")}
    if kind in ("linear", "logistic"):
        return LinearScore(p["w"], p["b"], kind, **kw)
    if kind == "rbf-svm":
        return RBFScore(p["centers"], p["coef"], p["intercept"], p["gamma"], **kw)
    if kind == "mlp":
        return MLPScore(p["weights"], p["biases"], p.get("activation", "tanh"), **kw)
    raise UnsupportedModelError(f"unknown model kind {kind!r}")


def load_model(path) -> ScoreModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# hyperparameters follow the audited reference setup
DEFAULTS = {
    "logreg": {"C": 1.0, "max_iter": 1000},
    "linsvm": {"C": 1.0, "max_iter": 1000},
    "rbfsvm": {"C": 1.0, "gamma": 0.5},
    "mlp": {"hidden": (10, 10), "max_iter": 1000, "tol": 1e-4},
}
ALIASES = {"logistic": "logreg", "linear": "linsvm", "rbf-svm": "rbfsvm", "svm": "linsvm"}


def train(kind: str, data, seed: int = 0, **hyper) -> ScoreModel:
    """Fit a classifier on the features only (the sensitive column is never seen)."""
    from sklearn.exceptions import ConvergenceWarning

    kind = ALIASES.get(kind, kind)
    if kind not in DEFAULTS:
        raise UnsupportedModelError(f"unknown model kind {kind!r}")
    X, y = data.features, data.labels
    if np.unique(y).size < 2:
        raise TrainingError("training labels contain a single class")
    hp = {**DEFAULTS[kind], **hyper}
    std = getattr(data, "standardization", None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if kind == "logreg":
            from sklearn.linear_model import LogisticRegression

            clf = LogisticRegression(C=hp["C"], max_iter=hp["max_iter"]).fit(X, y)
            model = LinearScore(clf.coef_[0], clf.intercept_[0], "logistic")
        elif kind == "linsvm":
            from sklearn.svm import LinearSVC

            clf = LinearSVC(C=hp["C"], max_iter=hp["max_iter"], dual="auto", random_state=seed).fit(X, y)
            model = LinearScore(clf.coef_[0], clf.intercept_[0], "linear")
        elif kind == "rbfsvm":
            from sklearn.svm import SVC

            clf = SVC(kernel="rbf", C=hp["C"], gamma=hp["gamma"]).fit(X, y)
            model = RBFScore(clf.support_vectors_, clf.dual_coef_[0], clf.intercept_[0], hp["gamma"])
        else:
            from sklearn.neural_network import MLPClassifier

            clf = MLPClassifier(
                hidden_layer_sizes=tuple(hp["hidden"]),
                activation="tanh",
                solver="lbfgs",
                max_iter=hp["max_iter"],
                tol=hp["tol"],
                random_state=seed,
            ).fit(X, y)
            model = MLPScore([W.T for W in clf.coefs_], clf.intercepts_)
    model.standardization = std
    model.radius = float(np.linalg.norm(model.params))
    return model
