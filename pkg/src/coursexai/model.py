"""Predictor contract, reference models, stratified split and balanced accuracy.

Both reference models are pure numpy so that predictions are bit-reproducible
and the recurrent network's gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import ValidationError

LOGISTIC_FLAT = "LogisticFlat"
RECURRENT_NET = "RecurrentNet"
CHECKPOINT_FORMAT = "coursexai-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    kind: str = RECURRENT_NET
    hidden_sizes: tuple[int, int] = (32, 64)
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    l2: float = 1e-2
    seed: int = 0
    threshold: float = 0.5

    def validate(self) -> None:
        if self.kind not in (LOGISTIC_FLAT, RECURRENT_NET):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if len(self.hidden_sizes) != 2 or min(self.hidden_sizes) < 1:
            raise ValidationError("hidden_sizes must be two positive integers")
        if not (self.learning_rate > 0 and self.max_epochs > 0 and self.patience > 0 and self.batch_size > 0):
            raise ValidationError("learning rate, epochs, patience and batch size must be positive")
        if self.l2 < 0:
            raise ValidationError("l2 must be non-negative")
        if not 0 < self.threshold < 1:
            raise ValidationError("threshold must be in (0, 1)")


# ---------------------------------------------------------------------------
# split and metric

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(student_ids: Sequence[str], passed: Sequence[bool], spec: SplitSpec = SplitSpec()):
    """Per-class split: train gets round(fraction * n_class) of each class."""
    if not 0 < spec.train_fraction < 1:
        raise ValidationError("train_fraction must be in (0, 1)")
    ids = np.asarray(list(student_ids), dtype=object)
    y = np.asarray(list(passed), dtype=bool)
    if len(ids) != len(y):
        raise ValidationError("student_ids and labels differ in length")
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for cls in (False, True):
        members = ids[y == cls]
        if len(members) < 2:
            raise ValidationError(f"class {'pass' if cls else 'fail'} has fewer than 2 students")
        order = rng.permutation(len(members))
        k = _round_half_up(spec.train_fraction * len(members))
        k = min(max(k, 1), len(members) - 1)
        train.extend(members[order[:k]].tolist())
        test.extend(members[order[k:]].tolist())
    return sorted(train), sorted(test)


def balanced_accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if p.shape != y.shape:
        raise ValidationError("probabilities and labels differ in length")
    if y.all() or not y.any():
        raise ValidationError("balanced accuracy needs both classes")
    pred = p >= threshold
    tpr = np.mean(pred[y])
    tnr = np.mean(~pred[~y])
    return float((tpr + tnr) / 2)


# ---------------------------------------------------------------------------
# predictors

class Predictor:
    """Opaque pass-probability function over per-student ``W x F`` matrices."""

    kind: str = ""

    def __init__(self, weeks: int, n_features: int, seed: int = 0):
        self.weeks = weeks
        self.n_features = n_features
        self.seed = seed

    @property
    def descriptor(self) -> dict:
        return {"kind": self.kind, "W": self.weeks, "F": self.n_features, "seed": self.seed}

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape == (self.weeks, self.n_features):
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.weeks, self.n_features):
            if X.size == 0 and X.ndim >= 1:
                return np.zeros((0, self.weeks, self.n_features))
            raise ValidationError(f"expected batch of {self.weeks}x{self.n_features} matrices, got {X.shape}")
        return X

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if len(X) == 0:
            return np.zeros(0)
        return self._predict(X)

    def predict_flat(self, X_flat) -> np.ndarray:
        """Predict from rows of flattened ``W*F`` vectors (week-major)."""
        X_flat = np.atleast_2d(np.asarray(X_flat, dtype=float))
        return self.predict(X_flat.reshape(len(X_flat), self.weeks, self.n_features))

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def weights(self) -> dict[str, np.ndarray]:
        raise NotImplementedError


class LogisticFlat(Predictor):
    kind = LOGISTIC_FLAT

    def __init__(self, weeks, n_features, coef, intercept, seed=0):
        super().__init__(weeks, n_features, seed)
        self.coef = np.asarray(coef, dtype=float).reshape(weeks * n_features)
        self.intercept = float(intercept)

    def _predict(self, X):
        return expit(X.reshape(len(X), -1) @ self.coef + self.intercept)

    def weights(self):
        return {"coef": self.coef, "intercept": np.array([self.intercept])}


def _matmul3(A, W):
    # (N, T, D) @ (D, K) as one 2-D product; stacked matmul skips BLAS
    N, T, D = A.shape
    return (np.ascontiguousarray(A).reshape(N * T, D) @ W).reshape(N, T, -1)


def _lstm_forward(X, Wx, Wh, b, reverse=False, keep=True):
    """Run one LSTM direction; returns hidden sequence (N, T, H) and a cache."""
    N, T, _ = X.shape
    H = Wh.shape[0]
    if reverse:
        X = X[:, ::-1]
    Z = _matmul3(X, Wx) + b
    if not keep:
        return _lstm_infer(Z, Wh, reverse), None
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    hs = np.empty((N, T, H))
    cache = []
    for t in range(T):
        z = Z[:, t] + h @ Wh
        i = expit(z[:, :H])
        f = expit(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = expit(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        if keep:
            cache.append((i, f, g, o, c_prev, h_prev, tc))
    out = hs[:, ::-1] if reverse else hs
    return out, (X, Wx, Wh, cache, reverse)


def _lstm_infer(Z, Wh, reverse, chunk=512):
    # inference-only recurrence: time-major, row-chunked, in-place gate math;
    # sigmoid(x) = (1 + tanh(x / 2)) / 2
    N, T, H4 = Z.shape
    H = H4 // 4
    hs = np.empty((T, N, H))
    Zt = Z.transpose(1, 0, 2)
    z = np.empty((min(chunk, N), H4))
    for lo in range(0, N, chunk):
        hi = min(lo + chunk, N)
        n = hi - lo
        zc = z[:n]
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        sig = (zc[:, :2 * H], zc[:, 3 * H:])
        for t in range(T):
            np.matmul(h, Wh, out=zc)
            zc += Zt[t, lo:hi]
            for v in sig:
                v *= 0.5
            np.tanh(zc, out=zc)
            for v in sig:
                v += 1.0
                v *= 0.5
            c *= zc[:, H:2 * H]
            c += zc[:, :H] * zc[:, 2 * H:3 * H]
            np.tanh(c, out=h)
            h *= zc[:, 3 * H:]
            hs[t, lo:hi] = h
    hs = hs.transpose(1, 0, 2)
    return hs[:, ::-1] if reverse else hs


def _lstm_backward(dhs, state):
    X, Wx, Wh, cache, reverse = state
    if reverse:
        dhs = dhs[:, ::-1]
    N, T, H = dhs.shape
    dZ = np.empty((N, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((N, H))
    dc_next = np.zeros((N, H))
    for t in reversed(range(T)):
        i, f, g, o, c_prev, h_prev, tc = cache[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc ** 2) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1
        )
        dZ[:, t] = dz
        dWh += h_prev.T @ dz
        dh_next = dz @ Wh.T
        dc_next = dc * f
    dWx = np.ascontiguousarray(X).reshape(N * T, -1).T @ dZ.reshape(N * T, -1)
    db = dZ.sum(axis=(0, 1))
    dX = _matmul3(dZ, Wx.T)
    if reverse:
        dX = dX[:, ::-1]
    return dX, dWx, dWh, db


_DIRS = ("f", "b")


class RecurrentNet(Predictor):
    """Two bidirectional LSTM layers followed by a single sigmoid unit.

    The first layer returns its full sequence; the second returns the final
    state of each direction, concatenated, which feeds the output unit.
    """

    kind = RECURRENT_NET

    def __init__(self, weeks, n_features, params: dict[str, np.ndarray], hidden_sizes=(32, 64), seed=0):
        super().__init__(weeks, n_features, seed)
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)

    @property
    def descriptor(self):
        return {**super().descriptor, "hidden_sizes": list(self.hidden_sizes)}

    @staticmethod
    def init_params(n_features, hidden_sizes, rng) -> dict[str, np.ndarray]:
        params = {}
        in_dim = n_features
        for layer, H in enumerate(hidden_sizes, start=1):
            for d in _DIRS:
                lim = math.sqrt(6.0 / (in_dim + 4 * H))
                params[f"l{layer}{d}_Wx"] = rng.uniform(-lim, lim, size=(in_dim, 4 * H))
                q, r = np.linalg.qr(rng.standard_normal((4 * H, H)))
                params[f"l{layer}{d}_Wh"] = (q * np.sign(np.diag(r))).T
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                params[f"l{layer}{d}_b"] = b
            in_dim = 2 * H
        lim = math.sqrt(6.0 / (in_dim + 1))
        params["out_W"] = rng.uniform(-lim, lim, size=(in_dim,))
        params["out_b"] = np.zeros(1)
        return params

    def _forward(self, X, params=None, keep=False):
        p = self.params if params is None else params
        states = {}
        seq = X
        for layer in (1, 2):
            outs = []
            for d in _DIRS:
                hs, st = _lstm_forward(seq, p[f"l{layer}{d}_Wx"], p[f"l{layer}{d}_Wh"], p[f"l{layer}{d}_b"],
                                       reverse=(d == "b"), keep=keep)
                outs.append(hs)
                states[(layer, d)] = st
            if layer == 1:
                seq = np.concatenate(outs, axis=2)
            else:
                H2 = outs[0].shape[2]
                final = np.concatenate([outs[0][:, -1], outs[1][:, 0]], axis=1)
                states["H2"] = H2
        logit = final @ p["out_W"] + p["out_b"][0]
        prob = expit(logit)
        if keep:
            return prob, (states, final, seq)
        return prob

    def _predict(self, X):
        return self._forward(X)

    def loss_and_grad(self, X, y, params=None, l2=0.0):
        """Mean binary cross-entropy (plus optional L2 on weights) and its gradient."""
        p = self.params if params is None else params
        prob, (states, final, seq1) = self._forward(X, p, keep=True)
        N = len(X)
        eps = 1e-12
        loss = -np.mean(y * np.log(prob + eps) + (1 - y) * np.log(1 - prob + eps))
        dlogit = (prob - y) / N
        grads = {"out_W": final.T @ dlogit, "out_b": np.array([dlogit.sum()])}
        dfinal = np.outer(dlogit, p["out_W"])
        H2 = states["H2"]
        T = X.shape[1]
        dseq1 = np.zeros_like(seq1)
        for d, pos, sl in (("f", T - 1, slice(0, H2)), ("b", 0, slice(H2, 2 * H2))):
            dhs = np.zeros((N, T, H2))
            dhs[:, pos] = dfinal[:, sl]
            dX, dWx, dWh, db = _lstm_backward(dhs, states[(2, d)])
            dseq1 += dX
            grads[f"l2{d}_Wx"], grads[f"l2{d}_Wh"], grads[f"l2{d}_b"] = dWx, dWh, db
        H1 = seq1.shape[2] // 2
        for d, sl in (("f", slice(0, H1)), ("b", slice(H1, 2 * H1))):
            _, dWx, dWh, db = _lstm_backward(dseq1[:, :, sl], states[(1, d)])
            grads[f"l1{d}_Wx"], grads[f"l1{d}_Wh"], grads[f"l1{d}_b"] = dWx, dWh, db
        if l2:
            for k, v in p.items():
                if not k.endswith("_b"):
                    loss += 0.5 * l2 * float(np.sum(v ** 2)) / N
                    grads[k] = grads[k] + l2 * v / N
        return float(loss), grads

    def weights(self):
        return dict(self.params)


# ---------------------------------------------------------------------------
# training

def _fit_logistic(X, y, config: TrainConfig, weeks, n_features):
    Xf = X.reshape(len(X), -1)
    D = Xf.shape[1]

    def objective(theta):
        w, b = theta[:D], theta[D]
        z = Xf @ w + b
        # log(1 + exp(z)) - y z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * config.l2 * float(w @ w)
        r = (expit(z) - y) / len(y)
        grad = np.concatenate([Xf.T @ r + config.l2 * w, [r.sum()]])
        return loss, grad

    res = minimize(objective, np.zeros(D + 1), jac=True, method="L-BFGS-B", options={"maxiter": 1000})
    return LogisticFlat(weeks, n_features, res.x[:D], res.x[D], seed=config.seed)


def _fit_recurrent(X, y, config: TrainConfig, weeks, n_features):
    rng = np.random.default_rng(config.seed)
    n = len(X)
    # early-stopping holdout: 10% of the training ids, at least one
    order = rng.permutation(n)
    n_val = max(1, int(round(0.1 * n))) if n >= 10 else 0
    val_idx, fit_idx = order[:n_val], order[n_val:]
    params = RecurrentNet.init_params(n_features, config.hidden_sizes, rng)
    net = RecurrentNet(weeks, n_features, params, config.hidden_sizes, seed=config.seed)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-7
    step = 0
    best = (math.inf, {k: val.copy() for k, val in params.items()})
    stale = 0
    for _epoch in range(config.max_epochs):
        perm = fit_idx[rng.permutation(len(fit_idx))]
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            _, grads = net.loss_and_grad(X[batch], y[batch], l2=config.l2)
            step += 1
            for k in params:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1 ** step)
                vhat = v[k] / (1 - b2 ** step)
                params[k] -= config.learning_rate * mhat / (np.sqrt(vhat) + eps)
        monitor = val_idx if n_val else fit_idx
        val_loss, _ = net.loss_and_grad(X[monitor], y[monitor])
        if val_loss < best[0] - 1e-6:
            best = (val_loss, {k: val.copy() for k, val in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.params = best[1]
    return net


def train(matrix, train_ids: Sequence[str], config: TrainConfig = TrainConfig()) -> Predictor:
    """Fit a reference model on the (imputed, normalized) rows of ``train_ids``."""
    config.validate()
    if matrix.labels is None:
        raise ValidationError("feature matrix carries no labels")
    sub = matrix.subset(train_ids)
    X = sub.values
    if not np.all(np.isfinite(X)):
        raise ValidationError("training matrix contains NaN or inf; impute first")
    y = sub.labels.astype(float)
    if y.min() == y.max():
        raise ValidationError("training labels contain a single class")
    if config.kind == LOGISTIC_FLAT:
        return _fit_logistic(X, y, config, matrix.weeks, len(matrix.features))
    return _fit_recurrent(X, y, config, matrix.weeks, len(matrix.features))


def predict(predictor: Predictor, matrices) -> np.ndarray:
    return predictor.predict(matrices)


# ---------------------------------------------------------------------------
# checkpoints

def save_predictor(path: Path, predictor: Predictor, extra: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "descriptor": predictor.descriptor,
        "weights": {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
                    for k, v in sorted(predictor.weights().items())},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_predictor(path: Path) -> tuple[Predictor, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: not a version {CHECKPOINT_VERSION} model checkpoint")
    desc = doc["descriptor"]
    weights = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["weights"].items()}
    if desc["kind"] == LOGISTIC_FLAT:
        pred = LogisticFlat(desc["W"], desc["F"], weights["coef"], weights["intercept"][0], seed=desc["seed"])
    elif desc["kind"] == RECURRENT_NET:
        pred = RecurrentNet(desc["W"], desc["F"], weights, desc["hidden_sizes"], seed=desc["seed"])
    else:
        raise ValidationError(f"{path}: unknown model kind {desc['kind']!r}")
    return pred, doc.get("extra", {})
