"""Split-head MLP that maps channel features to beamforming parameters.

Layout: ``7 -> h0 -> h1`` shared rectifier layers, then two rectifier
branches of width ``h2`` feeding linear heads of width 4 (amplitudes) and 3
(angles).  Everything is float64 numpy with hand-written backprop, so a
fixed seed gives bit-identical training runs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .beamformer import BeamParams, ConstraintContext, RepairConfig, canonical_params, repair_params
from .channel import BasisProjections, FeatureVector

MODEL_FORMAT = "nomabeam-mlp"
MODEL_VERSION = 1
N_FEATURES = 7
HEAD_A, HEAD_B = 4, 3
# forward order of the six affine layers
LAYERS = ("shared0", "shared1", "branch_a", "branch_b", "head_a", "head_b")


@dataclass(frozen=True)
class Architecture:
    hidden: tuple = (128, 64, 32)

    def __post_init__(self):
        if len(self.hidden) != 3 or any(int(h) < 1 for h in self.hidden):
            raise ValueError("hidden must be three positive widths (shared, shared, branch)")

    def shapes(self) -> dict:
        h0, h1, h2 = (int(h) for h in self.hidden)
        return {"shared0": (N_FEATURES, h0), "shared1": (h0, h1), "branch_a": (h1, h2),
                "branch_b": (h1, h2), "head_a": (h2, HEAD_A), "head_b": (h2, HEAD_B)}


@dataclass
class MlpModel:
    arch: Architecture
    weights: dict       # layer -> (fan_in, fan_out)
    biases: dict        # layer -> (fan_out,)
    xi: float = 1e6
    config_digest: str = ""
    # per-feature standardization applied before the first layer
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def __post_init__(self):
        self.input_mean = np.asarray(self.input_mean, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.input_mean.shape != (N_FEATURES,) or self.input_scale.shape != (N_FEATURES,):
            raise ValueError("input standardization must have one entry per feature")
        if not np.all(self.input_scale > 0) or not np.all(np.isfinite(self.input_mean)):
            raise ValueError("input scale must be positive and mean finite")
        shapes = self.arch.shapes()
        if set(self.weights) != set(LAYERS) or set(self.biases) != set(LAYERS):
            raise ValueError(f"model must define layers {LAYERS}")
        for name, shape in shapes.items():
            w, b = self.weights[name], self.biases[name]
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {name}: expected {shape}, got {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {name} has non-finite values")

    @property
    def activations(self) -> dict:
        return {name: ("identity" if name.startswith("head") else "relu") for name in LAYERS}

    def copy(self) -> "MlpModel":
        return MlpModel(self.arch, {k: v.copy() for k, v in self.weights.items()},
                        {k: v.copy() for k, v in self.biases.items()}, self.xi, self.config_digest,
                        self.input_mean.copy(), self.input_scale.copy())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "cosine"       # or "constant"
    standardize: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("training hyperparameters must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid optimizer constants")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_loss: list = field(default_factory=list)   # best monitored loss after each epoch
    best_epoch: int = -1
    stopped_early: bool = False


def mlp_init(arch: Architecture | None = None, seed: int = 0, zero: bool = False,
             xi: float = 1e6) -> MlpModel:
    """He-uniform fan-in initialization, zero biases; ``zero=True`` gives all-zero weights."""
    arch = arch or Architecture()
    rng = np.random.default_rng(seed)
    weights, biases = {}, {}
    for name in LAYERS:
        fan_in, fan_out = arch.shapes()[name]
        if zero:
            weights[name] = np.zeros((fan_in, fan_out))
        else:
            limit = math.sqrt(6.0 / fan_in)
            weights[name] = rng.uniform(-limit, limit, (fan_in, fan_out))
        biases[name] = np.zeros(fan_out)
    return MlpModel(arch, weights, biases, xi=xi)


def _as_batch(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise ValueError(f"expected features with {N_FEATURES} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    return x


def _forward(model: MlpModel, x):
    w, b = model.weights, model.biases
    x = (x - model.input_mean) / model.input_scale
    z0 = x @ w["shared0"] + b["shared0"]
    a0 = np.maximum(z0, 0.0)
    z1 = a0 @ w["shared1"] + b["shared1"]
    a1 = np.maximum(z1, 0.0)
    za = a1 @ w["branch_a"] + b["branch_a"]
    aa = np.maximum(za, 0.0)
    zb = a1 @ w["branch_b"] + b["branch_b"]
    ab = np.maximum(zb, 0.0)
    out_a = aa @ w["head_a"] + b["head_a"]
    out_b = ab @ w["head_b"] + b["head_b"]
    cache = dict(x=x, z0=z0, a0=a0, z1=z1, a1=a1, za=za, aa=aa, zb=zb, ab=ab)
    return out_a, out_b, cache


def mlp_forward(model: MlpModel, features) -> np.ndarray:
    """Raw outputs ``[rho1, rho2, delta1, delta2, tau1, phi1, phi2]`` (no clamping).

    Accepts one feature vector or an ``(n, 7)`` batch; rows are independent.
    """
    single = isinstance(features, FeatureVector) or np.ndim(features) == 1
    out_a, out_b, _ = _forward(model, _as_batch(features))
    out = np.concatenate([out_a, out_b], axis=1)
    return out[0] if single else out


def mae_loss(model: MlpModel, x, y) -> float:
    out_a, out_b, _ = _forward(model, x)
    return float(np.mean(np.abs(out_a - y[:, :HEAD_A])) + np.mean(np.abs(out_b - y[:, HEAD_A:])))


def loss_and_grads(model: MlpModel, x, y):
    """Summed per-head MAE and its gradient for every weight and bias."""
    w = model.weights
    out_a, out_b, c = _forward(model, x)
    ra, rb = out_a - y[:, :HEAD_A], out_b - y[:, HEAD_A:]
    loss = float(np.mean(np.abs(ra)) + np.mean(np.abs(rb)))
    ga = np.sign(ra) / ra.size
    gb = np.sign(rb) / rb.size
    gw, gbias = {}, {}
    gw["head_a"], gbias["head_a"] = c["aa"].T @ ga, ga.sum(axis=0)
    gw["head_b"], gbias["head_b"] = c["ab"].T @ gb, gb.sum(axis=0)
    dza = (ga @ w["head_a"].T) * (c["za"] > 0)
    dzb = (gb @ w["head_b"].T) * (c["zb"] > 0)
    gw["branch_a"], gbias["branch_a"] = c["a1"].T @ dza, dza.sum(axis=0)
    gw["branch_b"], gbias["branch_b"] = c["a1"].T @ dzb, dzb.sum(axis=0)
    dz1 = (dza @ w["branch_a"].T + dzb @ w["branch_b"].T) * (c["z1"] > 0)
    gw["shared1"], gbias["shared1"] = c["a0"].T @ dz1, dz1.sum(axis=0)
    dz0 = (dz1 @ w["shared1"].T) * (c["z0"] > 0)
    gw["shared0"], gbias["shared0"] = c["x"].T @ dz0, dz0.sum(axis=0)
    return loss, gw, gbias


class NAdam:
    """Adam with Nesterov momentum (Dozat's formulation, constant momentum schedule)."""

    def __init__(self, model: MlpModel, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.t = 0
        self.m = {k: (np.zeros_like(model.weights[k]), np.zeros_like(model.biases[k])) for k in LAYERS}
        self.v = {k: (np.zeros_like(model.weights[k]), np.zeros_like(model.biases[k])) for k in LAYERS}

    def step(self, model: MlpModel, gw: dict, gb: dict):
        c = self.cfg
        self.t += 1
        b1, b2 = c.beta1, c.beta2
        corr1 = 1.0 - b1 ** self.t
        corr1_next = 1.0 - b1 ** (self.t + 1)
        corr2 = 1.0 - b2 ** self.t
        for k in LAYERS:
            for slot, (param, grad) in enumerate(((model.weights[k], gw[k]), (model.biases[k], gb[k]))):
                m = self.m[k][slot]
                v = self.v[k][slot]
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                m_bar = b1 * m / corr1_next + (1.0 - b1) * grad / corr1
                param -= self.lr * m_bar / (np.sqrt(v / corr2) + c.eps)


def labels_to_targets(labels) -> np.ndarray:
    """Canonicalize label parameter rows (``phi1 = 0``, ``tau1`` in ``[0, pi)``)."""
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if labels.shape[1] != 7:
        raise ValueError("labels must have 7 columns")
    return np.array([canonical_params(BeamParams.from_array(r)).to_array() for r in labels])


def mlp_train(model: MlpModel, features, targets, cfg: TrainConfig = TrainConfig()):
    """Train on (features, targets) and return ``(best model, history)``.

    ``targets`` are used as given (see :func:`labels_to_targets`).  With a
    validation split the checkpoint with the lowest validation loss is kept
    and training stops after ``patience`` epochs without improvement; with
    ``val_fraction = 0`` the training loss is monitored instead.
    """
    x = _as_batch(features)
    y = np.asarray(targets, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if y.shape != (x.shape[0], 7):
        raise ValueError("targets must be an (n, 7) array matching features")
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    n_val = int(round(cfg.val_fraction * n)) if cfg.val_fraction > 0 else 0
    if n_val >= n:
        n_val = n - 1
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    model = model.copy()
    model.config_digest = cfg.digest()
    if cfg.standardize:
        scale = x_tr.std(axis=0)
        model.input_mean = x_tr.mean(axis=0)
        model.input_scale = np.where(scale > 0, scale, 1.0)
    opt = NAdam(model, cfg)
    hist = TrainHistory()
    best_model, best = model.copy(), math.inf
    stale = 0
    for epoch in range(cfg.max_epochs):
        if cfg.schedule == "cosine":
            opt.lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.max_epochs))
        order = rng.permutation(len(tr_idx))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(model, x_tr[rows], y_tr[rows])
            opt.step(model, gw, gb)
            total += loss * len(rows)
        hist.train_loss.append(mae_loss(model, x_tr, y_tr) if n_val == 0 else total / len(order))
        monitored = mae_loss(model, x_val, y_val) if n_val else hist.train_loss[-1]
        if n_val:
            hist.val_loss.append(monitored)
        if monitored < best:
            best, best_model, stale = monitored, model.copy(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
        hist.best_loss.append(best)
        if n_val and stale >= cfg.patience:
            hist.stopped_early = True
            break
    return best_model, hist


def predict_params(model: MlpModel, features, proj: BasisProjections, ctx: ConstraintContext,
                   repair_cfg: RepairConfig = RepairConfig()) -> BeamParams:
    """Network output followed by the repair step; always feasible."""
    raw = mlp_forward(model, features)
    return repair_params(BeamParams.from_array(raw), proj, ctx, repair_cfg)


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": [N_FEATURES, *[int(h) for h in model.arch.hidden], [HEAD_A, HEAD_B]],
        "layers": [{"name": k, "activation": model.activations[k],
                    "shape": list(model.weights[k].shape),
                    "weights": model.weights[k].tolist(),
                    "bias": model.biases[k].tolist()} for k in LAYERS],
        "xi": model.xi,
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
        "config_digest": model.config_digest,
    }


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    arch = Architecture(tuple(int(h) for h in doc["dims"][1:4]))
    layers = {d["name"]: d for d in doc["layers"]}
    weights = {k: np.array(layers[k]["weights"], dtype=float).reshape(layers[k]["shape"])
               for k in LAYERS}
    biases = {k: np.array(layers[k]["bias"], dtype=float) for k in LAYERS}
    return MlpModel(arch, weights, biases, xi=float(doc["xi"]),
                    config_digest=str(doc.get("config_digest", "")),
                    input_mean=np.array(doc["input_mean"], dtype=float),
                    input_scale=np.array(doc["input_scale"], dtype=float))


def save_model(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


class BeamformingNet(RegressorMixin, BaseEstimator):
    """scikit-learn style wrapper: ``fit(features, labels)`` / ``predict(features)``.

    ``fit`` canonicalizes the labels before training; ``predict`` returns the
    raw 7-column network output.  Use :meth:`predict_params` for repaired,
    feasible parameters.
    """

    def __init__(self, hidden=(128, 64, 32), learning_rate=3e-3, batch_size=64, max_epochs=200,
                 patience=10, val_fraction=0.1, seed=0, xi=1e6):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed
        self.xi = xi

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           val_fraction=self.val_fraction, seed=self.seed)

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[1] != N_FEATURES or y.shape[1] != 7 or len(X) != len(y):
            raise ValueError("expected X of shape (n, 7) and y of shape (n, 7)")
        init = mlp_init(Architecture(tuple(self.hidden)), seed=self.seed, xi=self.xi)
        self.model_, self.history_ = mlp_train(init, X, labels_to_targets(y), self._train_config())
        self.n_features_in_ = N_FEATURES
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return mlp_forward(self.model_, check_array(X, dtype=np.float64))

    def predict_params(self, features, proj: BasisProjections, ctx: ConstraintContext,
                       repair_cfg: RepairConfig = RepairConfig()) -> BeamParams:
        check_is_fitted(self, "model_")
        return predict_params(self.model_, features, proj, ctx, repair_cfg)

    @classmethod
    def from_model(cls, model: MlpModel) -> "BeamformingNet":
        est = cls(hidden=tuple(model.arch.hidden), xi=model.xi)
        est.model_ = model
        est.history_ = TrainHistory()
        est.n_features_in_ = N_FEATURES
        return est
