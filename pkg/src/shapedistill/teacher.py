"""Fully-connected ReLU teacher networks in plain numpy."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset, Task
from .errors import DataError, DimensionMismatch, DivergedLoss, SchemaVersionMismatch

log = logging.getLogger(__name__)

TEACHER_FORMAT = "shapedistill.teacher/1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    early_stop_patience: int = 10
    seed: int = 0
    weight_init_scale: float = float(np.sqrt(6.0))
    optimizer: str = "adam"
    valid_fraction: float = 0.15

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "early_stop_patience",
                     "weight_init_scale"):
            if not getattr(self, name) > 0:
                raise DataError(f"TrainConfig.{name} must be positive")
        if self.early_stop_patience > self.epochs:
            raise DataError("early_stop_patience must not exceed epochs")
        if self.seed < 0:
            raise DataError("seed must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 < self.valid_fraction < 1.0:
            raise DataError("valid_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TeacherNet:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]  # weights[k] has shape (dims[k], dims[k+1])
    biases: tuple[np.ndarray, ...]
    task: Task = Task.REGRESSION
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    history: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or dims[-1] != 1:
            raise DataError(f"layer dims must end in 1, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DataError("one weight matrix and bias vector per layer required")
        W = []
        b = []
        for k, (w, bb) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64).reshape(dims[k], dims[k + 1])
            bb = np.array(bb, dtype=np.float64).reshape(dims[k + 1])
            w.setflags(write=False)
            bb.setflags(write=False)
            W.append(w)
            b.append(bb)
        p = dims[0]
        mean = np.zeros(p) if self.x_mean is None else np.array(self.x_mean, dtype=np.float64)
        std = np.ones(p) if self.x_std is None else np.array(self.x_std, dtype=np.float64)
        if mean.shape != (p,) or std.shape != (p,):
            raise DataError("standardization constants must have one entry per input")
        if np.any(std <= 0):
            raise DataError("standardization std must be positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(W))
        object.__setattr__(self, "biases", tuple(b))
        object.__setattr__(self, "x_mean", mean)
        object.__setattr__(self, "x_std", std)
        object.__setattr__(self, "task", Task.parse(self.task))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def p(self) -> int:
        return self.layer_dims[0]

    def __call__(self, X) -> np.ndarray:
        return predict(self, X)

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "format": TEACHER_FORMAT,
            "layer_dims": list(self.layer_dims),
            "task": self.task.value,
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherNet":
        if d.get("format") != TEACHER_FORMAT:
            raise SchemaVersionMismatch(f"expected {TEACHER_FORMAT}, got {d.get('format')!r}")
        return cls(tuple(d["layer_dims"]), tuple(np.array(w) for w in d["weights"]),
                   tuple(np.array(b) for b in d["biases"]), d["task"],
                   np.array(d["x_mean"]), np.array(d["x_std"]), d.get("feature_names"),
                   d.get("history") or {})

    def save(self, path) -> None:
        # json writes floats with repr(), the shortest exact round-trip form
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TeacherNet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_X(net: TeacherNet, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.p:
        raise DimensionMismatch(f"expected {net.p} input columns, got shape {X.shape}")
    return X


def _forward(weights, biases, Z):
    """Return pre-activations of every hidden layer and the output column."""
    pre = []
    a = Z
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        if k == last:
            return pre, z
        pre.append(z)
        a = np.maximum(z, 0.0)
    raise AssertionError("unreachable")


def predict(net: TeacherNet, X, chunk: int = 65536) -> np.ndarray:
    """Raw scores (regression) or logits (classification), one per row."""
    X = _check_X(net, X)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        Z = (X[s:s + chunk] - net.x_mean) / net.x_std
        _, y = _forward(net.weights, net.biases, Z)
        out[s:s + chunk] = y[:, 0]
    return out


def input_gradients(net: TeacherNet, X) -> np.ndarray:
    """d output / d x for every row of X, in original feature units.

    ReLU derivative is taken as 0 at exactly-zero pre-activations.
    """
    X = _check_X(net, X)
    Z = (X - net.x_mean) / net.x_std
    pre, _ = _forward(net.weights, net.biases, Z)
    g = np.broadcast_to(net.weights[-1][:, 0], (X.shape[0], net.weights[-1].shape[0]))
    for k in range(len(pre) - 1, -1, -1):
        g = g * (pre[k] > 0.0)
        g = g @ net.weights[k].T
    return g / net.x_std


def input_gradient(net: TeacherNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.p:
        raise DimensionMismatch(f"expected a vector of length {net.p}, got shape {x.shape}")
    return input_gradients(net, x[None, :])[0]


# ---------------------------------------------------------------- training

def _init_params(dims, scale, rng):
    W, b = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = scale / np.sqrt(fan_in)
        W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        b.append(np.zeros(fan_out))
    return W, b


def _loss_and_grad(W, b, Z, y, task):
    pre, out = _forward(W, b, Z)
    out = out[:, 0]
    m = len(y)
    if task is Task.BINARY:
        # mean logistic loss on logits
        loss = np.mean(np.logaddexp(0.0, out) - y * out)
        d = (1.0 / (1.0 + np.exp(-out)) - y) / m
    else:
        r = out - y
        loss = 0.5 * np.mean(r * r)
        d = r / m
    gW = [None] * len(W)
    gb = [None] * len(W)
    g = d[:, None]
    for k in range(len(W) - 1, -1, -1):
        a = Z if k == 0 else np.maximum(pre[k - 1], 0.0)
        gW[k] = a.T @ g
        gb[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ W[k].T) * (pre[k - 1] > 0.0)
    return loss, gW, gb


def _eval_loss(W, b, Z, y, task):
    _, out = _forward(W, b, Z)
    out = out[:, 0]
    if task is Task.BINARY:
        return float(np.mean(np.logaddexp(0.0, out) - y * out))
    return float(0.5 * np.mean((out - y) ** 2))


def train_teacher(ds: Dataset, arch: Sequence[int], cfg: TrainConfig = TrainConfig(),
                  valid: Dataset | None = None) -> TeacherNet:
    """Train a ReLU net on ``ds``'s labels with early stopping.

    ``arch`` lists the hidden widths, optionally framed by the input width and
    a trailing 1. Without ``valid`` a ``cfg.valid_fraction`` slice of ``ds`` is
    held out. Regression targets are standardized during training and the
    scaling is folded back into the output layer afterwards.
    """
    y_all = ds.require_labels()
    dims = _resolve_arch(arch, ds.p)
    rng = np.random.default_rng(cfg.seed)
    if valid is None:
        perm = rng.permutation(ds.n)
        n_val = max(1, int(round(cfg.valid_fraction * ds.n)))
        if ds.n - n_val < 1:
            raise DataError("dataset too small to hold out a validation slice")
        tr, va = perm[n_val:], perm[:n_val]
        X, y, Xv, yv = ds.features[tr], y_all[tr], ds.features[va], y_all[va]
    else:
        X, y = ds.features, y_all
        Xv, yv = valid.features, valid.require_labels()

    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    Z = (X - x_mean) / x_std
    Zv = (Xv - x_mean) / x_std
    if ds.task is Task.REGRESSION:
        y_mean = float(y.mean())
        y_std = float(y.std()) or 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    t = (y - y_mean) / y_std
    tv = (yv - y_mean) / y_std

    W, b = _init_params(dims, cfg.weight_init_scale, rng)
    adam = cfg.optimizer == "adam"
    if adam:
        mW = [np.zeros_like(w) for w in W]
        vW = [np.zeros_like(w) for w in W]
        mb = [np.zeros_like(v) for v in b]
        vb = [np.zeros_like(v) for v in b]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0

    best = (_eval_loss(W, b, Zv, tv, ds.task), [w.copy() for w in W], [v.copy() for v in b], 0)
    train_curve, valid_curve = [], []
    since_best = 0
    n = len(t)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = _loss_and_grad(W, b, Z[idx], t[idx], ds.task)
            if not np.isfinite(loss):
                raise DivergedLoss(f"training loss became non-finite in epoch {epoch}")
            total += loss * len(idx)
            if adam:
                step += 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for k in range(len(W)):
                    for P, G, M, V in ((W, gW, mW, vW), (b, gb, mb, vb)):
                        M[k] = beta1 * M[k] + (1 - beta1) * G[k]
                        V[k] = beta2 * V[k] + (1 - beta2) * G[k] ** 2
                        P[k] = P[k] - cfg.learning_rate * (M[k] / c1) / (np.sqrt(V[k] / c2) + eps)
            else:
                for k in range(len(W)):
                    W[k] -= cfg.learning_rate * gW[k]
                    b[k] -= cfg.learning_rate * gb[k]
        with np.errstate(over="ignore", invalid="ignore"):
            vloss = _eval_loss(W, b, Zv, tv, ds.task)
        if not np.isfinite(vloss):
            raise DivergedLoss(f"validation loss became non-finite in epoch {epoch}")
        train_curve.append(total / n)
        valid_curve.append(vloss)
        log.debug("epoch %d train %.5f valid %.5f", epoch, total / n, vloss)
        if vloss < best[0]:
            best = (vloss, [w.copy() for w in W], [v.copy() for v in b], epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break

    _, W, b, best_epoch = best
    W[-1] = W[-1] * y_std
    b[-1] = b[-1] * y_std + y_mean
    scale = y_std ** 2
    history = {
        "train_loss": [v * scale for v in train_curve],
        "valid_loss": [v * scale for v in valid_curve],
        "best_epoch": best_epoch,
        "best_valid_loss": best[0] * scale,
    }
    return TeacherNet(dims, tuple(W), tuple(b), ds.task, x_mean, x_std, ds.feature_names, history)


def _resolve_arch(arch: Sequence[int], p: int) -> tuple[int, ...]:
    arch = tuple(int(a) for a in arch)
    if any(a < 1 for a in arch):
        raise DataError(f"layer widths must be positive: {arch}")
    if len(arch) >= 2 and arch[0] == p and arch[-1] == 1:
        return arch
    if arch and arch[-1] == 1 and len(arch) >= 2 and arch[0] != p:
        raise DimensionMismatch(f"architecture input width {arch[0]} != {p} features")
    return (p,) + arch + (1,)


def parse_arch(spec: str) -> tuple[int, ...]:
    """``"2H-128,128"``, ``"1H-8"`` or ``"128,128"`` -> hidden widths."""
    s = spec.strip().upper()
    if "H-" in s:
        count, widths = s.split("H-", 1)
        hidden = tuple(int(w) for w in widths.split(","))
        if int(count) != len(hidden):
            raise DataError(f"architecture {spec!r} declares {count} layers but lists {len(hidden)}")
        return hidden
    return tuple(int(w) for w in s.split(",") if w)
