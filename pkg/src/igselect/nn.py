"""Fully connected regression network in numpy with exact backprop.

``Network`` is a plain stack of affine layers with a hidden activation and a
linear scalar output. ``build`` turns an ``Architecture`` (four hidden layers
of widths l1, l1/2, l1/2, l1/4) into a seeded ``Network``; ``train`` fits it
by mini-batch descent with dropout and early stopping.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, SpecificationError, TrainingError

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("ReLU", "LeakyReLU")
OPTIMIZERS = ("Adadelta", "Adamax", "Adagrad")
BASE_LR = {"Adadelta": 1.0, "Adamax": 0.002, "Adagrad": 0.01}


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    l1: int
    activation: str = "ReLU"
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise SpecificationError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1 or self.l1 < 4 or self.l1 % 4:
            raise SpecificationError(
                f"need input_dim >= 1 and l1 a positive multiple of 4, got {self.input_dim}, {self.l1}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise SpecificationError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")

    @property
    def hidden_widths(self) -> list[int]:
        return [self.l1, self.l1 // 2, self.l1 // 2, self.l1 // 4]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, 1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 64
    batch_size: int = 32
    optimizer: str = "Adamax"
    lr_mult: float = 1.0
    patience: int = 8
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise SpecificationError(f"unknown optimizer {self.optimizer!r}")
        if min(self.epochs, self.batch_size, self.patience) < 1:
            raise SpecificationError("epochs, batch_size and patience must be >= 1")
        if not self.lr_mult > 0:
            raise SpecificationError(f"lr_mult must be > 0, got {self.lr_mult}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise SpecificationError("validation_fraction must be in [0, 1)")

    @property
    def learning_rate(self) -> float:
        return BASE_LR[self.optimizer] * self.lr_mult


def _act(z, kind):
    if kind == "ReLU":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _act_grad(z, kind):
    if kind == "ReLU":
        return (z > 0).astype(z.dtype)
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


@dataclass
class Network:
    """Affine layers; every layer but the last is followed by the activation.

    ``weights[i]`` has shape (fan_in, fan_out). Dropout applies after each
    hidden activation during training only.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "ReLU"
    dropout_prob: float = 0.0
    architecture: Architecture | None = None
    seed: int | None = None
    training_log: dict = field(default_factory=lambda: {"train_loss": [], "val_loss": []})

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: fan-in {w.shape[0]} != previous fan-out")
        if self.weights[-1].shape[1] != 1:
            raise ShapeError("output layer must have exactly one unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       self.activation, self.dropout_prob, self.architecture, self.seed,
                       {k: list(v) for k, v in self.training_log.items()})

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.ndim != 2 or X2.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} inputs, got shape {X.shape}")
        return X2, single

    def _forward_cache(self, X, rng=None):
        """Run the net keeping pre-activations and dropout masks for backprop."""
        a = X
        pre, acts, masks = [], [X], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            if i == last:
                a = z
                break
            a = _act(z, self.activation)
            if rng is not None and self.dropout_prob > 0:
                keep = 1.0 - self.dropout_prob
                m = (rng.random(a.shape) < keep) / keep
                a = a * m
            else:
                m = None
            masks.append(m)
            acts.append(a)
        return a[:, 0], pre, acts, masks

    def forward(self, X):
        """Inference output; scalar for one row, vector for a batch."""
        X2, single = self._check(X)
        out = self._forward_cache(X2)[0]
        return float(out[0]) if single else out

    __call__ = forward

    def _backward(self, pre, acts, masks, dout):
        """Return parameter grads and d(out)/d(input) given d(loss)/d(out) per row."""
        g = dout.reshape(-1, 1)
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                if masks[i - 1] is not None:
                    g = g * masks[i - 1]
                g = g * _act_grad(pre[i - 1], self.activation)
        return gw, gb, g

    def input_gradient(self, X):
        """dF/dx per row by reverse mode, dropout off."""
        X2, single = self._check(X)
        _, pre, acts, masks = self._forward_cache(X2)
        g = np.ones((X2.shape[0], 1))
        for i in range(len(self.weights) - 1, -1, -1):
            g = g @ self.weights[i].T
            if i > 0:
                g = g * _act_grad(pre[i - 1], self.activation)
        return g[0] if single else g

    def loss_and_grads(self, X, y, rng=None):
        """Mean squared error and its parameter gradients on one batch."""
        out, pre, acts, masks = self._forward_cache(X, rng)
        resid = out - y
        loss = float(np.mean(resid ** 2))
        gw, gb, _ = self._backward(pre, acts, masks, 2.0 * resid / resid.size)
        return loss, gw, gb


TrainedModel = Network


def build(arch: Architecture, seed: int) -> Network:
    """Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return Network(ws, bs, arch.activation, arch.dropout_prob, arch, seed)


def forward(model: Network, x):
    return model.forward(x)


def input_gradient(model: Network, x):
    return model.input_gradient(x)


class Optimizer:
    def __init__(self, name: str, lr: float, params):
        if name not in OPTIMIZERS:
            raise SpecificationError(f"unknown optimizer {name!r}")
        self.name, self.lr, self.t = name, lr, 0
        zeros = lambda: [np.zeros_like(p) for p in params]  # noqa: E731
        if name == "Adagrad":
            self.eps = 1e-10
            self.sum_sq = zeros()
        elif name == "Adadelta":
            self.rho, self.eps = 0.9, 1e-6
            self.sq_avg, self.delta_avg = zeros(), zeros()
        else:
            self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8
            self.m, self.u = zeros(), zeros()

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.name == "Adagrad":
                self.sum_sq[i] += g * g
                p -= self.lr * g / (np.sqrt(self.sum_sq[i]) + self.eps)
            elif self.name == "Adadelta":
                sq = self.sq_avg[i]
                sq *= self.rho
                sq += (1 - self.rho) * g * g
                delta = np.sqrt(self.delta_avg[i] + self.eps) / np.sqrt(sq + self.eps) * g
                self.delta_avg[i] *= self.rho
                self.delta_avg[i] += (1 - self.rho) * delta * delta
                p -= self.lr * delta
            else:
                m = self.m[i]
                m *= self.b1
                m += (1 - self.b1) * g
                np.maximum(self.u[i] * self.b2, np.abs(g) + self.eps, out=self.u[i])
                p -= self.lr / (1 - self.b1 ** self.t) * m / self.u[i]


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strictly better loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best, self.best_epoch = loss, self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def train(model: Network, data, rows, cfg: TrainConfig) -> Network:
    """Fit a copy of ``model`` on ``data`` restricted to ``rows``.

    A ``validation_fraction`` share of rows drives early stopping; the weights
    from the best validation epoch are returned.
    """
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise SpecificationError("cannot train on an empty row set")
    X_all = np.asarray(data.features, dtype=np.float64)
    y_all = np.asarray(data.target, dtype=np.float64)
    if X_all.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} inputs, data has {X_all.shape[1]}")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(rows)
    n_val = int(round(cfg.validation_fraction * rows.size))
    if rows.size - n_val < 1:
        n_val = 0
    val_rows, fit_rows = perm[:n_val], perm[n_val:]
    Xf, yf = X_all[fit_rows], y_all[fit_rows]
    Xv, yv = X_all[val_rows], y_all[val_rows]

    net = model.copy()
    net.training_log = {"train_loss": [], "val_loss": []}
    params = [*net.weights, *net.biases]
    opt = Optimizer(cfg.optimizer, cfg.learning_rate, params)
    stopper = EarlyStopping(cfg.patience)
    best = None
    n_layers = len(net.weights)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(fit_rows))
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            # overflow is reported below as a TrainingError, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = net.loss_and_grads(Xf[idx], yf[idx], rng)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch}, batch {b} "
                    f"(optimizer={cfg.optimizer}, lr={cfg.learning_rate:g})",
                    epoch=epoch, batch=b, loss=loss)
            opt.step(params, gw + gb)
            total += loss * len(idx)
        train_loss = total / len(fit_rows)
        if n_val:
            val_loss = float(np.mean((net.forward(Xv) - yv) ** 2))
        else:
            val_loss = float(np.mean((net.forward(Xf) - yf) ** 2))
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}",
                                epoch=epoch, loss=val_loss)
        net.training_log["train_loss"].append(train_loss)
        net.training_log["val_loss"].append(val_loss)
        stop = stopper.update(val_loss)
        if stopper.improved:
            best = [p.copy() for p in params]
        if stop:
            break

    for p, saved in zip(params, best):
        p[...] = saved
    net.weights, net.biases = params[:n_layers], params[n_layers:]
    net.training_log["best_epoch"] = stopper.best_epoch
    net.training_log["epochs_run"] = stopper.epoch
    return net


def evaluate_mse(model: Network, data, rows) -> float:
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise SpecificationError("cannot evaluate on an empty row set")
    pred = model.forward(np.asarray(data.features, dtype=np.float64)[rows])
    return float(np.mean((np.asarray(data.target)[rows] - pred) ** 2))


def save(model: Network, path) -> Path:
    """Write weights plus a JSON header into one ``.npz`` file."""
    path = Path(path)
    meta = {
        "format": "igselect-mlp/1",
        "activation": model.activation,
        "dropout_prob": model.dropout_prob,
        "architecture": asdict(model.architecture) if model.architecture else None,
        "seed": model.seed,
        "n_layers": len(model.weights),
        "training_log": model.training_log,
    }
    arrays = {f"w{i}": w for i, w in enumerate(model.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(model.biases)})
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load(path) -> Network:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "igselect-mlp/1":
            raise ValueError(f"{path}: not an igselect checkpoint")
        n = meta["n_layers"]
        ws = [z[f"w{i}"] for i in range(n)]
        bs = [z[f"b{i}"] for i in range(n)]
    arch = Architecture(**meta["architecture"]) if meta["architecture"] else None
    return Network(ws, bs, meta["activation"], meta["dropout_prob"], arch, meta["seed"],
                   meta["training_log"])
