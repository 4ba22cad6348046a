"""Hypergraph-convolution classifier with hand-written gradients.

Architecture: ``num_conv_layers`` hypergraph convolutions (each followed by
ReLU), then three linear layers with ReLU and dropout between them, ending
in two logits (non-fake, fake).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .hypergraph import CascadeHypergraph

Params = dict[str, np.ndarray]
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    dropout: float = 0.5
    learning_rate: float = 5e-4
    optimizer: str = "adam"
    seed: int = 0
    hidden_dim: int = 64
    mlp_dims: tuple[int, int] = (32, 16)
    num_conv_layers: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.num_conv_layers < 1:
            raise ValueError("at least one convolution layer is required")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


class HypergraphOperator:
    """Sparse D_v^-1/2 H W D_e^-1 H^T D_v^-1/2 propagation.

    Isolated nodes get a zero row (their D_v^-1/2 is taken as 0). The
    operator is symmetric, so the same ``apply`` serves the backward pass.
    """

    def __init__(self, h: CascadeHypergraph):
        self.n_nodes = h.n_nodes
        self.H = h.incidence_matrix.tocsr()
        self.Ht = self.H.T.tocsr()
        dv = np.asarray(self.H.sum(axis=1)).ravel()
        de = np.asarray(self.H.sum(axis=0)).ravel()
        self.dv_inv_sqrt = np.zeros_like(dv)
        self.dv_inv_sqrt[dv > 0] = dv[dv > 0] ** -0.5
        self.edge_scale = np.zeros_like(de)
        self.edge_scale[de > 0] = h.weights[de > 0] / de[de > 0]

    def apply(self, Y: np.ndarray) -> np.ndarray:
        Z = self.Ht @ (self.dv_inv_sqrt[:, None] * Y)
        Z *= self.edge_scale[:, None]
        return self.dv_inv_sqrt[:, None] * (self.H @ Z)

    def dense(self) -> np.ndarray:
        return (sp.diags(self.dv_inv_sqrt) @ self.H @ sp.diags(self.edge_scale) @ self.Ht
                @ sp.diags(self.dv_inv_sqrt)).toarray()


def _operator(h) -> HypergraphOperator:
    return h if isinstance(h, HypergraphOperator) else HypergraphOperator(h)


def hyperconv_forward(X: np.ndarray, h, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    op = _operator(h)
    if X.shape[0] != op.n_nodes:
        raise ValueError(f"feature rows ({X.shape[0]}) != hypergraph nodes ({op.n_nodes})")
    if X.shape[1] != weight.shape[0]:
        raise ValueError(f"feature width {X.shape[1]} does not match weight {weight.shape}")
    return op.apply(X @ weight) + bias


def conv_names(num_conv_layers: int) -> list[str]:
    return [f"conv{i}" for i in range(num_conv_layers)]


LINEAR_NAMES = ("lin1", "lin2", "lin3")


def init_params(in_dim: int, cfg: TrainConfig, rng: np.random.Generator | None = None) -> Params:
    """Glorot-uniform convolutions (zero bias); linears U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params: Params = {}
    d = in_dim
    for name in conv_names(cfg.num_conv_layers):
        bound = np.sqrt(6.0 / (d + cfg.hidden_dim))
        params[f"{name}.weight"] = rng.uniform(-bound, bound, (d, cfg.hidden_dim))
        params[f"{name}.bias"] = np.zeros(cfg.hidden_dim)
        d = cfg.hidden_dim
    for name, out in zip(LINEAR_NAMES, (*cfg.mlp_dims, 2)):
        bound = 1.0 / np.sqrt(d)
        params[f"{name}.weight"] = rng.uniform(-bound, bound, (d, out))
        params[f"{name}.bias"] = rng.uniform(-bound, bound, out)
        d = out
    return params


def _num_convs(params: Params) -> int:
    return sum(1 for k in params if k.startswith("conv") and k.endswith(".weight"))


def dropout_masks(shapes: Sequence[tuple[int, int]], p: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks: kept units scaled by 1/(1-p)."""
    return [(rng.random(s) >= p) / (1.0 - p) for s in shapes]


def forward(params: Params, X: np.ndarray, h, train: bool = False, dropout: float = 0.0,
            rng: np.random.Generator | None = None, masks: Sequence[np.ndarray] | None = None):
    """Logits of shape (N, 2) plus the cache needed by :func:`backward`.

    Dropout acts after the first two linear layers and only when ``train``;
    masks come from ``masks`` if given, otherwise from ``rng``.
    """
    op = _operator(h)
    cache: dict = {"op": op, "inputs": [], "pre": [], "masks": []}
    a = X
    for name in conv_names(_num_convs(params)):
        cache["inputs"].append(a)
        z = hyperconv_forward(a, op, params[f"{name}.weight"], params[f"{name}.bias"])
        cache["pre"].append(z)
        a = np.maximum(z, 0.0)
    if train and dropout > 0 and masks is None:
        if rng is None:
            raise ValueError("training with dropout needs an rng or explicit masks")
        masks = dropout_masks([(a.shape[0], params[f"{n}.weight"].shape[1]) for n in LINEAR_NAMES[:2]],
                              dropout, rng)
    for i, name in enumerate(LINEAR_NAMES):
        cache["inputs"].append(a)
        z = a @ params[f"{name}.weight"] + params[f"{name}.bias"]
        if i == 2:
            return z, cache
        cache["pre"].append(z)
        a = np.maximum(z, 0.0)
        if train and masks is not None:
            a = a * masks[i]
            cache["masks"].append(masks[i])
        else:
            cache["masks"].append(None)
    raise AssertionError("unreachable")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = labels.size
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def backward(params: Params, cache: dict, dlogits: np.ndarray) -> Params:
    grads: Params = {}
    op = cache["op"]
    inputs, pre, masks = cache["inputs"], cache["pre"], cache["masks"]
    nconv = len(inputs) - 3
    g = dlogits
    for i in (2, 1, 0):
        name = LINEAR_NAMES[i]
        a = inputs[nconv + i]
        grads[f"{name}.weight"] = a.T @ g
        grads[f"{name}.bias"] = g.sum(axis=0)
        g = g @ params[f"{name}.weight"].T
        if i > 0:
            m = masks[i - 1]
            if m is not None:
                g = g * m
            g = g * (pre[nconv + i - 1] > 0)
    g = g * (pre[nconv - 1] > 0)
    for li in range(nconv - 1, -1, -1):
        name = f"conv{li}"
        grads[f"{name}.bias"] = g.sum(axis=0)
        gy = op.apply(g)
        grads[f"{name}.weight"] = inputs[li].T @ gy
        if li > 0:
            g = (gy @ params[f"{name}.weight"].T) * (pre[li - 1] > 0)
    return grads


def loss_and_grads(params: Params, X: np.ndarray, h, labels: np.ndarray, mask: np.ndarray,
                   train: bool = False, dropout: float = 0.0, rng: np.random.Generator | None = None,
                   masks: Sequence[np.ndarray] | None = None) -> tuple[float, Params]:
    """Mean cross-entropy over ``mask`` nodes and gradients for every parameter."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = np.flatnonzero(mask)
    if mask.size == 0:
        raise ValueError("loss needs at least one labelled node")
    y = np.asarray(labels)[mask]
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels on the training mask must be 0 or 1")
    logits, cache = forward(params, X, h, train=train, dropout=dropout, rng=rng, masks=masks)
    loss, dsel = softmax_cross_entropy(logits[mask], y)
    dlogits = np.zeros_like(logits)
    np.add.at(dlogits, mask, dsel)
    return loss, backward(params, cache, dlogits)


class Adam:
    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params: Params, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


@dataclass
class TrainResult:
    params: Params
    config: TrainConfig
    losses: list[float] = field(default_factory=list)
    train_time_sec: float = 0.0


def _as_index(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)


def train(h: CascadeHypergraph, features: np.ndarray, train_idx, cfg: TrainConfig,
          test_idx=None, params: Params | None = None) -> TrainResult:
    """Full-batch training on the labelled nodes in ``train_idx``."""
    X = getattr(features, "rows", features)
    labels = h.labels
    tr = _as_index(train_idx, h.n_nodes)
    if test_idx is not None and np.intersect1d(tr, _as_index(test_idx, h.n_nodes)).size:
        raise ValueError("train and test masks overlap")
    classes = set(labels[tr].tolist())
    if not classes <= {0, 1}:
        raise ValueError("training nodes must all be labelled fake or non-fake")
    if len(classes) < 2:
        raise ValueError("training mask covers a single class")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(X.shape[1], cfg, rng)
    opt = (Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
           if cfg.optimizer == "adam" else SGD(params, cfg.learning_rate))
    op = HypergraphOperator(h)
    result = TrainResult(params, cfg)
    start = time.perf_counter()
    for _ in range(cfg.epochs):
        loss, grads = loss_and_grads(params, X, op, labels, tr, train=True, dropout=cfg.dropout, rng=rng)
        opt.step(params, grads)
        result.losses.append(loss)
    result.train_time_sec = time.perf_counter() - start
    return result


def predict(params: Params, h, features) -> np.ndarray:
    X = getattr(features, "rows", features)
    logits, _ = forward(params, X, h)
    return logits.argmax(axis=1)


def classification_metrics(y_true, y_pred) -> dict:
    """Accuracy, support-weighted F1 and per-class precision/recall/F1 for classes {0, 1}."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("no samples to evaluate")
    out = {"accuracy": float(np.mean(y_true == y_pred)), "precision": {}, "recall": {}, "f1_per_class": {},
           "support": {}}
    weighted = 0.0
    for c in (0, 1):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        support = tp + fn
        out["precision"][str(c)] = prec
        out["recall"][str(c)] = rec
        out["f1_per_class"][str(c)] = f1
        out["support"][str(c)] = support
        weighted += support / y_true.size * f1
    out["f1_weighted"] = float(weighted)
    return out


def evaluate(params: Params, h: CascadeHypergraph, features, test_idx) -> dict:
    """Metrics on ``test_idx``; ``inference_time_sec`` covers one full forward pass plus scoring."""
    te = _as_index(test_idx, h.n_nodes)
    if te.size == 0:
        raise ValueError("test mask is empty")
    start = time.perf_counter()
    pred = predict(params, h, features)
    metrics = classification_metrics(h.labels[te], pred[te])
    metrics["inference_time_sec"] = time.perf_counter() - start
    return metrics


def save_checkpoint(path: str | Path, params: Params, cfg: TrainConfig, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(cfg), "extra": extra or {}}
    np.savez(path, __meta__=json.dumps(meta), **params)


def load_checkpoint(path: str | Path) -> tuple[Params, TrainConfig, dict]:
    with np.load(path) as z:
        meta = json.loads(str(z["__meta__"]))
        params = {k: z[k].copy() for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    cfg = dict(meta["config"])
    cfg["mlp_dims"] = tuple(cfg["mlp_dims"])
    return params, TrainConfig(**cfg), meta["extra"]
