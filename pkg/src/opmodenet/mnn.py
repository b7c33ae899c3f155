"""Modular neural network for operating-mode distributions.

Architecture: input -> 128 -> 64 shared trunk, four 32-unit speed-group
modules with heads of 2/6/9/6 outputs, one softmax across the concatenated
23 logits. Training uses MSE loss (cross-entropy behind a flag), inverted
dropout on both shared layers and each module trunk, mini-batch Adam, and a
single seed driving every random choice so runs are exactly reproducible.

Implemented directly on numpy with analytic gradients; the finite-difference
oracle in the test suite checks every parameter.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .opmode import MODULE_BINS, N_BINS

HEAD_WIDTHS = [len(m) for m in MODULE_BINS]  # 2, 6, 9, 6


@dataclass(frozen=True)
class NetworkLayout:
    input_dim: int
    shared_widths: tuple[int, int] = (128, 64)
    module_width: int = 32
    head_widths: tuple[int, ...] = tuple(HEAD_WIDTHS)
    dropout: float = 0.3

    def __post_init__(self):
        if sum(self.head_widths) != N_BINS:
            raise ValidationError(f"head widths {self.head_widths} must sum to {N_BINS}")
        if len(self.head_widths) != 4:
            raise ValidationError("exactly four modules expected")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 1000
    dropout: float = 0.3
    test_fraction: float = 0.2
    seed: int = 0
    shuffle_per_epoch: bool = True
    loss: str = "mse"  # or "cross_entropy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.loss not in ("mse", "cross_entropy"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")


def _param_shapes(layout: NetworkLayout) -> dict[str, tuple[int, ...]]:
    w1, w2 = layout.shared_widths
    m = layout.module_width
    shapes: dict[str, tuple[int, ...]] = {
        "W1": (w1, layout.input_dim),
        "b1": (w1,),
        "W2": (w2, w1),
        "b2": (w2,),
    }
    for i, h in enumerate(layout.head_widths):
        shapes[f"U{i}"] = (m, w2)
        shapes[f"c{i}"] = (m,)
        shapes[f"V{i}"] = (h, m)
        shapes[f"d{i}"] = (h,)
    return shapes


def param_count(layout: NetworkLayout) -> int:
    """Closed-form parameter count from the layout arithmetic."""
    n = layout.input_dim
    w1, w2 = layout.shared_widths
    m = layout.module_width
    total = n * w1 + w1 + w1 * w2 + w2
    total += len(layout.head_widths) * (w2 * m + m)
    total += sum(m * h + h for h in layout.head_widths)
    return total


@dataclass
class ModelParameters:
    layout: NetworkLayout
    weights: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0

    def count(self) -> int:
        return sum(w.size for w in self.weights.values())


def init(layout: NetworkLayout, seed: int) -> ModelParameters:
    """Glorot-uniform weights, zero biases, zeroed Adam state."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(layout).items():
        if len(shape) == 1:
            weights[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParameters(
        layout=layout,
        weights=weights,
        adam_m={k: np.zeros_like(v) for k, v in weights.items()},
        adam_v={k: np.zeros_like(v) for k, v in weights.items()},
        step=0,
        seed=seed,
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(
    params: ModelParameters,
    x: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Batch forward pass; returns (B, 23) probabilities on the simplex.

    Train mode applies inverted dropout to both shared activations and each
    module trunk output; eval mode applies none and needs no rescaling.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    layout = params.layout
    if x.shape[1] != layout.input_dim:
        raise ValidationError(f"input dim {x.shape[1]} != layout input dim {layout.input_dim}")
    w = params.weights
    p = layout.dropout
    train = mode == "train"
    if train and p > 0 and rng is None:
        raise ConfigurationError("train-mode forward with dropout requires an rng")

    def drop_mask(shape):
        if not train or p == 0.0:
            return None
        return (rng.random(shape) >= p) / (1.0 - p)

    h1 = np.maximum(w["W1"] @ x.T + w["b1"][:, None], 0.0).T
    m1 = drop_mask(h1.shape)
    h1d = h1 if m1 is None else h1 * m1
    h2 = np.maximum(w["W2"] @ h1d.T + w["b2"][:, None], 0.0).T
    m2 = drop_mask(h2.shape)
    h2d = h2 if m2 is None else h2 * m2

    logits = []
    trunks, trunk_masks, trunks_d = [], [], []
    for i in range(len(layout.head_widths)):
        t = np.maximum(w[f"U{i}"] @ h2d.T + w[f"c{i}"][:, None], 0.0).T
        mt = drop_mask(t.shape)
        td = t if mt is None else t * mt
        trunks.append(t)
        trunk_masks.append(mt)
        trunks_d.append(td)
        logits.append(td @ w[f"V{i}"].T + w[f"d{i}"])
    z = np.concatenate(logits, axis=1)
    probs = _softmax(z)
    if not return_cache:
        return probs
    cache = {
        "x": x,
        "h1": h1, "m1": m1, "h1d": h1d,
        "h2": h2, "m2": m2, "h2d": h2d,
        "trunks": trunks, "trunk_masks": trunk_masks, "trunks_d": trunks_d,
        "probs": probs,
    }
    return probs, cache


def loss(pred: np.ndarray, target: np.ndarray, kind: str = "mse") -> float:
    """Batch loss: mean over samples of the per-sample component mean (MSE)
    or of the cross-entropy against the target distribution."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if kind == "mse":
        return float(np.mean((pred - target) ** 2))
    return float(np.mean(-np.sum(target * np.log(np.clip(pred, 1e-12, None)), axis=1)))


def backward(params: ModelParameters, cache: dict, target: np.ndarray, kind: str = "mse") -> dict[str, np.ndarray]:
    """Analytic gradients of the batch loss w.r.t. every parameter.

    The softmax Jacobian couples all 23 logits across module heads, so the
    logit gradient is computed jointly before being split per head.
    """
    w = params.weights
    layout = params.layout
    target = np.atleast_2d(np.asarray(target, dtype=float))
    probs = cache["probs"]
    batch = probs.shape[0]

    if kind == "mse":
        g = 2.0 * (probs - target) / (N_BINS * batch)
        dz = probs * (g - np.sum(g * probs, axis=1, keepdims=True))
    else:
        # cross-entropy with distribution targets: dL/dz = (sum(y) * p - y) / B
        dz = (target.sum(axis=1, keepdims=True) * probs - target) / batch
    if not np.all(np.isfinite(dz)):
        raise ValidationError("non-finite gradient at the output layer")

    grads: dict[str, np.ndarray] = {}
    dh2d = np.zeros_like(cache["h2d"])
    offset = 0
    for i, h in enumerate(layout.head_widths):
        dz_i = dz[:, offset : offset + h]
        offset += h
        td = cache["trunks_d"][i]
        grads[f"V{i}"] = dz_i.T @ td
        grads[f"d{i}"] = dz_i.sum(axis=0)
        dtd = dz_i @ w[f"V{i}"]
        mt = cache["trunk_masks"][i]
        if mt is not None:
            dtd = dtd * mt
        dt = dtd * (cache["trunks"][i] > 0)
        grads[f"U{i}"] = dt.T @ cache["h2d"]
        grads[f"c{i}"] = dt.sum(axis=0)
        dh2d += dt @ w[f"U{i}"]

    if cache["m2"] is not None:
        dh2d = dh2d * cache["m2"]
    dh2 = dh2d * (cache["h2"] > 0)
    grads["W2"] = dh2.T @ cache["h1d"]
    grads["b2"] = dh2.sum(axis=0)
    dh1d = dh2 @ w["W2"]
    if cache["m1"] is not None:
        dh1d = dh1d * cache["m1"]
    dh1 = dh1d * (cache["h1"] > 0)
    grads["W1"] = dh1.T @ cache["x"]
    grads["b1"] = dh1.sum(axis=0)
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise ValidationError(f"non-finite gradient in {name}")
    return grads


def adam_step(
    params: ModelParameters,
    grads: dict[str, np.ndarray],
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelParameters:
    """In-place Adam update with bias correction; advances the step counter."""
    params.step += 1
    t = params.step
    for name, g in grads.items():
        m = params.adam_m[name] = beta1 * params.adam_m[name] + (1 - beta1) * g
        v = params.adam_v[name] = beta2 * params.adam_v[name] + (1 - beta2) * g**2
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        params.weights[name] = params.weights[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def split_indices(n: int, seed: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test index split shared by the encoder fit and training."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ConfigurationError(f"split of {n} samples leaves an empty side")
    return perm[n_test:], perm[:n_test]


def train(
    features: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ModelParameters, dict[str, list[float]]]:
    """Train on an 80:20 seeded split with per-epoch reshuffling.

    Returns the final parameters and the per-epoch train/test loss history.
    All randomness (init, split, shuffles, dropout masks) derives from
    config.seed.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(features) == 0:
        raise ConfigurationError("empty dataset")
    if split is None:
        split = split_indices(len(features), config.seed, config.test_fraction)
    train_idx, test_idx = split
    x_train, y_train = features[train_idx], targets[train_idx]
    x_test, y_test = features[test_idx], targets[test_idx]

    layout = NetworkLayout(input_dim=features.shape[1], dropout=config.dropout)
    params = init(layout, config.seed)
    epoch_rng = np.random.default_rng(config.seed + 1)

    history: dict[str, list[float]] = {"train": [], "test": []}
    n = len(x_train)
    for _ in range(config.epochs):
        order = epoch_rng.permutation(n) if config.shuffle_per_epoch else np.arange(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            probs, cache = forward(params, x_train[idx], mode="train", rng=epoch_rng, return_cache=True)
            batch_losses.append(loss(probs, y_train[idx], config.loss))
            grads = backward(params, cache, y_train[idx], config.loss)
            adam_step(params, grads, lr=config.learning_rate)
        history["train"].append(float(np.mean(batch_losses)))
        history["test"].append(loss(forward(params, x_test), y_test, config.loss))
    return params, history


def predict(params: ModelParameters, features: np.ndarray) -> np.ndarray:
    """Eval-mode distributions, one row per input on the 23-simplex."""
    return forward(params, features, mode="eval")


# ---------------------------------------------------------------------------
# deterministic model file: JSON header + little-endian float64 blob

_MAGIC = b"OPMODENN1\n"


def save_model(path, params: ModelParameters, encoder_digest: str, config: TrainConfig) -> None:
    order = sorted(params.weights)
    header = {
        "format_version": 1,
        "layout": {
            "input_dim": params.layout.input_dim,
            "shared_widths": list(params.layout.shared_widths),
            "module_width": params.layout.module_width,
            "head_widths": list(params.layout.head_widths),
            "dropout": params.layout.dropout,
        },
        "weights": {k: list(params.weights[k].shape) for k in order},
        "step": params.step,
        "seed": params.seed,
        "encoder_digest": encoder_digest,
        "train_config": {
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "dropout": config.dropout,
            "test_fraction": config.test_fraction,
            "seed": config.seed,
            "shuffle_per_epoch": config.shuffle_per_epoch,
            "loss": config.loss,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(params.weights[k], dtype="<f8").tobytes() for k in order)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(blob)


def load_model(path, expect_encoder_digest: str | None = None) -> tuple[ModelParameters, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValidationError(f"{path}: not a model file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len))
        blob = fh.read()
    if expect_encoder_digest is not None and header["encoder_digest"] != expect_encoder_digest:
        raise ValidationError(
            "model was trained against a different encoder "
            f"({header['encoder_digest'][:12]} != {expect_encoder_digest[:12]})"
        )
    layout = NetworkLayout(
        input_dim=header["layout"]["input_dim"],
        shared_widths=tuple(header["layout"]["shared_widths"]),
        module_width=header["layout"]["module_width"],
        head_widths=tuple(header["layout"]["head_widths"]),
        dropout=header["layout"]["dropout"],
    )
    weights = {}
    offset = 0
    for name in sorted(header["weights"]):
        shape = tuple(header["weights"][name])
        size = int(np.prod(shape))
        weights[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=offset * 8).reshape(shape).copy()
        offset += size
    params = ModelParameters(
        layout=layout,
        weights=weights,
        adam_m={k: np.zeros_like(v) for k, v in weights.items()},
        adam_v={k: np.zeros_like(v) for k, v in weights.items()},
        step=header["step"],
        seed=header["seed"],
    )
    return params, header


def model_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
