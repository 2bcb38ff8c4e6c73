"""Dense feed-forward networks with hand-rolled gradients.

Parameters live in plain float64 numpy arrays, reverse-mode gradients are
computed against the fixed dense topology, and a central-difference oracle
is provided so every gradient path can be checked independently.  No ML
framework is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericError

HIDDEN_ACTIVATIONS = ("tanh", "relu", "sigmoid")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "softmax")

# Probabilities are clipped to [PROB_EPS, 1 - PROB_EPS] before any log().
PROB_EPS = 1e-7

MLP_FORMAT = "aeromtl-mlp"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    # Stable in both tails: never evaluates exp() on a large positive argument.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MLP:
    """Dense network: weights[l] has shape (layer_sizes[l+1], layer_sizes[l])."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    seed_lineage: list[dict] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MLP":
        return MLP(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
            seed_lineage=[dict(entry) for entry in self.seed_lineage],
        )

    def parameter_bytes(self) -> bytes:
        """Concatenated raw parameter bytes; handy for exact-change assertions."""
        return b"".join(a.tobytes() for a in self.weights + self.biases)


@dataclass
class GradientSet:
    """Per-layer gradients, shape-congruent with the MLP they came from."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]


@dataclass
class OptimizerState:
    """Gradient-descent state; ``method`` is "sgd" or "adam".

    Adam accumulators are allocated lazily on the first step so a fresh
    state can be built before the network shapes are known.
    """

    learning_rate: float = 1e-4
    method: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list | None = None
    second_moment: list | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


def mlp_init(layer_sizes, hidden_activation="tanh", output_activation="identity",
             seed=0) -> MLP:
    """Build an MLP with scaled-uniform weights and zero biases.

    Weights are drawn from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    a stable default for tanh/sigmoid nets.  Deterministic for a fixed seed.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError(f"layer_sizes needs at least input and output widths, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer widths must be positive, got {sizes}")
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ValueError(f"unknown hidden activation {hidden_activation!r}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(sizes, weights, biases, hidden_activation, output_activation,
               seed_lineage=[{"stage": "init", "seed": int(seed)}])


def _as_batch(net: MLP, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
        single = True
    elif X.ndim == 2:
        single = False
    else:
        raise ValueError(f"input must be a vector or a matrix of rows, got ndim={X.ndim}")
    if X.shape[1] != net.input_width:
        raise ValueError(f"input width {X.shape[1]} != network input width {net.input_width}")
    return X, single


def _hidden(z, tag):
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    return _sigmoid(z)


def _output(z, tag):
    if tag == "identity":
        return z
    if tag == "sigmoid":
        return _sigmoid(z)
    return _softmax(z)


def forward(net: MLP, x) -> np.ndarray:
    """Evaluate the network on one input vector or a matrix of row vectors."""
    X, single = _as_batch(net, x)
    a = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = _output(z, net.output_activation) if l == last else _hidden(z, net.hidden_activation)
    return a[0] if single else a


def _forward_cached(net: MLP, X: np.ndarray):
    """Forward pass keeping every activation; X is already a batch."""
    acts = [X]
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ W.T + b
        a = _output(z, net.output_activation) if l == last else _hidden(z, net.hidden_activation)
        acts.append(a)
    return acts


def backward(net: MLP, x, upstream_gradient) -> GradientSet:
    """Exact reverse-mode gradients of upstream . output w.r.t. all parameters.

    ``upstream_gradient`` must match the output shape.  For a batch, the
    returned gradients are summed over rows, so an upstream that already
    carries 1/N factors yields batch-mean loss gradients directly.
    """
    X, single = _as_batch(net, x)
    U = np.asarray(upstream_gradient, dtype=float)
    if single:
        if U.shape != (net.output_width,):
            raise ValueError(f"upstream shape {U.shape} != output width ({net.output_width},)")
        U = U[None, :]
    elif U.shape != (X.shape[0], net.output_width):
        raise ValueError(
            f"upstream shape {U.shape} != batch output shape {(X.shape[0], net.output_width)}")

    acts = _forward_cached(net, X)
    out = acts[-1]
    tag = net.output_activation
    if tag == "identity":
        delta = U
    elif tag == "sigmoid":
        delta = U * out * (1.0 - out)
    else:  # softmax: J^T u = s * (u - (u . s))
        delta = out * (U - (U * out).sum(axis=1, keepdims=True))

    n_layers = len(net.weights)
    weight_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        weight_grads[l] = delta.T @ acts[l]
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            back = delta @ net.weights[l]
            h = acts[l]
            if net.hidden_activation == "tanh":
                delta = back * (1.0 - h * h)
            elif net.hidden_activation == "relu":
                delta = back * (h > 0.0)
            else:
                delta = back * h * (1.0 - h)
    return GradientSet(weight_grads, bias_grads)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    if p.size == 0:
        raise ValueError("mse_loss needs at least one element")
    diff = p - t
    loss = float(np.mean(diff * diff))
    grad = (2.0 / p.size) * diff
    return loss, grad


def _check_probs(probs) -> np.ndarray:
    c = np.asarray(probs, dtype=float)
    if c.size == 0:
        raise ValueError("empty probability input")
    if np.any(c < 0.0) or np.any(c > 1.0) or not np.all(np.isfinite(c)):
        raise ValueError("probabilities must lie in [0, 1] before clipping")
    return np.clip(c, PROB_EPS, 1.0 - PROB_EPS)


def cross_entropy_loss(predicted_probs, true_onehot) -> tuple[float, np.ndarray]:
    """Categorical cross-entropy -sum(p * log(c)) and its gradient w.r.t. c.

    For a (n, q) batch the loss is averaged over rows.  Predictions are
    clipped to [PROB_EPS, 1 - PROB_EPS] so one-hot-confident inputs stay
    finite; the gradient is that of the clipped expression.
    """
    p = np.asarray(true_onehot, dtype=float)
    c = np.asarray(predicted_probs, dtype=float)
    if p.shape != c.shape:
        raise ValueError(f"shape mismatch: probs {c.shape} vs onehot {p.shape}")
    if not np.all((p == 0.0) | (p == 1.0)):
        raise ValueError("true_onehot entries must be 0 or 1")
    c = _check_probs(c)
    rows = 1 if c.ndim == 1 else c.shape[0]
    loss = float(-(p * np.log(c)).sum() / rows)
    grad = -(p / c) / rows
    return loss, grad


def binary_cross_entropy(predicted_probs, bits) -> tuple[float, np.ndarray]:
    """Elementwise binary cross-entropy, averaged over all elements."""
    p = np.asarray(bits, dtype=float)
    c = np.asarray(predicted_probs, dtype=float)
    if p.shape != c.shape:
        raise ValueError(f"shape mismatch: probs {c.shape} vs bits {p.shape}")
    if not np.all((p == 0.0) | (p == 1.0)):
        raise ValueError("bits must be 0 or 1")
    c = _check_probs(c)
    loss = float(-np.mean(p * np.log(c) + (1.0 - p) * np.log1p(-c)))
    grad = (-(p / c) + (1.0 - p) / (1.0 - c)) / c.size
    return loss, grad


def _congruent(net: MLP, grads: GradientSet) -> None:
    if len(grads.weight_grads) != len(net.weights) or len(grads.bias_grads) != len(net.biases):
        raise ValueError("gradient set has a different number of layers than the network")
    for l, (w, gw, b, gb) in enumerate(
            zip(net.weights, grads.weight_grads, net.biases, grads.bias_grads)):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ValueError(f"gradient shapes do not match parameters at layer {l}")


def sgd_step(net: MLP, grads: GradientSet, opt: OptimizerState) -> MLP:
    """One descent step theta <- theta - eta * step(grad), in place.

    "sgd" applies the raw gradient; "adam" applies bias-corrected
    first/second-moment normalization.  Raises NumericError (with the
    offending layer index) on non-finite gradients or parameters.
    """
    _congruent(net, grads)
    for l, (gw, gb) in enumerate(zip(grads.weight_grads, grads.bias_grads)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite gradient", layer_index=l)

    params = net.weights + net.biases
    grad_list = grads.weight_grads + grads.bias_grads
    eta = opt.learning_rate
    if opt.method == "sgd":
        for theta, g in zip(params, grad_list):
            theta -= eta * g
    else:
        if opt.first_moment is None:
            opt.first_moment = [np.zeros_like(p) for p in params]
            opt.second_moment = [np.zeros_like(p) for p in params]
        if len(opt.first_moment) != len(params):
            raise ValueError("optimizer accumulators do not match the network")
        opt.step_count += 1
        b1, b2 = opt.beta1, opt.beta2
        c1 = 1.0 - b1 ** opt.step_count
        c2 = 1.0 - b2 ** opt.step_count
        for theta, g, m, v in zip(params, grad_list, opt.first_moment, opt.second_moment):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            theta -= eta * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)

    for l, theta in enumerate(params):
        if not np.all(np.isfinite(theta)):
            raise NumericError("non-finite parameter after update",
                               layer_index=l % len(net.weights))
    return net


def fd_gradient(loss_fn: Callable[[MLP], float], net: MLP, h: float = 1e-6) -> GradientSet:
    """Central-difference gradient oracle: (L(theta+h) - L(theta-h)) / (2h).

    Perturbs parameters in place and restores them; the closure sees the
    live network.  Slow by design, for verification only.
    """
    if not (h > 0):
        raise ValueError(f"step h must be positive, got {h}")

    def estimate(arr):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn(net)
            flat[i] = orig - h
            lm = loss_fn(net)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        return g

    return GradientSet([estimate(w) for w in net.weights],
                       [estimate(b) for b in net.biases])


# -- checkpoint I/O ---------------------------------------------------------
#
# Checkpoints are self-describing JSON.  Floats rely on repr round-tripping,
# so save -> load -> save reproduces the file byte for byte.

def write_json(obj: dict, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def mlp_to_payload(net: MLP) -> dict:
    return {
        "layer_sizes": [int(s) for s in net.layer_sizes],
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed_lineage": net.seed_lineage,
    }


def mlp_from_payload(payload: dict) -> MLP:
    sizes = [int(s) for s in payload["layer_sizes"]]
    weights = [np.asarray(w, dtype=float) for w in payload["weights"]]
    biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
    net = MLP(sizes, weights, biases,
              payload["hidden_activation"], payload["output_activation"],
              seed_lineage=list(payload.get("seed_lineage", [])))
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
            raise ValueError(f"checkpoint parameter shapes inconsistent at layer {l}")
    return net


def save_mlp(net: MLP, path) -> None:
    write_json({"format": MLP_FORMAT, "version": CHECKPOINT_VERSION,
                **mlp_to_payload(net)}, path)


def load_mlp(path) -> MLP:
    payload = read_json(path)
    if payload.get("format") != MLP_FORMAT:
        raise ValueError(f"not an MLP checkpoint: {path}")
    return mlp_from_payload(payload)
