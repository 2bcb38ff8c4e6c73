"""Mixture-of-experts regression: per-cluster function and context networks.

Each cluster pairs a regression head (function network, identity output)
with a one-unit sigmoid gate (context network).  The model output is the
gate-weighted sum y = sum_j f_j * c_j.  Training alternates: a function
step backpropagates the regression MSE through the mixture with gate
values held constant, then a context step fits each gate to its allocation
label bit with binary cross-entropy.  The two parameter sets never touch
each other's gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import one_hot_rows
from .errors import NumericError, TrainingDivergedError
from .nn import (
    MLP,
    OptimizerState,
    _hidden,
    _output,
    backward,
    binary_cross_entropy,
    forward,
    mlp_from_payload,
    mlp_init,
    mlp_to_payload,
    mse_loss,
    read_json,
    sgd_step,
    write_json,
)

CLUSTERNET_FORMAT = "aeromtl-clusternet"
CHECKPOINT_VERSION = 1


@dataclass
class Cluster:
    function_net: MLP
    context_net: MLP


@dataclass
class ClusterNet:
    clusters: list[Cluster]
    seed_lineage: list[dict] = field(default_factory=list)

    @property
    def q(self) -> int:
        return len(self.clusters)

    @property
    def input_width(self) -> int:
        return self.clusters[0].function_net.input_width

    @property
    def output_width(self) -> int:
        return self.clusters[0].function_net.output_width

    def copy(self) -> "ClusterNet":
        return ClusterNet(
            [Cluster(c.function_net.copy(), c.context_net.copy()) for c in self.clusters],
            [dict(e) for e in self.seed_lineage],
        )

    def validate(self) -> None:
        if not self.clusters:
            raise ValueError("a ClusterNet needs at least one cluster")
        f_sizes = self.clusters[0].function_net.layer_sizes
        c_sizes = self.clusters[0].context_net.layer_sizes
        for i, c in enumerate(self.clusters):
            if c.function_net.layer_sizes != f_sizes or c.context_net.layer_sizes != c_sizes:
                raise ValueError(f"cluster {i} is not dimensionally identical to cluster 0")
            if c.function_net.input_width != c.context_net.input_width:
                raise ValueError(f"cluster {i} nets disagree on input width")
            if c.context_net.output_width != 1:
                raise ValueError(f"cluster {i} context net must have one output unit")
            if c.context_net.output_activation != "sigmoid":
                raise ValueError(f"cluster {i} context net must use a sigmoid gate")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    iterations: int = 2000
    seed: int = 0
    optimizer: str = "sgd"
    gate_mode: str = "soft"

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.gate_mode not in ("soft", "hard"):
            raise ValueError(f"unknown gate_mode {self.gate_mode!r}")


@dataclass
class LossTrace:
    """Per-iteration losses; ``loss_context`` is None for gateless models."""

    loss_function: np.ndarray
    loss_context: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.loss_function)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,loss_function,loss_context\n")
            for i, lf in enumerate(self.loss_function):
                lc = "" if self.loss_context is None else repr(float(self.loss_context[i]))
                fh.write(f"{i},{repr(float(lf))},{lc}\n")


@dataclass
class ClusterNetOptState:
    """One optimizer state per network, function and context kept apart."""

    function_opts: list[OptimizerState]
    context_opts: list[OptimizerState]

    @classmethod
    def for_model(cls, model: ClusterNet, config: TrainConfig) -> "ClusterNetOptState":
        make = lambda: OptimizerState(learning_rate=config.learning_rate,  # noqa: E731
                                      method=config.optimizer)
        return cls([make() for _ in model.clusters], [make() for _ in model.clusters])


def clusternet_init(input_width, output_width, cluster_count, function_hidden,
                    context_hidden, seed=0, hidden_activation="tanh") -> ClusterNet:
    """Build ``cluster_count`` identical (function, context) pairs.

    Every network gets its own seed derived from ``seed`` via a seed
    sequence, so models are deterministic yet no two nets share weights.
    """
    q = int(cluster_count)
    if q < 1:
        raise ValueError(f"cluster_count must be >= 1, got {q}")
    children = np.random.SeedSequence(seed).spawn(2 * q)
    net_seeds = [int(c.generate_state(1)[0]) for c in children]
    clusters = []
    for j in range(q):
        f = mlp_init([input_width, *function_hidden, output_width],
                     hidden_activation=hidden_activation,
                     output_activation="identity", seed=net_seeds[2 * j])
        c = mlp_init([input_width, *context_hidden, 1],
                     hidden_activation=hidden_activation,
                     output_activation="sigmoid", seed=net_seeds[2 * j + 1])
        clusters.append(Cluster(f, c))
    model = ClusterNet(clusters, seed_lineage=[{"stage": "init", "seed": int(seed),
                                                "net_seeds": net_seeds}])
    model.validate()
    return model


def clusternet_forward(model: ClusterNet, x):
    """Mixture output plus per-cluster pieces.

    For one input vector returns (y (p,), f (q, p), c (q,)); for a batch
    of n rows returns (y (n, p), f (n, q, p), c (n, q)).  y accumulates
    f_j * c_j cluster by cluster, exactly as the definition reads.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    n = X.shape[0]
    q = model.q
    p = model.output_width
    f = np.empty((n, q, p))
    c = np.empty((n, q))
    for j, cluster in enumerate(model.clusters):
        f[:, j, :] = forward(cluster.function_net, X)
        c[:, j] = forward(cluster.context_net, X)[:, 0]
    y = np.zeros((n, p))
    for j in range(q):
        y += f[:, j, :] * c[:, j, None]
    if single:
        return y[0], f[0], c[0]
    return y, f, c


def predict(model: ClusterNet, x, gate_mode="soft") -> np.ndarray:
    """Soft: gate-weighted sum.  Hard: the argmax-gate cluster's output alone."""
    y, f, c = clusternet_forward(model, x)
    if gate_mode == "soft":
        return y
    if gate_mode != "hard":
        raise ValueError(f"unknown gate_mode {gate_mode!r}")
    if y.ndim == 1:
        return f[int(np.argmax(c))]
    winners = np.argmax(c, axis=1)
    return f[np.arange(len(winners)), winners, :]


def function_loss(model: ClusterNet, X, Y) -> float:
    """Mixture-output MSE without touching any parameters."""
    y, _, _ = clusternet_forward(model, X)
    loss, _ = mse_loss(y, np.asarray(Y, dtype=float))
    return loss


def context_loss(model: ClusterNet, X, onehot) -> float:
    """Mean per-gate binary cross-entropy against label bits (batch x clusters)."""
    _, _, c = clusternet_forward(model, X)
    loss, _ = binary_cross_entropy(c, np.asarray(onehot, dtype=float))
    return loss


def _batchify(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) == 0:
        raise ValueError("empty batch")
    if len(X) != len(Y):
        raise ValueError("batch inputs and targets disagree on row count")
    return X, Y


def train_step_function(model: ClusterNet, X, targets, opt: ClusterNetOptState) -> float:
    """One regression step: MSE through the mixture, gates held constant.

    Only function-network parameters change; context networks are not even
    read for gradients, so their bytes are untouched.
    """
    X, Y = _batchify(X, targets)
    y, f, c = clusternet_forward(model, X)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, dpred = mse_loss(y, Y)
    if not np.isfinite(loss):
        raise NumericError("non-finite function loss")
    for j, cluster in enumerate(model.clusters):
        upstream = dpred * c[:, j, None]
        grads = backward(cluster.function_net, X, upstream)
        sgd_step(cluster.function_net, grads, opt.function_opts[j])
    return loss


def train_step_context(model: ClusterNet, X, onehot_labels, opt: ClusterNetOptState) -> float:
    """One gating step: per-cluster binary cross-entropy against label bits.

    Only context-network parameters change; function networks are untouched.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(onehot_labels, dtype=float))
    if len(X) == 0:
        raise ValueError("empty batch")
    if P.shape != (len(X), model.q):
        raise ValueError(f"labels shape {P.shape} != {(len(X), model.q)}")
    c = np.column_stack([forward(cluster.context_net, X)[:, 0]
                         for cluster in model.clusters])
    if not np.all(np.isfinite(c)):
        raise NumericError("non-finite gate values")
    loss, dc = binary_cross_entropy(c, P)
    if not np.isfinite(loss):
        raise NumericError("non-finite context loss")
    for j, cluster in enumerate(model.clusters):
        grads = backward(cluster.context_net, X, dc[:, j, None])
        sgd_step(cluster.context_net, grads, opt.context_opts[j])
    return loss


def _draw_batch(rng, n, batch_size):
    if batch_size >= n:
        return rng.permutation(n)
    return rng.choice(n, size=batch_size, replace=False)


class _StackedNets:
    """Train-time view of q same-shaped MLPs as (q, out, in) tensors.

    Batched matmuls over the cluster axis replace q separate calls, which
    is what makes long runs affordable.  Parameters are copied in on
    construction and written back to the per-cluster nets afterwards.
    """

    def __init__(self, nets: list[MLP]):
        self.hidden = nets[0].hidden_activation
        self.output = nets[0].output_activation
        self.n_layers = len(nets[0].weights)
        self.W = [np.stack([n.weights[l] for n in nets]) for l in range(self.n_layers)]
        self.b = [np.stack([n.biases[l] for n in nets]) for l in range(self.n_layers)]

    def tensors(self):
        return self.W + self.b

    def forward_cached(self, X: np.ndarray) -> list[np.ndarray]:
        """Activations per layer; X (n, in) is shared by every cluster."""
        acts = [X]
        a = X
        for l in range(self.n_layers):
            z = np.matmul(a, self.W[l].transpose(0, 2, 1)) + self.b[l][:, None, :]
            a = _output(z, self.output) if l == self.n_layers - 1 else _hidden(z, self.hidden)
            acts.append(a)
        return acts

    def gradients(self, acts: list[np.ndarray], upstream: np.ndarray):
        """Reverse-mode gradients given upstream (q, n, out), summed over rows."""
        out = acts[-1]
        if self.output == "identity":
            delta = upstream
        elif self.output == "sigmoid":
            delta = upstream * out * (1.0 - out)
        else:
            delta = out * (upstream - (upstream * out).sum(axis=2, keepdims=True))
        gW = [None] * self.n_layers
        gb = [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            gW[l] = np.matmul(delta.transpose(0, 2, 1), acts[l])
            gb[l] = delta.sum(axis=1)
            if l > 0:
                back = np.matmul(delta, self.W[l])
                h = acts[l]
                if self.hidden == "tanh":
                    delta = back * (1.0 - h * h)
                elif self.hidden == "relu":
                    delta = back * (h > 0.0)
                else:
                    delta = back * h * (1.0 - h)
        return gW + gb

    def write_back(self, nets: list[MLP]) -> None:
        for j, net in enumerate(nets):
            for l in range(self.n_layers):
                net.weights[l][...] = self.W[l][j]
                net.biases[l][...] = self.b[l][j]


class _StackedAdam:
    """Adam (or plain descent) over a list of stacked tensors.

    The update arithmetic mirrors sgd_step exactly so the stacked trainer
    and the per-cluster step ops stay numerically interchangeable.
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, tensors, config: TrainConfig):
        self.eta = config.learning_rate
        self.adam = config.optimizer == "adam"
        self.t = 0
        if self.adam:
            self.m = [np.zeros_like(p) for p in tensors]
            self.v = [np.zeros_like(p) for p in tensors]

    def step(self, tensors, grads) -> None:
        if not self.adam:
            for p, g in zip(tensors, grads):
                p -= self.eta * g
            return
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * (g * g)
            p -= self.eta * (m / c1) / (np.sqrt(v / c2) + self.EPS)


def train(model: ClusterNet, dataset, config: TrainConfig) -> LossTrace:
    """Alternating training on the dataset's train split.

    Every iteration draws one shuffled batch, runs a function step and then
    a context step, and records (L_f, L_c).  Deterministic for a fixed
    config seed.  Raises TrainingDivergedError with the iteration index if
    either loss stops being finite.

    Internally the q clusters are trained as stacked tensors for speed; the
    semantics match running train_step_function then train_step_context on
    each batch (up to matmul rounding), and parameter separation between
    function and context networks holds by construction.
    """
    model.validate()
    if dataset.labels is None:
        raise ValueError("dataset has no allocation labels; allocate before training")
    if dataset.allocation is not None and dataset.allocation.k != model.q:
        raise ValueError(
            f"allocation k={dataset.allocation.k} != model cluster count q={model.q}")

    idx = dataset.train_idx
    X = dataset.inputs[idx]
    Y = dataset.targets[idx]
    if Y.ndim == 1:
        Y = Y[:, None]
    P = one_hot_rows(dataset.labels[idx], model.q)
    rng = np.random.default_rng(config.seed)

    fnets = _StackedNets([c.function_net for c in model.clusters])
    cnets = _StackedNets([c.context_net for c in model.clusters])
    fopt = _StackedAdam(fnets.tensors(), config)
    copt = _StackedAdam(cnets.tensors(), config)

    lf_trace = np.empty(config.iterations)
    lc_trace = np.empty(config.iterations)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for it in range(config.iterations):
                batch = _draw_batch(rng, len(X), config.batch_size)
                xb, yb, pb = X[batch], Y[batch], P[batch]

                # function step: MSE through the mixture, gates constant
                c_acts = cnets.forward_cached(xb)
                c = c_acts[-1][:, :, 0].T                      # (n, q)
                if not np.all(np.isfinite(c)):
                    raise TrainingDivergedError("gate values are not finite",
                                                iteration=it)
                f_acts = fnets.forward_cached(xb)
                f = f_acts[-1]                                 # (q, n, p)
                pred = (f * c.T[:, :, None]).sum(axis=0)
                lf, dpred = mse_loss(pred, yb)
                if not np.isfinite(lf):
                    raise TrainingDivergedError("training loss is not finite",
                                                iteration=it)
                upstream_f = dpred[None, :, :] * c.T[:, :, None]
                fopt.step(fnets.tensors(), fnets.gradients(f_acts, upstream_f))

                # context step: per-gate binary cross-entropy against label bits
                lc, dc = binary_cross_entropy(c, pb)
                if not np.isfinite(lc):
                    raise TrainingDivergedError("training loss is not finite",
                                                iteration=it)
                upstream_c = dc.T[:, :, None]
                copt.step(cnets.tensors(), cnets.gradients(c_acts, upstream_c))

                lf_trace[it] = lf
                lc_trace[it] = lc
    finally:
        fnets.write_back([c.function_net for c in model.clusters])
        cnets.write_back([c.context_net for c in model.clusters])

    model.seed_lineage.append({"stage": "train", "seed": int(config.seed),
                               "iterations": int(config.iterations)})
    return LossTrace(lf_trace, lc_trace)


def train_fcn(net: MLP, dataset, config: TrainConfig) -> LossTrace:
    """Plain minibatch MSE descent for the baseline fully connected net."""
    idx = dataset.train_idx
    X = dataset.inputs[idx]
    Y = dataset.targets[idx]
    opt = OptimizerState(learning_rate=config.learning_rate, method=config.optimizer)
    rng = np.random.default_rng(config.seed)

    trace = np.empty(config.iterations)
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.iterations):
            batch = _draw_batch(rng, len(X), config.batch_size)
            pred = forward(net, X[batch])
            loss, dpred = mse_loss(pred, Y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError("training loss is not finite", iteration=it)
            grads = backward(net, X[batch], dpred)
            try:
                sgd_step(net, grads, opt)
            except NumericError as exc:
                raise TrainingDivergedError(str(exc), iteration=it) from exc
            trace[it] = loss
    net.seed_lineage.append({"stage": "train", "seed": int(config.seed),
                             "iterations": int(config.iterations)})
    return LossTrace(trace, None)


# -- checkpoint I/O ----------------------------------------------------------

def save_clusternet(model: ClusterNet, path) -> None:
    write_json({
        "format": CLUSTERNET_FORMAT,
        "version": CHECKPOINT_VERSION,
        "cluster_count": model.q,
        "clusters": [{"function_net": mlp_to_payload(c.function_net),
                      "context_net": mlp_to_payload(c.context_net)}
                     for c in model.clusters],
        "seed_lineage": model.seed_lineage,
    }, path)


def load_clusternet(path) -> ClusterNet:
    payload = read_json(path)
    if payload.get("format") != CLUSTERNET_FORMAT:
        raise ValueError(f"not a ClusterNet checkpoint: {path}")
    clusters = [Cluster(mlp_from_payload(c["function_net"]),
                        mlp_from_payload(c["context_net"]))
                for c in payload["clusters"]]
    if len(clusters) != int(payload["cluster_count"]):
        raise ValueError("checkpoint cluster count disagrees with its contents")
    model = ClusterNet(clusters, seed_lineage=list(payload.get("seed_lineage", [])))
    model.validate()
    return model
