"""Surrogate-gradient BPTT for the float reference network, at toy scale.

Loss: cross-entropy of softmax(output membrane) summed over timesteps, averaged
over the batch. The membrane used is the pre-reset candidate ``beta*u + i``.
Spikes use a Heaviside forward and the fast-sigmoid derivative
``1 / (k|x| + 1)**2`` backward. The reset is a stop-gradient: it multiplies the
membrane by a constant mask.

``spike_mode="smooth"`` swaps the forward spike value for ``x / (1 + k|x|)``,
whose exact derivative is the surrogate. The backward pass is shared, so a
finite-difference check in that mode validates the BPTT bookkeeping used by
ordinary training.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoding import derive_seed, rate_encode_batch
from .fixedpoint import Q1_15
from .network import FloatNetwork, NetworkConfig, predict_from_counts, run_float
from .neuron import RESET_ZERO

log = logging.getLogger(__name__)

_EVAL_STREAM = 0x5EED
_SHUFFLE_STREAM = 1
_DROPOUT_STREAM = 2


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 32
    timesteps: int = 25
    slope: float = 25.0
    seed: int = 0
    clip_to_fixed: bool = True  # keep weights inside the Q1.15 range

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.timesteps < 1:
            raise ValueError("epochs, batch_size and timesteps must be >= 1")
        if self.slope <= 0:
            raise ValueError("surrogate slope must be positive")


@dataclass
class ToyDataset:
    images: np.ndarray  # (n, 8, 8) in [0, 1]
    labels: np.ndarray  # (n,) in {0, 1}
    is_test: np.ndarray  # (n,) bool
    seed: int = 0

    @property
    def train_images(self):
        return self.images[~self.is_test]

    @property
    def train_labels(self):
        return self.labels[~self.is_test]

    @property
    def test_images(self):
        return self.images[self.is_test]

    @property
    def test_labels(self):
        return self.labels[self.is_test]


def make_toy_dataset(seed: int, n_samples: int, size: int = 8, test_fraction: float = 0.25,
                     noise: float = 0.08) -> ToyDataset:
    """Two classes: bright left half (label 0) or bright right half (label 1)."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % 2)
    bright = rng.uniform(0.55, 0.95, size=(n_samples, 1, 1))
    dim = rng.uniform(0.0, 0.25, size=(n_samples, 1, 1))
    left = np.arange(size) < size // 2
    left_bright = (labels == 0)[:, None, None] & left[None, None, :]
    right_bright = (labels == 1)[:, None, None] & ~left[None, None, :]
    base = np.where(left_bright | right_bright, bright, dim)
    images = np.clip(base + rng.normal(0.0, noise, size=(n_samples, size, size)), 0.0, 1.0)
    is_test = np.zeros(n_samples, dtype=bool)
    is_test[rng.permutation(n_samples)[: int(round(test_fraction * n_samples))]] = True
    return ToyDataset(images, labels.astype(np.int64), is_test, seed)


def surrogate_grad(x, k: float = 25.0):
    if k <= 0:
        raise ValueError("slope must be positive")
    return 1.0 / (k * np.abs(x) + 1.0) ** 2


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss(output_membrane_trace, label: int) -> float:
    """Sum over timesteps of cross-entropy(softmax(membrane_t), label)."""
    m = np.atleast_2d(np.asarray(output_membrane_trace, dtype=np.float64))
    return float(-_log_softmax(m)[:, label].sum())


# -- forward / backward ---------------------------------------------------------


@dataclass
class _Tape:
    x: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    s1: np.ndarray
    h: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    open1: np.ndarray
    drop: np.ndarray | None
    loss: float
    spikes_out: np.ndarray


def _layer_params(cfg: NetworkConfig):
    return cfg.hidden, cfg.output


def forward_train(net: FloatNetwork, bits, labels, slope=25.0, spike_mode="hard",
                  dropout_masks=None, reset_masks=None) -> _Tape:
    """Training forward on ``bits`` (B, T, N); ``reset_masks`` may pin the (r1, r2) reset pattern."""
    cfg = net.config
    hp, op = _layer_params(cfg)
    x = np.asarray(bits, dtype=np.float64)
    B, T, _ = x.shape
    H, O = cfg.hidden_size, cfg.output_size
    W1, b1 = net.layers[0].weights, net.layers[0].bias
    W2, b2 = net.layers[1].weights, net.layers[1].bias
    c1 = np.empty((T, B, H)); c2 = np.empty((T, B, O))
    s1 = np.empty((T, B, H)); h = np.empty((T, B, H))
    r1 = np.empty((T, B, H)); r2 = np.empty((T, B, O))
    open1 = np.empty((T, B, H))
    spikes_out = np.zeros((B, O), dtype=np.int64)
    u1 = np.zeros((B, H)); u2 = np.zeros((B, O))
    ref1 = np.zeros((B, H), dtype=np.int64); ref2 = np.zeros((B, O), dtype=np.int64)
    total = 0.0
    for t in range(T):
        c1[t] = hp.beta * u1 + x[:, t] @ W1.T + b1 - hp.u_rest
        o1 = (ref1 == 0).astype(np.float64)
        hard1 = (c1[t] >= hp.threshold) * o1
        r1[t] = hard1 if reset_masks is None else reset_masks[0][t]
        s1[t] = hard1 if spike_mode == "hard" else (c1[t] - hp.threshold) / (1 + slope * np.abs(c1[t] - hp.threshold)) * o1
        open1[t] = o1
        u1 = c1[t] * (1 - r1[t]) if hp.reset_mode == RESET_ZERO else c1[t] - r1[t] * hp.threshold
        ref1 = np.where(ref1 > 0, ref1 - 1, np.where(r1[t] > 0, hp.refractory_steps, 0))
        h[t] = s1[t] if dropout_masks is None else s1[t] * dropout_masks[t]

        c2[t] = op.beta * u2 + h[t] @ W2.T + b2 - op.u_rest
        hard2 = (c2[t] >= op.threshold) * (ref2 == 0)
        r2[t] = hard2 if reset_masks is None else reset_masks[1][t]
        spikes_out += hard2.astype(np.int64)
        u2 = c2[t] * (1 - r2[t]) if op.reset_mode == RESET_ZERO else c2[t] - r2[t] * op.threshold
        ref2 = np.where(ref2 > 0, ref2 - 1, np.where(r2[t] > 0, op.refractory_steps, 0))
        total += -_log_softmax(c2[t])[np.arange(B), labels].sum()
    return _Tape(x, c1, c2, s1, h, r1, r2, open1, dropout_masks, float(total / B), spikes_out)


def backward(net: FloatNetwork, tape: _Tape, labels, slope=25.0):
    """Gradients of ``tape.loss`` w.r.t. (W1, b1, W2, b2)."""
    cfg = net.config
    hp, op = _layer_params(cfg)
    W2 = net.layers[1].weights
    T, B, H = tape.c1.shape
    O = tape.c2.shape[2]
    gW1 = np.zeros_like(net.layers[0].weights); gb1 = np.zeros(H)
    gW2 = np.zeros_like(W2); gb2 = np.zeros(O)
    gu1 = np.zeros((B, H)); gu2 = np.zeros((B, O))
    onehot = np.zeros((B, O)); onehot[np.arange(B), labels] = 1.0
    for t in range(T - 1, -1, -1):
        dce = (np.exp(_log_softmax(tape.c2[t])) - onehot) / B
        keep2 = (1 - tape.r2[t]) if op.reset_mode == RESET_ZERO else 1.0
        gc2 = dce + gu2 * keep2
        gu2 = gc2 * op.beta
        gW2 += gc2.T @ tape.h[t]
        gb2 += gc2.sum(axis=0)
        gs1 = gc2 @ W2
        if tape.drop is not None:
            gs1 = gs1 * tape.drop[t]
        keep1 = (1 - tape.r1[t]) if hp.reset_mode == RESET_ZERO else 1.0
        gc1 = gs1 * surrogate_grad(tape.c1[t] - hp.threshold, slope) * tape.open1[t] + gu1 * keep1
        gu1 = gc1 * hp.beta
        gW1 += gc1.T @ tape.x[:, t]
        gb1 += gc1.sum(axis=0)
    return [gW1, gb1, gW2, gb2]


def loss_and_grads(net: FloatNetwork, bits, labels, slope=25.0, spike_mode="hard",
                   dropout_masks=None, reset_masks=None):
    tape = forward_train(net, bits, labels, slope, spike_mode, dropout_masks, reset_masks)
    return tape.loss, backward(net, tape, labels, slope), tape


class Adam:
    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    network: FloatNetwork
    history: list = field(default_factory=list)  # dicts: epoch, loss, train_acc, test_acc


def toy_network_config(size: int = 8, hidden: int = 32, timesteps: int = 25, **kw) -> NetworkConfig:
    return NetworkConfig(input_size=size * size, hidden_size=hidden, output_size=2, timesteps=timesteps, **kw)


def evaluate(net: FloatNetwork, images, labels, seed: int) -> float:
    """Spike-count readout accuracy on a fixed encoding (one seed per sample index)."""
    flat = images.reshape(len(images), -1)
    seeds = [derive_seed(seed, _EVAL_STREAM, j) for j in range(len(flat))]
    counts, _ = run_float(net, rate_encode_batch(flat, net.config.timesteps, seeds))
    return float(np.mean(predict_from_counts(counts) == labels))


def train(net: FloatNetwork, data: ToyDataset, cfg: TrainConfig) -> TrainResult:
    if net.config.timesteps != cfg.timesteps:
        raise ValueError(f"network runs T={net.config.timesteps}, train config says {cfg.timesteps}")
    net = net.copy()
    params = [net.layers[0].weights, net.layers[0].bias, net.layers[1].weights, net.layers[1].bias]
    opt = Adam(params, cfg.learning_rate, cfg.betas, cfg.eps)
    X = data.train_images.reshape(len(data.train_labels), -1)
    y = data.train_labels
    p_drop = net.config.dropout_rate
    H = net.config.hidden_size
    result = TrainResult(net)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch, _SHUFFLE_STREAM])
        drop_rng = np.random.default_rng([cfg.seed, epoch, _DROPOUT_STREAM])
        # fresh Bernoulli draws each epoch, keyed by (seed, epoch, sample index)
        seeds = [derive_seed(cfg.seed, epoch, j) for j in range(len(X))]
        bits = rate_encode_batch(X, cfg.timesteps, seeds)
        order = rng.permutation(len(X))
        epoch_loss = 0.0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = None
            if p_drop > 0:
                masks = (drop_rng.random((cfg.timesteps, len(idx), H)) >= p_drop) / (1.0 - p_drop)
            # overflow surfaces as a non-finite loss, checked below
            with np.errstate(over="ignore", invalid="ignore"):
                batch_loss, grads, _ = loss_and_grads(net, bits[idx], y[idx], cfg.slope, dropout_masks=masks)
            if not np.isfinite(batch_loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(epoch, batch_loss)
            opt.step(grads)
            if cfg.clip_to_fixed:
                for p in params:
                    np.clip(p, Q1_15.min_value, Q1_15.max_value, out=p)
            epoch_loss += batch_loss * len(idx)
        row = {
            "epoch": epoch,
            "loss": float(epoch_loss / len(X)),
            "train_acc": evaluate(net, data.train_images, data.train_labels, cfg.seed),
            "test_acc": evaluate(net, data.test_images, data.test_labels, cfg.seed + 1),
        }
        result.history.append(row)
        log.debug("epoch %d loss %.4f train %.3f test %.3f", epoch, row["loss"], row["train_acc"], row["test_acc"])
    return result


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "train_acc", "test_acc"])
        w.writeheader()
        for row in history:
            w.writerow(row)


def train_config_dict(cfg: TrainConfig):
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d
