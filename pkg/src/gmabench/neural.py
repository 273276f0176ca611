"""From-scratch shallow temporal CNN for binary movement classification.

The network is one temporal convolution over the 250-frame axis (feature
columns as input channels, stride 1, same-length zero padding), then one or
two fully connected layers, each stage followed by batch normalization,
a rectifier and 10% dropout, ending in a single logistic unit. Forward,
backpropagation, Adam and early-stopped training are implemented directly
on numpy arrays; nothing is delegated to an autograd framework.

Eval-mode inference uses running batch-norm statistics and no dropout, so
it is deterministic. Training is deterministic given the config seed.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChecksumFailure,
    ShapeMismatch,
    SingleClassDataset,
    VersionMismatch,
)
from .features import FeatureMatrix

FM_PLUS = 1
FM_MINUS = 0

PROB_CLAMP = 1e-7
BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # retained fraction of the running statistics

WEIGHTS_MAGIC = b"GMNW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters; defaults follow the reference layout."""

    channels: int
    frames: int = 250
    filters: int = 64
    filter_len: int = 7
    fc_sizes: tuple[int, ...] = (200, 100)
    dropout: float = 0.1

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError("need at least one filter")
        if self.filter_len < 1 or self.filter_len % 2 == 0:
            raise ValueError("filter length must be odd")
        if self.frames < 1 or self.channels < 1:
            raise ValueError("input shape must be positive")
        if len(self.fc_sizes) not in (1, 2) or any(s < 1 for s in self.fc_sizes):
            raise ValueError("one or two fully connected layers with positive sizes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    val_fraction: float = 0.125
    patience: int = 10
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and epoch budget must be positive")


@dataclass
class LabeledSample:
    """One snippet's features with its movement class (1 = present)."""

    features: FeatureMatrix
    label: int

    def __post_init__(self):
        if self.label not in (FM_MINUS, FM_PLUS):
            raise ValueError("label must be 0 or 1")


def label_name(label: int) -> str:
    return "FM+" if label == FM_PLUS else "FM-"


def samples_to_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.features.values for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(p: np.ndarray | float, y: np.ndarray | float) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0/1."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _bn_forward(
    x, gamma, beta, running_mean, running_var, axes, train, update_stats,
    warm=False,
):
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            if warm:
                # First update adopts the batch statistics outright so
                # eval-mode inference is meaningful from the first epoch.
                running_mean[:] = mu
                running_var[:] = var
            else:
                running_mean *= BN_MOMENTUM
                running_mean += (1.0 - BN_MOMENTUM) * mu
                running_var *= BN_MOMENTUM
                running_var += (1.0 - BN_MOMENTUM) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + np.asarray(BN_EPS, dtype=x.dtype))
    xhat = (x - mu) * inv
    y = gamma * xhat + beta
    m = 1
    for a in axes:
        m *= x.shape[a]
    return y, (xhat, inv, gamma, axes, m)


def _bn_backward(dy, cache):
    xhat, inv, gamma, axes, m = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    s1 = dxhat.sum(axis=axes, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
    dx = (inv / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


class TemporalConvNet:
    """Parameter container plus forward/backward for the fixed layout."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        f, l, c = spec.filters, spec.filter_len, spec.channels
        p["conv_w"] = rng.normal(0.0, np.sqrt(2.0 / (l * c)), size=(f, l, c))
        p["conv_b"] = np.zeros(f)
        self._bn_init(p, "bn0", f)
        width_in = spec.frames * f
        for i, width in enumerate(spec.fc_sizes):
            p[f"fc{i}_w"] = rng.normal(0.0, np.sqrt(2.0 / width_in), size=(width_in, width))
            p[f"fc{i}_b"] = np.zeros(width)
            self._bn_init(p, f"bn{i + 1}", width)
            width_in = width
        p["out_w"] = rng.normal(0.0, np.sqrt(1.0 / width_in), size=(width_in, 1))
        p["out_b"] = np.zeros(1)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}
        self._stats_warmed = False

    @staticmethod
    def _bn_init(p: dict, prefix: str, width: int) -> None:
        p[f"{prefix}_gamma"] = np.ones(width)
        p[f"{prefix}_beta"] = np.zeros(width)
        p[f"{prefix}_mean"] = np.zeros(width)
        p[f"{prefix}_var"] = np.ones(width)

    # Running statistics are updated during training but never by Adam.
    def trainable_names(self) -> list[str]:
        return [k for k in self.params if not k.endswith(("_mean", "_var"))]

    def parameter_names(self) -> list[str]:
        return list(self.params)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = params[k].astype(self.dtype).copy()
        self._stats_warmed = True

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.spec.frames or x.shape[2] != self.spec.channels:
            raise ShapeMismatch(
                f"expected (n, {self.spec.frames}, {self.spec.channels}), got {x.shape}"
            )
        return x

    def make_dropout_masks(self, n: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Keep-masks drawn in forward order: conv stage first, then FC stages."""
        keep = np.float32(1.0 - self.spec.dropout)
        masks = [
            rng.random((n, self.spec.frames, self.spec.filters), dtype=np.float32) < keep
        ]
        for width in self.spec.fc_sizes:
            masks.append(rng.random((n, width), dtype=np.float32) < keep)
        return masks

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        masks: list[np.ndarray] | None = None,
        rng: np.random.Generator | None = None,
        update_stats: bool = False,
    ) -> np.ndarray:
        """Probabilities for a batch; train mode needs dropout masks or an rng."""
        p, _ = self._forward_full(x, train, masks, rng, update_stats)
        return p

    def _forward_full(self, x, train, masks, rng, update_stats):
        x = self._check_input(x)
        spec, p = self.spec, self.params
        n = x.shape[0]
        if train:
            if masks is None:
                if rng is None:
                    raise ValueError("train-mode forward needs dropout masks or an rng")
                masks = self.make_dropout_masks(n, rng)
        keep = np.asarray(1.0 - spec.dropout, dtype=self.dtype)

        pad = spec.filter_len // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        win = sliding_window_view(xp, spec.filter_len, axis=1)  # (n, T, C, L)
        win2 = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(
            n * spec.frames, spec.filter_len * spec.channels
        )
        wmat = p["conv_w"].reshape(spec.filters, -1)
        z = (win2 @ wmat.T + p["conv_b"]).reshape(n, spec.frames, spec.filters)

        warm = update_stats and not self._stats_warmed
        cache = {"win2": win2, "masks": masks, "n": n, "bn": [], "relu": [], "acts": []}
        z, bn_c = _bn_forward(
            z, p["bn0_gamma"], p["bn0_beta"], p["bn0_mean"], p["bn0_var"],
            axes=(0, 1), train=train, update_stats=update_stats, warm=warm,
        )
        cache["bn"].append(bn_c)
        cache["relu"].append(z > 0)
        h = np.maximum(z, 0)
        if train:
            h = h * masks[0] / keep
        a = h.reshape(n, spec.frames * spec.filters)

        for i, _ in enumerate(spec.fc_sizes):
            cache["acts"].append(a)
            z = a @ p[f"fc{i}_w"] + p[f"fc{i}_b"]
            z, bn_c = _bn_forward(
                z, p[f"bn{i + 1}_gamma"], p[f"bn{i + 1}_beta"],
                p[f"bn{i + 1}_mean"], p[f"bn{i + 1}_var"],
                axes=(0,), train=train, update_stats=update_stats, warm=warm,
            )
            cache["bn"].append(bn_c)
            cache["relu"].append(z > 0)
            a = np.maximum(z, 0)
            if train:
                a = a * masks[i + 1] / keep

        cache["acts"].append(a)
        z_out = a @ p["out_w"] + p["out_b"]
        prob = _sigmoid(z_out).ravel()
        if update_stats:
            self._stats_warmed = True
        return prob, cache

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, train=False)

    def gradients(
        self, x: np.ndarray, y: np.ndarray, masks: list[np.ndarray],
        update_stats: bool = False,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean-batch loss and exact gradients under fixed dropout masks."""
        prob, cache = self._forward_full(x, True, masks, None, update_stats)
        y = np.asarray(y, dtype=self.dtype)
        n = cache["n"]
        loss = bce_loss(prob, y)

        spec, p = self.spec, self.params
        keep = np.asarray(1.0 - spec.dropout, dtype=self.dtype)
        grads: dict[str, np.ndarray] = {}
        clipped = (prob <= PROB_CLAMP) | (prob >= 1.0 - PROB_CLAMP)
        dz = ((prob - y) / n).astype(self.dtype)
        dz[clipped] = 0.0
        dz = dz[:, None]

        a_last = cache["acts"][-1]
        grads["out_w"] = a_last.T @ dz
        grads["out_b"] = dz.sum(axis=0)
        da = dz @ p["out_w"].T

        for i in reversed(range(len(spec.fc_sizes))):
            da = da * masks[i + 1] / keep
            da = da * cache["relu"][i + 1]
            da, dgamma, dbeta = _bn_backward(da, cache["bn"][i + 1])
            grads[f"bn{i + 1}_gamma"] = dgamma
            grads[f"bn{i + 1}_beta"] = dbeta
            a_in = cache["acts"][i]
            grads[f"fc{i}_w"] = a_in.T @ da
            grads[f"fc{i}_b"] = da.sum(axis=0)
            da = da @ p[f"fc{i}_w"].T

        dh = da.reshape(n, spec.frames, spec.filters)
        dh = dh * masks[0] / keep
        dh = dh * cache["relu"][0]
        dh, dgamma, dbeta = _bn_backward(dh, cache["bn"][0])
        grads["bn0_gamma"] = dgamma
        grads["bn0_beta"] = dbeta
        dmat = dh.reshape(n * spec.frames, spec.filters)
        grads["conv_w"] = (dmat.T @ cache["win2"]).reshape(
            spec.filters, spec.filter_len, spec.channels
        )
        grads["conv_b"] = dmat.sum(axis=0)
        return loss, grads


class Adam:
    """Bias-corrected first/second moment optimizer over named tensors."""

    def __init__(self, net: TemporalConvNet, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(net.params[k]) for k in net.trainable_names()}
        self.v = {k: np.zeros_like(net.params[k]) for k in net.trainable_names()}

    def step(self, net: TemporalConvNet, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for k in self.m:
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            net.params[k] -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)).astype(
                net.dtype
            )


def adam_step(net: TemporalConvNet, optimizer: Adam, grads: dict[str, np.ndarray]) -> None:
    optimizer.step(net, grads)


def classify(net: TemporalConvNet, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Eval-mode class decisions; a probability exactly at the threshold is FM-."""
    prob = net.predict_proba(x)
    return (prob > threshold).astype(np.int64)


def accuracy(net: TemporalConvNet, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(classify(net, x) == np.asarray(y)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("-inf")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_acc"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_acc!r}")
        return "\n".join(lines) + "\n"


def train(
    x: np.ndarray,
    y: np.ndarray,
    spec: NetworkSpec,
    config: TrainConfig,
    epoch_hook: Callable[[EpochRecord, "TemporalConvNet"], None] | None = None,
) -> tuple[TemporalConvNet, TrainHistory]:
    """Early-stopped Adam training with a held-out validation split.

    One eighth of the data (seeded shuffle) is held out; training stops when
    validation accuracy has not improved for ``patience`` consecutive epochs
    or at the epoch budget, and the best-validation weights are restored.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"inputs {x.shape} do not match {y.shape} labels")
    if np.unique(y).size < 2:
        raise SingleClassDataset("training data must contain both classes")

    root = np.random.SeedSequence(config.seed)
    init_ss, split_ss, batch_ss, dropout_ss = root.spawn(4)
    net = TemporalConvNet(spec, seed=init_ss)
    split_rng = np.random.default_rng(split_ss)
    batch_rng = np.random.default_rng(batch_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    n = x.shape[0]
    perm = split_rng.permutation(n)
    n_val = max(1, int(round(n * config.val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_val, y_val = x[val_idx], y[val_idx]
    x_tr, y_tr = x[train_idx], y[train_idx]

    optimizer = Adam(net, config)
    history = TrainHistory()
    best_params = net.copy_params()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = batch_rng.permutation(len(train_idx))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            masks = net.make_dropout_masks(len(batch), dropout_rng)
            loss, grads = net.gradients(
                x_tr[batch], y_tr[batch], masks, update_stats=True
            )
            optimizer.step(net, grads)
            losses.append(loss)
        val_acc = accuracy(net, x_val, y_val)
        record = EpochRecord(epoch, float(np.mean(losses)), val_acc)
        history.records.append(record)
        if epoch_hook is not None:
            epoch_hook(record, net)
        if val_acc > history.best_val_acc:
            history.best_val_acc = val_acc
            history.best_epoch = epoch
            best_params = net.copy_params()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.load_params(best_params)
    return net, history


def train_samples(
    samples: Sequence[LabeledSample], spec: NetworkSpec, config: TrainConfig
) -> tuple[TemporalConvNet, TrainHistory]:
    x, y = samples_to_arrays(samples)
    return train(x, y, spec, config)


# --- weight serialization -------------------------------------------------

def _spec_to_bytes(spec: NetworkSpec) -> bytes:
    blob = struct.pack(
        "<HHHHB", spec.frames, spec.channels, spec.filters, spec.filter_len,
        len(spec.fc_sizes),
    )
    for s in spec.fc_sizes:
        blob += struct.pack("<H", s)
    blob += struct.pack("<f", spec.dropout)
    return blob


def _spec_from_buffer(buf: bytes, offset: int) -> tuple[NetworkSpec, int]:
    frames, channels, filters, filter_len, n_fc = struct.unpack_from("<HHHHB", buf, offset)
    offset += struct.calcsize("<HHHHB")
    sizes = []
    for _ in range(n_fc):
        (s,) = struct.unpack_from("<H", buf, offset)
        sizes.append(s)
        offset += 2
    (dropout,) = struct.unpack_from("<f", buf, offset)
    offset += 4
    spec = NetworkSpec(
        channels=channels, frames=frames, filters=filters, filter_len=filter_len,
        fc_sizes=tuple(sizes), dropout=round(float(dropout), 6),
    )
    return spec, offset


def save_weights(net: TemporalConvNet) -> bytes:
    """Versioned, checksummed little-endian float32 weight blob."""
    body = WEIGHTS_MAGIC + struct.pack("<H", WEIGHTS_VERSION) + _spec_to_bytes(net.spec)
    for name in net.parameter_names():
        body += net.params[name].astype("<f4").tobytes(order="C")
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def load_weights(blob: bytes) -> TemporalConvNet:
    if len(blob) < 10 or blob[:4] != WEIGHTS_MAGIC:
        raise VersionMismatch("not a weight blob")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != WEIGHTS_VERSION:
        raise VersionMismatch(f"unsupported weight format version {version}")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumFailure("weight blob failed its integrity check")
    spec, offset = _spec_from_buffer(blob, 6)
    net = TemporalConvNet(spec, seed=0)
    for name in net.parameter_names():
        shape = net.params[name].shape
        count = int(np.prod(shape))
        tensor = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        net.params[name] = tensor.reshape(shape).astype(np.float32).copy()
    if offset != len(blob) - 4:
        raise ChecksumFailure("weight blob has trailing bytes")
    return net
