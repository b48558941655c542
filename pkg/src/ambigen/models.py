"""Network roles: classifier, autoencoder parts, discriminator.

Reference shapes (stated once so every experiment is reproducible):
classifier 784-256-128-C dense with dropout after each hidden layer;
autoencoder 784-256-64-d with a mirrored decoder and sigmoid output head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from . import numerics as nx
from .numerics import DenseLayer, Tensor

CHECKPOINT_MAGIC = b"AMBG"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int = 784
    hidden: tuple[int, ...] = (256, 128)
    class_count: int = 10
    dropout_rate: float = 0.5
    hidden_activation: str = "relu"

    def validate(self):
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        if not self.hidden:
            raise ConfigError("classifier needs at least one dropout-capable hidden layer")
        if any(w <= 0 for w in self.hidden) or self.input_dim <= 0:
            raise ConfigError("layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class AutoencoderConfig:
    input_dim: int = 784
    encoder_hidden: tuple[int, ...] = (256, 64)
    latent_dim: int = 2
    hidden_activation: str = "relu"

    def validate(self):
        if self.latent_dim <= 0 or self.input_dim <= 0 or any(w <= 0 for w in self.encoder_hidden):
            raise ConfigError("layer widths must be positive")


@dataclass(frozen=True)
class DiscriminatorConfig:
    latent_dim: int = 2
    condition_count: int = 2
    hidden: tuple[int, ...] = (64, 64)
    hidden_activation: str = "relu"

    def validate(self):
        if self.latent_dim <= 0 or self.condition_count < 2 or any(w <= 0 for w in self.hidden):
            raise ConfigError("layer widths must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    validation_fraction: float = 0.1
    min_lr: float = 1e-7


@dataclass
class ClassifierModel:
    """Dense softmax classifier; dropout is used in training and MC inference only."""

    layers: list[DenseLayer]
    dropout_rate: float
    class_count: int

    def logits(self, images: Tensor) -> Tensor:
        return nx.forward_stack(self.layers, flatten_images(images))

    def predict(self, images: Tensor) -> Tensor:
        """Softmax rows with dropout disabled; pure function of (parameters, input)."""
        return nx.softmax(self.logits(images))

    def trace(self, images: Tensor) -> "BatchTrace":
        """Per-layer post-activations plus the final softmax rows."""
        x = flatten_images(images)
        activations = []
        for layer in self.layers[:-1]:
            x = nx.dense_forward(layer, x)
            activations.append(x)
        logits = nx.dense_forward(self.layers[-1], x)
        rows = nx.softmax(logits)
        return BatchTrace(activations, rows, rows.argmax(axis=1))

    @property
    def hidden_count(self) -> int:
        return len(self.layers) - 1


@dataclass
class BatchTrace:
    """Activation traces for a batch: one entry per hidden layer."""

    layer_activations: list[Tensor]
    softmax_rows: Tensor
    predicted: Tensor


@dataclass
class AutoencoderModel:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    latent_dim: int

    def encode(self, images: Tensor) -> Tensor:
        return nx.forward_stack(self.encoder, flatten_images(images))

    def decode(self, zs: Tensor) -> Tensor:
        return nx.forward_stack(self.decoder, np.atleast_2d(np.asarray(zs, dtype=np.float64)))

    def reconstruct(self, images: Tensor) -> Tensor:
        return self.decode(self.encode(images))


@dataclass
class DropoutSampleSet:
    """T stochastic softmax rows for one input."""

    rows: Tensor           # [T x C]
    argmax_classes: Tensor  # [T], ties broken toward the lowest class index

    @property
    def sample_count(self) -> int:
        return self.rows.shape[0]


def flatten_images(images: Tensor) -> Tensor:
    """[N x H x W] or [N x D] (or a single image) to [N x D] float64."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 1:
        return x.reshape(1, -1)
    if x.ndim == 2 and x.shape == (28, 28):
        return x.reshape(1, -1)
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1)
    if x.ndim == 2:
        return x
    raise DimensionError(f"cannot interpret image array of shape {x.shape}")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_classifier(config: ClassifierConfig, rng: np.random.Generator) -> ClassifierModel:
    config.validate()
    layers = []
    widths = (config.input_dim, *config.hidden)
    for i in range(len(config.hidden)):
        layers.append(nx.init_dense(rng, widths[i], widths[i + 1], config.hidden_activation))
    layers.append(nx.init_dense(rng, widths[-1], config.class_count, "identity"))
    return ClassifierModel(layers, config.dropout_rate, config.class_count)


def build_autoencoder(config: AutoencoderConfig, rng: np.random.Generator) -> AutoencoderModel:
    config.validate()
    enc_widths = (config.input_dim, *config.encoder_hidden, config.latent_dim)
    encoder = [
        nx.init_dense(rng, enc_widths[i], enc_widths[i + 1],
                      config.hidden_activation if i + 2 < len(enc_widths) else "identity")
        for i in range(len(enc_widths) - 1)
    ]
    dec_widths = tuple(reversed(enc_widths))
    decoder = [
        nx.init_dense(rng, dec_widths[i], dec_widths[i + 1],
                      config.hidden_activation if i + 2 < len(dec_widths) else "sigmoid")
        for i in range(len(dec_widths) - 1)
    ]
    return AutoencoderModel(encoder, decoder, config.latent_dim)


def build_discriminator(config: DiscriminatorConfig, rng: np.random.Generator) -> list[DenseLayer]:
    """Conditional score network: (z, one-hot class condition) -> one logit."""
    config.validate()
    widths = (config.latent_dim + config.condition_count, *config.hidden, 1)
    return [
        nx.init_dense(rng, widths[i], widths[i + 1],
                      config.hidden_activation if i + 2 < len(widths) else "identity")
        for i in range(len(widths) - 1)
    ]


# ---------------------------------------------------------------------------
# Stochastic inference
# ---------------------------------------------------------------------------

def _dropout_masks(rng: np.random.Generator, model: ClassifierModel, batch: int) -> list:
    rate = model.dropout_rate
    masks = []
    for layer in model.layers[:-1]:
        if rate == 0.0:
            masks.append(np.ones((batch, layer.out_size)))
        else:
            keep = rng.random((batch, layer.out_size)) >= rate
            masks.append(keep.astype(np.float64) / (1.0 - rate))
    masks.append(None)  # no dropout on the logit head
    return masks


def _forward_with_masks(model: ClassifierModel, x: Tensor, masks: list) -> Tensor:
    for layer, mask in zip(model.layers, masks):
        x = nx.dense_forward(layer, x)
        if mask is not None:
            x = x * mask
    return nx.softmax(x)


def mc_dropout_rows(model: ClassifierModel, images: Tensor, t: int, seed: int) -> Tensor:
    """[N x T x C] softmax rows from T dropout-active passes; reproducible by seed."""
    if t < 2:
        raise ConfigError("mc_dropout needs T >= 2 samples")
    if model.hidden_count < 1:
        raise ConfigError("model has no dropout-capable hidden layer")
    x = flatten_images(images)
    rng = nx.seeded_rng(seed)
    out = np.empty((x.shape[0], t, model.class_count))
    for k in range(t):
        masks = _dropout_masks(rng, model, x.shape[0])
        out[:, k, :] = _forward_with_masks(model, x, masks)
    return out


def mc_dropout_predict(model: ClassifierModel, image: Tensor, t: int, seed: int) -> DropoutSampleSet:
    rows = mc_dropout_rows(model, image, t, seed)[0]
    return DropoutSampleSet(rows, rows.argmax(axis=1))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ClassifierModel
    train_losses: list[float] = field(default_factory=list)
    validation_accuracy: float | None = None
    final_lr: float = 0.0


def soft_ce(pred_logits: Tensor, target_rows: Tensor) -> float:
    logp = nx.log_softmax(pred_logits)
    return float(-np.sum(target_rows * logp) / pred_logits.shape[0])


def _dataset_loss(model: ClassifierModel, images: Tensor, labels: Tensor, batch: int = 1024) -> float:
    total = 0.0
    n = images.shape[0]
    for lo in range(0, n, batch):
        xb = images[lo:lo + batch]
        yb = labels[lo:lo + batch]
        total += soft_ce(model.logits(xb), yb) * xb.shape[0]
    return total / n


def train_classifier(images: Tensor, label_rows: Tensor,
                     config: ClassifierConfig = ClassifierConfig(),
                     train: TrainConfig = TrainConfig(),
                     seed: int = 0) -> TrainResult:
    """Mini-batch Adam on soft-target cross-entropy.

    The epoch-end loss on the full training set is kept monotone: an epoch
    that raises it is rolled back and retried at half the learning rate,
    until the rate underflows ``min_lr``.
    """
    x = flatten_images(images)
    y = np.asarray(label_rows, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise DimensionError("image/label count mismatch")
    if y.ndim != 2 or y.shape[1] != config.class_count:
        raise DimensionError(f"label rows must be [N x {config.class_count}]")

    rng_init = nx.seeded_rng(seed, 0)
    rng_shuffle = nx.seeded_rng(seed, 1)
    rng_dropout = nx.seeded_rng(seed, 2)
    rng_split = nx.seeded_rng(seed, 3)

    model = build_classifier(config, rng_init)

    if train.validation_fraction > 0 and x.shape[0] >= 10:
        n_val = max(1, int(round(train.validation_fraction * x.shape[0])))
        perm = rng_split.permutation(x.shape[0])
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
        x_val, y_val = x[val_idx], y[val_idx]
        x_tr, y_tr = x[tr_idx], y[tr_idx]
    else:
        x_val = y_val = None
        x_tr, y_tr = x, y

    params = nx.layer_params(model.layers)
    adam = nx.AdamState(lr=train.lr)
    adam.m = [np.zeros_like(p) for p in params]
    adam.v = [np.zeros_like(p) for p in params]
    n = x_tr.shape[0]
    losses = [_dataset_loss(model, x_tr, y_tr)]

    epoch = 0
    while epoch < train.epochs:
        snapshot = ([p.copy() for p in params], [m.copy() for m in adam.m],
                    [v.copy() for v in adam.v], adam.step)
        perm = rng_shuffle.permutation(n)
        for lo in range(0, n, train.batch_size):
            idx = perm[lo:lo + train.batch_size]
            masks = _dropout_masks(rng_dropout, model, len(idx)) if config.dropout_rate > 0 else None
            _, grads = nx.loss_and_gradients(model.layers, x_tr[idx], y_tr[idx],
                                             "soft-cross-entropy", masks)
            nx.adam_update(adam, params, nx.flatten_grads(grads))
        loss = _dataset_loss(model, x_tr, y_tr)
        if loss > losses[-1] * (1.0 + 1e-12):
            for p, s in zip(params, snapshot[0]):
                p[...] = s
            for m, s in zip(adam.m, snapshot[1]):
                m[...] = s
            for v, s in zip(adam.v, snapshot[2]):
                v[...] = s
            adam.step = snapshot[3]
            adam.lr *= 0.5
            if adam.lr < train.min_lr:
                break
            continue  # retry the epoch at the reduced rate
        losses.append(loss)
        epoch += 1

    val_acc = None
    if x_val is not None:
        val_acc = float(np.mean(model.predict(x_val).argmax(axis=1) == y_val.argmax(axis=1)))
    return TrainResult(model, losses, val_acc, adam.lr)


def train_autoencoder(images: Tensor, config: AutoencoderConfig = AutoencoderConfig(),
                      train: TrainConfig = TrainConfig(), seed: int = 0) -> AutoencoderModel:
    """Plain reconstruction-loss training (mean squared error, Adam)."""
    x = flatten_images(images)
    rng_init = nx.seeded_rng(seed, 0)
    rng_shuffle = nx.seeded_rng(seed, 1)
    ae = build_autoencoder(config, rng_init)
    layers = ae.encoder + ae.decoder
    params = nx.layer_params(layers)
    adam = nx.AdamState(lr=train.lr)
    n = x.shape[0]
    for _ in range(train.epochs):
        perm = rng_shuffle.permutation(n)
        for lo in range(0, n, train.batch_size):
            xb = x[perm[lo:lo + train.batch_size]]
            _, grads = nx.loss_and_gradients(layers, xb, xb, "mse")
            nx.adam_update(adam, params, nx.flatten_grads(grads))
    return ae


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

_ACT_CODES = {name: i for i, name in enumerate(nx.ACTIVATIONS)}


def save_layer_container(path, layers: list[DenseLayer]) -> None:
    """Binary container: magic, version, layer table, little-endian f64 blobs."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(layers)))
        for layer in layers:
            f.write(struct.pack("<IIB", layer.out_size, layer.in_size,
                                _ACT_CODES[layer.activation]))
            f.write(layer.weights.astype("<f8").tobytes())
            f.write(layer.bias.astype("<f8").tobytes())


def load_layer_container(path) -> list[DenseLayer]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", offset=0)
    try:
        version, count = struct.unpack_from("<II", data, 4)
    except struct.error:
        raise FormatError("truncated checkpoint header", offset=4) from None
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    off = 12
    layers = []
    for _ in range(count):
        try:
            out_size, in_size, act = struct.unpack_from("<IIB", data, off)
        except struct.error:
            raise FormatError("truncated layer table", offset=off) from None
        off += 9
        if act >= len(nx.ACTIVATIONS):
            raise FormatError(f"unknown activation code {act}", offset=off - 1)
        nbytes = 8 * (out_size * in_size + out_size)
        if off + nbytes > len(data):
            raise FormatError("truncated parameter blob", offset=off)
        w = np.frombuffer(data, dtype="<f8", count=out_size * in_size, offset=off)
        off += 8 * out_size * in_size
        b = np.frombuffer(data, dtype="<f8", count=out_size, offset=off)
        off += 8 * out_size
        layers.append(DenseLayer(w.reshape(out_size, in_size).copy(), b.copy(),
                                 nx.ACTIVATIONS[act]))
    return layers


def _write_sidecar(path, meta: dict) -> None:
    with open(str(path) + ".json", "w") as f:
        json.dump({"sidecar_version": 1, **meta}, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_sidecar(path) -> dict:
    with open(str(path) + ".json") as f:
        return json.load(f)


def save_classifier(path, model: ClassifierModel) -> None:
    save_layer_container(path, model.layers)
    _write_sidecar(path, {"kind": "classifier", "dropout_rate": model.dropout_rate,
                          "class_count": model.class_count})


def load_classifier(path) -> ClassifierModel:
    meta = _read_sidecar(path)
    if meta.get("kind") != "classifier":
        raise FormatError(f"sidecar kind {meta.get('kind')!r} is not a classifier")
    layers = load_layer_container(path)
    return ClassifierModel(layers, float(meta["dropout_rate"]), int(meta["class_count"]))


def save_autoencoder(path, ae: AutoencoderModel) -> None:
    save_layer_container(path, ae.encoder + ae.decoder)
    _write_sidecar(path, {"kind": "autoencoder", "latent_dim": ae.latent_dim,
                          "encoder_layers": len(ae.encoder)})


def load_autoencoder(path) -> AutoencoderModel:
    meta = _read_sidecar(path)
    if meta.get("kind") != "autoencoder":
        raise FormatError(f"sidecar kind {meta.get('kind')!r} is not an autoencoder")
    layers = load_layer_container(path)
    split = int(meta["encoder_layers"])
    return AutoencoderModel(layers[:split], layers[split:], int(meta["latent_dim"]))
