"""Dataset I/O and the four high-uncertainty test-set families.

Files use the IDX container: big-endian magic 0x0000<type><rank>, big-endian
u32 dimensions, raw payload.  Unsigned-byte rank-3 images (0x00000803) and
rank-1 labels (0x00000801) follow the public MNIST convention; probabilistic
labels use the IDX float32 type code 0x0D with rank 2 (0x00000D02), stored
big-endian.  Images map to [0, 1] by /255 on load and x255-round on save.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError, FormatError
from . import models
from . import numerics as nx
from .numerics import Tensor

SOURCE_TAGS = ("nominal", "ambiguous", "corrupted", "adversarial", "invalid")

_MAGIC_IMAGES = 0x00000803
_MAGIC_LABELS = 0x00000801
_MAGIC_PROBS = 0x00000D02

_MAX_DIM = 1 << 31
_MAX_ELEMENTS = 1 << 33


@dataclass
class ImageSet:
    images: Tensor  # [N x 28 x 28], values in [0, 1]
    source: str = "nominal"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.source not in SOURCE_TAGS:
            raise ConfigError(f"unknown source tag {self.source!r}")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ConfigError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class LabelSet:
    rows: Tensor  # [N x C], rows sum to 1
    pairs: list[tuple[int, int]] | None = None  # per-row true pair for ambiguous data

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DimensionError("label rows must be 2-D")
        if self.rows.size:
            if self.rows.min() < 0:
                raise ConfigError("label probabilities must be nonnegative")
            if np.max(np.abs(self.rows.sum(axis=1) - 1.0)) > 1e-9:
                raise ConfigError("label rows must sum to 1")
        if self.pairs is not None:
            if len(self.pairs) != len(self.rows):
                raise DimensionError("pair annotation count mismatch")
            for i, (c1, c2) in enumerate(self.pairs):
                nonzero = np.flatnonzero(self.rows[i])
                if sorted((c1, c2)) != sorted(nonzero.tolist()):
                    raise ConfigError(f"row {i}: nonzero classes do not match annotated pair")

    def __len__(self) -> int:
        return self.rows.shape[0]

    def hard(self) -> Tensor:
        """Argmax class per row; ties resolve to the lower index."""
        return self.rows.argmax(axis=1)


@dataclass
class ProbabilisticDataset:
    images: ImageSet
    labels: LabelSet
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DimensionError("image count != label count")

    def __len__(self) -> int:
        return len(self.images)


# ---------------------------------------------------------------------------
# IDX container
# ---------------------------------------------------------------------------

def load_idx(path) -> Tensor:
    """Read an IDX file; images as float64 in [0, 1], labels as int64, probs float32."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise FormatError("file too short for an IDX magic", offset=0)
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic == _MAGIC_IMAGES:
        rank, dtype, width = 3, np.dtype(">u1"), 1
    elif magic == _MAGIC_LABELS:
        rank, dtype, width = 1, np.dtype(">u1"), 1
    elif magic == _MAGIC_PROBS:
        rank, dtype, width = 2, np.dtype(">f4"), 4
    else:
        raise FormatError(f"unsupported IDX magic 0x{magic:08X}", offset=0)
    header = 4 + 4 * rank
    if len(data) < header:
        raise FormatError("truncated IDX dimension header", offset=len(data))
    dims = struct.unpack_from(f">{rank}I", data, 4)
    if any(d >= _MAX_DIM for d in dims) or int(np.prod(dims, dtype=np.float64)) > _MAX_ELEMENTS:
        raise FormatError(f"dimension overflow {dims}", offset=4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) != header + count * width:
        raise FormatError(
            f"payload size {len(data) - header} != expected {count * width}", offset=header)
    values = np.frombuffer(data, dtype=dtype, count=count, offset=header).reshape(dims)
    if magic == _MAGIC_IMAGES:
        return values.astype(np.float64) / 255.0
    if magic == _MAGIC_LABELS:
        return values.astype(np.int64)
    return values.astype("<f4")


def save_idx(tensor: Tensor, path) -> None:
    """Write a tensor as IDX; the container type follows rank and dtype.

    Rank-3 float arrays in [0, 1] become unsigned-byte images, rank-1 integer
    arrays become unsigned-byte labels, rank-2 float arrays become float32
    probability rows (lossless for float32 input).
    """
    arr = np.asarray(tensor)
    if arr.ndim == 3:
        if arr.dtype.kind == "f":
            if arr.size and (arr.min() < 0 or arr.max() > 1):
                raise ConfigError("image values must lie in [0, 1]")
            payload = np.round(arr * 255.0).astype(">u1")
        else:
            payload = arr.astype(">u1")
        magic = _MAGIC_IMAGES
    elif arr.ndim == 1 and arr.dtype.kind in "iu":
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ConfigError("hard labels must fit an unsigned byte")
        payload = arr.astype(">u1")
        magic = _MAGIC_LABELS
    elif arr.ndim == 2 and arr.dtype.kind == "f":
        payload = arr.astype(">f4")
        magic = _MAGIC_PROBS
    else:
        raise ConfigError(f"no IDX encoding for rank {arr.ndim} dtype {arr.dtype}")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(payload.tobytes())


# ---------------------------------------------------------------------------
# Invalid inputs (foreign datasets)
# ---------------------------------------------------------------------------

def make_invalid_set(foreign_images: Tensor, expected_shape: tuple[int, int] = (28, 28)) -> ImageSet:
    """Tag foreign-dataset images as invalid inputs; pixels pass through unchanged."""
    arr = np.asarray(foreign_images, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != expected_shape:
        raise DimensionError(f"foreign images must be [N x {expected_shape[0]} x {expected_shape[1]}]")
    return ImageSet(arr, source="invalid")


# ---------------------------------------------------------------------------
# Corruptions (label-preserving by construction)
# ---------------------------------------------------------------------------

CORRUPTION_KINDS = ("gaussian-noise", "rotation", "box-blur", "brightness")

# severity 1..5 maps
NOISE_SIGMA = (0.1, 0.2, 0.3, 0.4, 0.5)
ROTATION_DEGREES = (5.0, 10.0, 15.0, 20.0, 25.0)
BLUR_KERNEL = (3, 3, 5, 5, 7)
BRIGHTNESS_DELTA = (0.1, 0.2, 0.3, 0.4, 0.5)


def rotate_images(images: Tensor, degrees: float) -> Tensor:
    """Rotation around the image center with nearest-neighbor resampling."""
    arr = np.asarray(images, dtype=np.float64)
    h, w = arr.shape[-2:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    src_y = np.rint(cos * yy - sin * xx + cy).astype(np.int64)
    src_x = np.rint(sin * yy + cos * xx + cx).astype(np.int64)
    inside = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    src_y = np.clip(src_y, 0, h - 1)
    src_x = np.clip(src_x, 0, w - 1)
    out = arr[..., src_y, src_x]
    out[..., ~inside] = 0.0
    return out


def corrupt(images: Tensor, kind: str, severity: int, seed: int = 0) -> ImageSet:
    """Apply one corruption at severity 1..5; deterministic given seed."""
    if kind not in CORRUPTION_KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}")
    if not 1 <= severity <= 5:
        raise ConfigError(f"severity must be in 1..5, got {severity}")
    arr = np.asarray(images, dtype=np.float64)
    level = severity - 1
    if kind == "gaussian-noise":
        rng = nx.seeded_rng(seed)
        out = arr + NOISE_SIGMA[level] * rng.standard_normal(arr.shape)
    elif kind == "rotation":
        out = rotate_images(arr, ROTATION_DEGREES[level])
    elif kind == "box-blur":
        k = BLUR_KERNEL[level]
        out = ndimage.uniform_filter(arr, size=(1, k, k), mode="nearest")
    else:  # brightness
        out = arr + BRIGHTNESS_DELTA[level]
    return ImageSet(np.clip(out, 0.0, 1.0), source="corrupted")


# ---------------------------------------------------------------------------
# Adversarial attacks
# ---------------------------------------------------------------------------

@dataclass
class AttackResult:
    images: ImageSet
    success: Tensor      # per-sample: attacked prediction differs from the label
    success_rate: float


def _input_gradients(model: models.ClassifierModel, x: Tensor, hard_labels: Tensor,
                     batch: int = 256) -> Tensor:
    onehot = np.eye(model.class_count)[hard_labels]
    grads = np.empty_like(x)
    for lo in range(0, x.shape[0], batch):
        _, _, gin = nx.loss_and_gradients(
            model.layers, x[lo:lo + batch], onehot[lo:lo + batch],
            "soft-cross-entropy", with_input_gradient=True)
        grads[lo:lo + batch] = gin
    return grads


def _attack_result(model: models.ClassifierModel, flat: Tensor, hard_labels: Tensor,
                   shape: tuple) -> AttackResult:
    predicted = model.predict(flat).argmax(axis=1)
    success = predicted != hard_labels
    return AttackResult(ImageSet(flat.reshape(shape), source="adversarial"),
                        success, float(np.mean(success)) if len(success) else 0.0)


def fgsm_attack(model: models.ClassifierModel, images: Tensor, hard_labels: Tensor,
                eps: float) -> AttackResult:
    """x' = clip(x + eps * sign(d loss / d x), 0, 1). Failed attacks are kept."""
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    arr = np.asarray(images, dtype=np.float64)
    hard_labels = np.asarray(hard_labels, dtype=np.int64)
    x = models.flatten_images(arr)
    adv = np.clip(x + eps * np.sign(_input_gradients(model, x, hard_labels)), 0.0, 1.0)
    return _attack_result(model, adv, hard_labels, arr.shape)


def pgd_attack(model: models.ClassifierModel, images: Tensor, hard_labels: Tensor,
               eps: float, step: float, iters: int) -> AttackResult:
    """Iterated gradient-sign steps projected onto the eps-ball around x."""
    if eps < 0 or step <= 0 or iters < 1:
        raise ConfigError("pgd needs eps >= 0, step > 0, iters >= 1")
    arr = np.asarray(images, dtype=np.float64)
    hard_labels = np.asarray(hard_labels, dtype=np.int64)
    x0 = models.flatten_images(arr)
    x = x0.copy()
    for _ in range(iters):
        g = _input_gradients(model, x, hard_labels)
        x = x + step * np.sign(g)
        x = np.clip(x, x0 - eps, x0 + eps)
        x = np.clip(x, 0.0, 1.0)
    return _attack_result(model, x, hard_labels, arr.shape)


# ---------------------------------------------------------------------------
# Mixed-ambiguous training assembly
# ---------------------------------------------------------------------------

def assemble_mixed_training(nominal_images: Tensor, nominal_hard_labels: Tensor,
                            ambiguous: ProbabilisticDataset, class_count: int,
                            seed: int = 0) -> ProbabilisticDataset:
    """Concatenate nominal (one-hot) and ambiguous rows, then shuffle by seed."""
    nom = np.asarray(nominal_images, dtype=np.float64)
    hard = np.asarray(nominal_hard_labels, dtype=np.int64)
    if len(nom) != len(hard):
        raise DimensionError("nominal image/label count mismatch")
    if hard.size and (hard.min() < 0 or hard.max() >= class_count):
        raise ConfigError("nominal label outside class range")
    amb_rows = ambiguous.labels.rows
    if len(ambiguous) and amb_rows.shape[1] != class_count:
        raise ConfigError(
            f"ambiguous label width {amb_rows.shape[1]} != class count {class_count}")
    one_hot = np.eye(class_count)[hard]
    images = np.concatenate([nom, ambiguous.images.images]) if len(ambiguous) else nom.copy()
    rows = np.concatenate([one_hot, amb_rows]) if len(ambiguous) else one_hot
    perm = nx.seeded_rng(seed).permutation(len(images))
    provenance = {
        "nominal_count": int(len(nom)),
        "ambiguous_count": int(len(ambiguous)),
        "shuffle_seed": int(seed),
        "ambiguous_provenance": ambiguous.provenance,
    }
    return ProbabilisticDataset(ImageSet(images[perm], source="nominal"),
                                LabelSet(rows[perm]), provenance)
