"""Procedural desk-scale domains and base-domain pretraining.

Three domains share one renderer: ``base`` (textured, noisy, blurred --
the stand-in for the pretraining distribution), ``real_target`` (same
family as base up to a documented jitter of the render parameters), and
``synthetic_source`` (zero texture, zero noise, flat background -- clean
renders). Every sample is a pure function of (spec, seed, index), so
parallel generation by index range matches sequential output exactly.

The render pipeline: place one of four shapes (disk, square, triangle,
cross) at a random position/scale within margins, add sinusoidal texture,
Gaussian noise, box blur, contrast jitter, clamp to [0, 1]. The geometry
mask before the appearance stages is the dense-task label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import TrainingError, ValidationError
from .losses import xe_loss
from .nets import CoordinateMap, DualHeadModel, build_optimizee
from .optim import MomentumSGD
from .tensor import Tensor, backward, no_grad

F32 = np.float32

DOMAIN_KINDS = ("base", "synthetic_source", "real_target")
SHAPES = ("disk", "square", "triangle", "cross")

DATASET_MAGIC = b"ASGD"
DATASET_VERSION = 1
LABEL_CLASS = 0
LABEL_MASK = 1

PRETRAIN_ACC_THRESHOLD = 0.90


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    seed: int
    image_size: int = 16
    num_classes: int = 4
    texture_amp: float = 0.0
    noise_sigma: float = 0.0
    blur_ksize: int = 0
    contrast_lo: float = 1.0
    contrast_hi: float = 1.0
    bg_lo: float = 0.2
    bg_hi: float = 0.2
    fg_lo: float = 0.7
    fg_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValidationError(f"unknown domain kind {self.kind!r}; "
                                  f"expected one of {DOMAIN_KINDS}")
        if self.image_size < 8:
            raise ValidationError(f"image_size too small: {self.image_size}")
        if self.num_classes != len(SHAPES):
            raise ValidationError(f"num_classes must be {len(SHAPES)}")
        if self.blur_ksize not in (0, 3):
            raise ValidationError(f"blur_ksize must be 0 or 3, got {self.blur_ksize}")


# Base and real_target share the same parameter family; real_target jitters
# texture +0.05, noise +0.02, contrast range shifted down by 0.05, background
# range shifted up by 0.02. synthetic_source is the clean outlier.
_DOMAIN_DEFAULTS = {
    "base": dict(texture_amp=0.22, noise_sigma=0.10, blur_ksize=3,
                 contrast_lo=0.75, contrast_hi=1.25,
                 bg_lo=0.10, bg_hi=0.40, fg_lo=0.60, fg_hi=0.95),
    "real_target": dict(texture_amp=0.27, noise_sigma=0.12, blur_ksize=3,
                        contrast_lo=0.70, contrast_hi=1.20,
                        bg_lo=0.12, bg_hi=0.42, fg_lo=0.60, fg_hi=0.95),
    "synthetic_source": dict(texture_amp=0.0, noise_sigma=0.0, blur_ksize=0,
                             contrast_lo=1.0, contrast_hi=1.0,
                             bg_lo=0.2, bg_hi=0.2, fg_lo=0.70, fg_hi=1.0),
}


def domain_spec(kind: str, seed: int, **overrides) -> DomainSpec:
    if kind not in _DOMAIN_DEFAULTS:
        raise ValidationError(f"unknown domain kind {kind!r}")
    params = dict(_DOMAIN_DEFAULTS[kind])
    params.update(overrides)
    return DomainSpec(kind=kind, seed=seed, **params)


def _shape_mask(label: int, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    dx, dy = xx - cx, yy - cy
    name = SHAPES[label]
    if name == "disk":
        return dx * dx + dy * dy <= r * r
    if name == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.82 * r
    if name == "triangle":
        ax, ay = 0.0, -r
        bx, by = -0.95 * r, 0.75 * r
        cx2, cy2 = 0.95 * r, 0.75 * r
        def half(px, py, qx, qy):
            return (qx - px) * (dy - py) - (qy - py) * (dx - px)
        s1, s2, s3 = half(ax, ay, bx, by), half(bx, by, cx2, cy2), half(cx2, cy2, ax, ay)
        return (s1 >= 0) & (s2 >= 0) & (s3 >= 0)
    if name == "cross":
        arm = 0.34 * r
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    raise ValidationError(f"unknown shape index {label}")


def _box_blur3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    acc = np.zeros_like(img)
    for du in range(3):
        for dv in range(3):
            acc += padded[du:du + img.shape[0], dv:dv + img.shape[1]]
    return acc / 9.0


def render_sample(spec: DomainSpec, index: int) -> tuple[np.ndarray, int, np.ndarray]:
    """Deterministic (image (1,S,S) float32 in [0,1], class id, mask (S,S))."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed,
                                                       spawn_key=(index,)))
    size = spec.image_size
    label = index % spec.num_classes
    r = rng.uniform(0.19, 0.30) * size
    margin = r + 1.0
    cx = rng.uniform(margin, size - 1 - margin)
    cy = rng.uniform(margin, size - 1 - margin)
    fg = rng.uniform(spec.fg_lo, spec.fg_hi)
    bg = rng.uniform(spec.bg_lo, spec.bg_hi)
    mask = _shape_mask(label, size, cx, cy, r)
    img = np.where(mask, fg, bg)
    if spec.texture_amp > 0:
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 2.5)
        phase = rng.uniform(0, 2 * np.pi)
        yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                             np.arange(size, dtype=np.float64), indexing="ij")
        wave = np.cos(theta) * xx + np.sin(theta) * yy
        img = img + spec.texture_amp * np.sin(2 * np.pi * freq * wave / size + phase)
    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * rng.standard_normal((size, size))
    if spec.blur_ksize == 3:
        img = _box_blur3(img)
    if (spec.contrast_lo, spec.contrast_hi) != (1.0, 1.0):
        c = rng.uniform(spec.contrast_lo, spec.contrast_hi)
        img = (img - 0.5) * c + 0.5
    img = np.clip(img, 0.0, 1.0).astype(F32)
    return img[None, :, :], label, mask.astype(np.int64)


@dataclass
class Dataset:
    """In-memory labeled samples; carries both label kinds so one generator
    serves the classification and the dense task."""
    images: np.ndarray   # (n, 1, S, S) float32
    labels: np.ndarray   # (n,) int64 class ids
    masks: np.ndarray    # (n, S, S) int64 foreground masks

    def __len__(self) -> int:
        return self.images.shape[0]

    def slice(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.images[start:stop], self.labels[start:stop],
                       self.masks[start:stop])


def generate(spec: DomainSpec, count: int) -> Dataset:
    """Deterministic class-balanced stream of rendered samples."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    size = spec.image_size
    images = np.empty((count, 1, size, size), dtype=F32)
    labels = np.empty(count, dtype=np.int64)
    masks = np.empty((count, size, size), dtype=np.int64)
    for i in range(count):
        images[i], labels[i], masks[i] = render_sample(spec, i)
    return Dataset(images, labels, masks)


# --------------------------------------------------------------------------
# dataset files ("ASGD")


def write_dataset(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write packed little-endian images (f32) and labels/masks (u16)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = np.ascontiguousarray(images, dtype=F32)
    n, c, h, w = images.shape
    if labels.ndim == 1:
        kind = LABEL_CLASS
        if labels.shape != (n,):
            raise ValidationError(f"labels shape {labels.shape} != ({n},)")
    elif labels.ndim == 3:
        kind = LABEL_MASK
        if labels.shape != (n, h, w):
            raise ValidationError(f"mask shape {labels.shape} != ({n},{h},{w})")
    else:
        raise ValidationError(f"labels must be rank 1 or 3, got rank {labels.ndim}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
        raise ValidationError("labels do not fit in u16")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<H", DATASET_VERSION))
        f.write(struct.pack("<I", n))
        f.write(struct.pack("<III", c, h, w))
        f.write(struct.pack("<B", kind))
        f.write(images.astype("<f4").tobytes())
        f.write(labels.astype("<u2").tobytes())


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, int]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise ValidationError(f"{path}: not a dataset file (magic {blob[:4]!r})")
    off = 4
    (version,) = struct.unpack_from("<H", blob, off); off += 2
    if version != DATASET_VERSION:
        raise ValidationError(f"{path}: unsupported dataset version {version}")
    (n,) = struct.unpack_from("<I", blob, off); off += 4
    c, h, w = struct.unpack_from("<III", blob, off); off += 12
    (kind,) = struct.unpack_from("<B", blob, off); off += 1
    img_count = n * c * h * w
    images = np.frombuffer(blob, dtype="<f4", count=img_count, offset=off)
    images = images.reshape(n, c, h, w).astype(F32)
    off += 4 * img_count
    lbl_count = n if kind == LABEL_CLASS else n * h * w
    labels = np.frombuffer(blob, dtype="<u2", count=lbl_count, offset=off)
    off += 2 * lbl_count
    if off != len(blob):
        raise ValidationError(f"{path}: {len(blob) - off} trailing bytes")
    labels = labels.astype(np.int64)
    if kind == LABEL_MASK:
        labels = labels.reshape(n, h, w)
    return images, labels, kind


def dataset_to_file_labels(ds: Dataset, dense: bool) -> np.ndarray:
    return ds.masks if dense else ds.labels


# --------------------------------------------------------------------------
# evaluation helpers


def classification_accuracy(model: DualHeadModel, images: np.ndarray,
                            labels: np.ndarray, head: str = "new",
                            batch_size: int = 250) -> float:
    """Accuracy through the live backbone and the requested head."""
    if images.shape[0] == 0:
        raise ValidationError("empty evaluation stream")
    correct = 0
    with no_grad():
        for s in range(0, images.shape[0], batch_size):
            x = Tensor(images[s:s + batch_size])
            if head == "new":
                logits = model.forward_new(x)
            else:
                logits = model.forward_old(x)
            if logits.data.ndim == 4:  # dense task: per-pixel decisions
                pred = np.argmax(logits.data, axis=1)
                correct += float(np.mean(pred == labels[s:s + batch_size],
                                         axis=(1, 2)).sum())
            else:
                pred = np.argmax(logits.data, axis=1)
                correct += int(np.sum(pred == labels[s:s + batch_size]))
    return correct / images.shape[0]


def measure_retention(model: DualHeadModel, base_images: np.ndarray,
                      base_labels: np.ndarray) -> float:
    """Old-task accuracy through the live backbone and frozen old head."""
    return classification_accuracy(model, base_images, base_labels, head="old")


def mean_max_softmax(model: DualHeadModel, images: np.ndarray,
                     batch_size: int = 250) -> float:
    """Mean over samples of the old head's max softmax probability; the raw
    confidence proxy behind the domain-gap ordering."""
    from .losses import softmax_rows
    if images.shape[0] == 0:
        raise ValidationError("empty evaluation stream")
    total = 0.0
    with no_grad():
        for s in range(0, images.shape[0], batch_size):
            logits = model.forward_old(Tensor(images[s:s + batch_size]))
            total += float(softmax_rows(logits.data).max(axis=1).sum())
    return total / images.shape[0]


# --------------------------------------------------------------------------
# base-domain pretraining


def pretrain_reference(spec: DomainSpec, arch: str, budget_epochs: int, *,
                       seed: int, train_count: int = 4000, val_count: int = 1000,
                       lr: float = 0.05, momentum: float = 0.9,
                       weight_decay: float = 5e-4, batch_size: int = 32,
                       ) -> tuple[DualHeadModel, float]:
    """Train backbone + old head on the base domain until held-out accuracy
    reaches 90%, then freeze the reference copy and re-init the new head.

    Returns (model, validation accuracy). Raises TrainingError if the budget
    is exhausted below threshold.
    """
    if spec.kind != "base":
        raise ValidationError(f"pretraining requires a base-domain spec, got {spec.kind!r}")
    full = generate(spec, train_count + val_count)
    train, val = full.slice(0, train_count), full.slice(train_count, len(full))

    model = build_optimizee(arch, seed)
    model.set_old_head_trainable(True)
    groups = [("backbone", list(model.backbone)), ("old_head", list(model.old_head))]
    opt = MomentumSGD(CoordinateMap(groups), eta_base=lr, momentum=momentum,
                      weight_decay=weight_decay)

    history = []
    val_acc = 0.0
    for _ in range(budget_epochs):
        for s in range(0, train_count, batch_size):
            x = Tensor(train.images[s:s + batch_size])
            loss = xe_loss(model.forward_old(x), train.labels[s:s + batch_size])
            backward(loss)
            opt.step()
            opt.zero_grad()
        val_acc = classification_accuracy(model, val.images, val.labels, head="old")
        history.append(val_acc)
        if val_acc >= PRETRAIN_ACC_THRESHOLD:
            break
    model.set_old_head_trainable(False)
    if val_acc < PRETRAIN_ACC_THRESHOLD:
        raise TrainingError(
            f"pretraining missed the {PRETRAIN_ACC_THRESHOLD:.0%} threshold in "
            f"{budget_epochs} epochs; per-epoch accuracies: "
            + ", ".join(f"{a:.3f}" for a in history))
    model.snapshot_reference(np.random.default_rng(np.random.SeedSequence((seed, 1))))
    return model, val_acc
