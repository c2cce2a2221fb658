"""Training losses.

``xe_loss`` is the supervised task loss on the new head. ``proxy_loss``
pulls the live old-head outputs toward the frozen reference model's outputs;
its ``cross_entropy`` form is -mean_i sum_k p_k log q_k (which equals H(p)
at p == q), the ``kl_proper`` form subtracts H(p) so the value is zero at
equality. Both forms have identical gradients w.r.t. the live logits.
``dense_proxy_loss`` averages the divergence over non-overlapping input
patches to balance a pixel-wise task loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor, ops

F32 = np.float32
DIVERGENCE_FORMS = ("cross_entropy", "kl_proper")


@dataclass
class LossConfig:
    lam: float
    dense_mode: bool = False
    patch_grid: int = 2
    divergence_form: str = "cross_entropy"

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.patch_grid < 1:
            raise ValidationError(f"patch_grid must be >= 1, got {self.patch_grid}")
        if self.divergence_form not in DIVERGENCE_FORMS:
            raise ValidationError(
                f"divergence_form {self.divergence_form!r} not in {DIVERGENCE_FORMS}")


def _one_hot(labels: np.ndarray, num_classes: int, op: str) -> np.ndarray:
    flat = labels.reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() >= num_classes):
        raise ValidationError(
            f"{op}: label out of range [0, {num_classes}): "
            f"min={flat.min()} max={flat.max()}")
    eye = np.eye(num_classes, dtype=F32)
    return eye[flat].reshape(*labels.shape, num_classes)


def xe_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over all supervised positions.

    ``logits`` is (N, K) with integer labels (N,), or dense (N, K, H, W)
    with labels (N, H, W); dense mode averages over batch and pixels.
    """
    labels = np.asarray(labels)
    if logits.data.ndim == 2:
        n, k = logits.shape
        if labels.shape != (n,):
            raise ShapeError(f"xe_loss: labels shape {labels.shape} != ({n},)")
        onehot = _one_hot(labels, k, "xe_loss")                    # (N, K)
        lsm = ops.log_softmax(logits, axis=1)
        picked = ops.mul(Tensor(onehot), lsm)
        return ops.scalar_mul(ops.sum(picked), -1.0 / n)
    if logits.data.ndim == 4:
        n, k, h, w = logits.shape
        if labels.shape != (n, h, w):
            raise ShapeError(f"xe_loss: labels shape {labels.shape} != ({n},{h},{w})")
        onehot = _one_hot(labels, k, "xe_loss")                    # (N, H, W, K)
        onehot = np.ascontiguousarray(onehot.transpose(0, 3, 1, 2))
        lsm = ops.log_softmax(logits, axis=1)
        picked = ops.mul(Tensor(onehot), lsm)
        return ops.scalar_mul(ops.sum(picked), -1.0 / (n * h * w))
    raise ShapeError(f"xe_loss: logits must be rank 2 or 4, got {logits.shape}")


def softmax_rows(logits_data: np.ndarray) -> np.ndarray:
    """Float64 row softmax of (N, K) logits."""
    z = logits_data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mean_softmax_entropy(logits_data: np.ndarray) -> float:
    """Mean over the batch of H(softmax(row)); the 0*log(0) terms are zero."""
    p = softmax_rows(logits_data)
    plogp = np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return float(-plogp.sum(axis=1).mean())


def proxy_loss(old_logits_ref: Tensor, old_logits_live: Tensor,
               form: str = "cross_entropy") -> Tensor:
    """Divergence of the live old-head outputs from the frozen reference.

    The reference side is treated as a constant (no gradient); gradients
    w.r.t. the live logits are identical between the two forms.
    """
    if form not in DIVERGENCE_FORMS:
        raise ValidationError(f"unknown divergence form {form!r}")
    if old_logits_ref.data.ndim != 2 or old_logits_ref.shape != old_logits_live.shape:
        raise ShapeError(
            f"proxy_loss: expected matching (N, K) logits, got "
            f"{old_logits_ref.shape} and {old_logits_live.shape}")
    n = old_logits_ref.shape[0]
    p = softmax_rows(old_logits_ref.data).astype(F32)
    lsm = ops.log_softmax(old_logits_live, axis=1)
    xe = ops.scalar_mul(ops.sum(ops.mul(Tensor(p), lsm)), -1.0 / n)
    if form == "cross_entropy":
        return xe
    h = mean_softmax_entropy(old_logits_ref.data)
    return ops.add(xe, Tensor(np.asarray(-h, dtype=F32)))


def dense_proxy_loss(model, batch_inputs: Tensor, cfg: LossConfig) -> Tensor:
    """Proxy divergence averaged over a g x g grid of non-overlapping input
    patches, each forwarded through both backbones and the old head."""
    if not cfg.dense_mode:
        raise ValidationError("dense_proxy_loss requires cfg.dense_mode = true")
    g = cfg.patch_grid
    n, c, h, w = batch_inputs.shape
    if h % g or w % g:
        raise ValidationError(
            f"patch_grid {g} does not divide input extents {h}x{w}")
    hp, wp = h // g, w // g
    patches = (batch_inputs.data
               .reshape(n, c, g, hp, g, wp)
               .transpose(0, 2, 4, 1, 3, 5)
               .reshape(n * g * g, c, hp, wp))
    live, ref = model.forward_proxy(Tensor(np.ascontiguousarray(patches)))
    return proxy_loss(ref, live, cfg.divergence_form)


def total_loss(xe: Tensor, kl: Tensor, lam: float) -> Tensor:
    """Weighted sum xe + lam * kl of two scalar losses."""
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    if xe.data.size != 1 or kl.data.size != 1:
        raise ShapeError(
            f"total_loss expects scalars, got {xe.shape} and {kl.shape}")
    return ops.add(xe, ops.scalar_mul(kl, lam))
