"""MixUp / CutMix batch mixing."""

from dataclasses import dataclass

import numpy as np


@dataclass
class MixedBatch:
    images: np.ndarray
    label_a: np.ndarray
    label_b: np.ndarray
    lam: float
    method: str  # "none", "mixup" or "cutmix"

    def soft_targets(self, num_classes):
        """``lam * onehot(a) + (1 - lam) * onehot(b)``; CE against it equals the two-term mix."""
        n = len(self.label_a)
        t = np.zeros((n, num_classes), dtype=np.float64)
        t[np.arange(n), self.label_a] += self.lam
        t[np.arange(n), self.label_b] += 1.0 - self.lam
        return t


def rand_bbox(height, width, lam, rng, center=None):
    """Box covering about ``1 - lam`` of the image, clipped to its borders.

    Returns ``(top, bottom, left, right)`` with exclusive ends.
    """
    cut = np.sqrt(1.0 - lam)
    ch, cw = int(height * cut), int(width * cut)
    if center is None:
        cy, cx = rng.integers(height), rng.integers(width)
    else:
        cy, cx = center
    top = int(np.clip(cy - ch // 2, 0, height))
    bottom = int(np.clip(cy + ch // 2, 0, height))
    left = int(np.clip(cx - cw // 2, 0, width))
    right = int(np.clip(cx + cw // 2, 0, width))
    return top, bottom, left, right


def mix_batch(images, labels, rng, mixup_alpha=0.8, cutmix_alpha=1.0, switch_prob=0.5):
    """Mix each sample with its mirror in the batch (sample i with sample B-1-i).

    When both alphas are positive CutMix is chosen with ``switch_prob``.
    CutMix's lambda is corrected to the pasted box's actual area.
    """
    if mixup_alpha < 0 or cutmix_alpha < 0:
        raise ValueError("mixing alphas must be non-negative")
    labels = np.asarray(labels)
    if len(images) < 2 or (mixup_alpha == 0 and cutmix_alpha == 0):
        return MixedBatch(images, labels, labels, 1.0, "none")
    if mixup_alpha > 0 and cutmix_alpha > 0:
        use_cutmix = rng.random() < switch_prob
    else:
        use_cutmix = cutmix_alpha > 0
    partner = images[::-1]
    label_b = labels[::-1]
    if use_cutmix:
        lam = float(rng.beta(cutmix_alpha, cutmix_alpha))
        h, w = images.shape[-2:]
        top, bottom, left, right = rand_bbox(h, w, lam, rng)
        mixed = images.copy()
        mixed[..., top:bottom, left:right] = partner[..., top:bottom, left:right]
        lam = 1.0 - (bottom - top) * (right - left) / float(h * w)
        return MixedBatch(mixed, labels, label_b, lam, "cutmix")
    lam = float(rng.beta(mixup_alpha, mixup_alpha))
    mixed = (lam * images + (1.0 - lam) * partner).astype(images.dtype)
    return MixedBatch(mixed, labels, label_b, lam, "mixup")
