"""Albedo training objective: masked MSE, feature-space perceptual term,
Sobel edge term and patch-wise perceptual term.

The perceptual terms use :class:`FeatureExtractor`, a fixed-seed random
convolutional pyramid, since no pretrained network weights are shipped.
"""

from __future__ import annotations

import contextlib
import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

MASK_EPS = 1e-6

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # masked MSE
    beta: float = 10.5  # feature perceptual
    gamma: float = 5.0  # edge
    delta: float = 1.2  # patch perceptual

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("loss weights must be non-negative")


class FeatureExtractor:
    """Four frozen conv stages (16/32/64/64 wide), two 3x3 conv+ReLU each,
    with 2x average pooling between stages. Features are taken after each
    stage's second ReLU.
    """

    widths = (16, 32, 64, 64)

    def __init__(self, seed: int = 0, in_channels: int = 3):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: list = []
        cin = in_channels
        for w in self.widths:
            stage = []
            for _ in range(2):
                std = math.sqrt(2.0 / (cin * 9))
                stage.append(rng.standard_normal((w, cin, 3, 3)) * std)
                cin = w
            self.weights.append(stage)

    def features(self, x: Tensor) -> list:
        h, w = x.shape[-2:]
        if min(h, w) < 16:
            raise T.ShapeError(f"feature extractor needs >= 16px input, got {h}x{w}")
        dt = T.default_dtype()
        feats = []
        for s, stage in enumerate(self.weights):
            if s:
                x = T.avg_pool2(x)
            for wgt in stage:
                x = T.relu(T.conv2d(x, T.Tensor._wrap(wgt.astype(dt)), None, 1, 1))
            feats.append(x)
        return feats


@functools.lru_cache(maxsize=8)
def default_extractor(seed: int = 0) -> FeatureExtractor:
    return FeatureExtractor(seed)


def _check_same(pred: Tensor, gt: Tensor, op: str) -> None:
    if pred.shape != gt.shape:
        raise T.ShapeError(f"{op}: pred {pred.shape} vs gt {gt.shape}")


def masked_mse(pred: Tensor, gt, mask) -> Tensor:
    """Squared error over mask pixels / (mask mass counted per channel + eps)."""
    gt = T._as_tensor(gt)
    _check_same(pred, gt, "masked_mse")
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if (m < 0).any():
        raise ValueError("masked_mse: mask has negative entries")
    m = m.astype(T.default_dtype())
    channels = pred.shape[1]
    if m.shape[1] == 1:
        mass = m.sum() * channels
    else:
        mass = m.sum()
    diff = (pred - gt) * T.Tensor._wrap(m)
    return T.tsum(T.square(diff)) * (1.0 / (float(mass) + MASK_EPS))


def feature_perceptual(pred: Tensor, gt, extractor: Optional[FeatureExtractor] = None) -> Tensor:
    """Sum over stages of mean absolute feature difference."""
    gt = T._as_tensor(gt)
    _check_same(pred, gt, "feature_perceptual")
    ex = extractor or default_extractor()
    fp = ex.features(pred)
    with T.no_grad() if not gt.requires_grad else contextlib.nullcontext():
        fg = ex.features(gt)
    terms = [T.mean(T.abs_(a - b)) for a, b in zip(fp, fg)]
    return sum(terms[1:], terms[0])


def sobel(x: Tensor) -> Tensor:
    """Per-channel Sobel responses [N, C, 2, H, W] (x then y) with edge replication."""
    n, c, h, w = x.shape
    k = np.stack([SOBEL_X, SOBEL_Y])[:, None].astype(T.default_dtype())
    flat = T.pad_replicate(x.reshape(n * c, 1, h, w), 1)
    g = T.conv2d(flat, T.Tensor._wrap(k), None, 1, 0)
    return g.reshape(n, c, 2, h, w)


def edge_loss(pred: Tensor, gt) -> Tensor:
    """mean|Sx*(p) - Sx*(g)| + mean|Sy*(p) - Sy*(g)|."""
    gt = T._as_tensor(gt)
    _check_same(pred, gt, "edge_loss")
    g = sobel(pred - gt)
    # mean over both maps, times 2, is the sum of the two per-map means
    return T.mean(T.abs_(g)) * 2.0


def patch_side(res: int) -> int:
    return min(128, res // 2)


def sample_patches(rng: np.random.Generator, batch: int, res: int, count: int = 3) -> list:
    """(patch, image, top, left) tuples, drawn patch-major then image-major."""
    side = patch_side(res)
    out = []
    for p in range(count):
        for n in range(batch):
            top = int(rng.integers(0, res - side + 1))
            left = int(rng.integers(0, res - side + 1))
            out.append((p, n, top, left))
    return out


def patch_perceptual(pred: Tensor, gt, rng: np.random.Generator, extractor: Optional[FeatureExtractor] = None) -> Tensor:
    """Average feature_perceptual over 3 co-located random patches per image."""
    gt = T._as_tensor(gt)
    _check_same(pred, gt, "patch_perceptual")
    n, _, h, w = pred.shape
    res = min(h, w)
    if res < 32:
        raise T.ShapeError(f"patch_perceptual needs >= 32px images, got {h}x{w}")
    side = patch_side(res)
    coords = sample_patches(rng, n, res)
    pp = T.concat([pred[i : i + 1, :, t : t + side, l : l + side] for _, i, t, l in coords], axis=0)
    gp = T.concat([gt[i : i + 1, :, t : t + side, l : l + side] for _, i, t, l in coords], axis=0)
    # equal-sized patches: batching them is the mean of the per-patch values
    return feature_perceptual(pp, gp, extractor)


TERMS = ("mse", "vgg", "edge", "lpips")


def total_loss(pred: Tensor, gt, mask, weights: LossWeights, rng: np.random.Generator, extractor=None):
    """Weighted four-term objective; returns (total, {term: float})."""
    terms = {
        "mse": masked_mse(pred, gt, mask),
        "vgg": feature_perceptual(pred, gt, extractor),
        "edge": edge_loss(pred, gt),
        "lpips": patch_perceptual(pred, gt, rng, extractor),
    }
    w = {"mse": weights.alpha, "vgg": weights.beta, "edge": weights.gamma, "lpips": weights.delta}
    total = None
    for k in TERMS:
        t = terms[k] * w[k]
        total = t if total is None else total + t
    return total, {k: float(v.data) for k, v in terms.items()}
