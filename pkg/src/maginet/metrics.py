"""Evaluation metrics and the perturb-and-render self-consistency protocol."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .losses import default_extractor, feature_perceptual
from .synthetic import PASS_FILES, IntrinsicStack, Perturbation, apply_perturbation, rerender, sample_perturbation


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = g.size
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i : h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[..., :, j : w - k + 1 + j] for j in range(k))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 1.0,
    sigma: float = 1.5,
) -> float:
    """Mean SSIM with a Gaussian window over valid positions.

    Accepts [H, W] or [C, H, W]; multi-channel inputs are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ssim: image {a.shape[-2:]} smaller than {window}px window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# normals
# ---------------------------------------------------------------------------


@dataclass
class AngularStats:
    mean_deg: float
    median_deg: float
    rmse_deg: float
    acc_11_25: float
    acc_22_5: float
    acc_30: float
    mean_cosine: float


def angular_errors(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-pixel angles (degrees) between unit normals [3, H, W] inside mask."""
    m = np.asarray(mask).reshape(pred.shape[-2:]) > 0.5
    if not m.any():
        raise ValueError("angular_stats: empty mask")
    dot = np.sum(np.asarray(pred, np.float64) * np.asarray(gt, np.float64), axis=0)[m]
    return np.degrees(np.arccos(np.clip(dot, -1.0, 1.0)))


def angular_stats(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> AngularStats:
    ang = angular_errors(pred, gt, mask)
    return AngularStats(
        mean_deg=float(ang.mean()),
        median_deg=float(np.median(ang)),
        rmse_deg=float(np.sqrt(np.mean(ang**2))),
        acc_11_25=float(np.mean(ang < 11.25)),
        acc_22_5=float(np.mean(ang < 22.5)),
        acc_30=float(np.mean(ang < 30.0)),
        mean_cosine=float(np.mean(np.cos(np.radians(ang)))),
    )


# ---------------------------------------------------------------------------
# per-pass tables
# ---------------------------------------------------------------------------


def masked_mse_np(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Masked MSE in [0, 1] units; mask mass counted per channel."""
    p = np.asarray(pred, np.float64)
    g = np.asarray(gt, np.float64)
    m = np.asarray(mask, np.float64)
    mass = m.sum() * (p.shape[0] if m.shape[0] == 1 else 1)
    return float(np.sum(((p - g) * m) ** 2) / (mass + 1e-6))


def feature_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Random-feature perceptual distance of two [0, 1] images (computed on [-1, 1])."""
    with T.no_grad():
        ta = T.Tensor(2.0 * np.asarray(a)[None] - 1.0)
        tb = T.Tensor(2.0 * np.asarray(b)[None] - 1.0)
        return float(feature_perceptual(ta, tb, default_extractor()).data)


def decode_normals(normal01: np.ndarray) -> np.ndarray:
    n = 2.0 * np.asarray(normal01, np.float64) - 1.0
    return n / np.maximum(np.linalg.norm(n, axis=0, keepdims=True), 1e-12)


def eval_stack(pred: IntrinsicStack, gt: IntrinsicStack) -> dict:
    """Per-pass {mse, ssim, feature_dist[, angular]} rows plus an ``average`` row."""
    if pred.albedo.shape != gt.albedo.shape:
        raise ValueError(f"eval_stack: resolution mismatch {pred.albedo.shape} vs {gt.albedo.shape}")
    rows = {}
    for name in PASS_FILES:
        p, g = getattr(pred, name), getattr(gt, name)
        rows[name] = {
            "mse": masked_mse_np(p, g, gt.mask),
            "ssim": ssim(p, g),
            "feature_dist": feature_distance(p, g),
        }
    stats = angular_stats(decode_normals(pred.normal), decode_normals(gt.normal), gt.mask)
    rows["normal"]["mae_deg"] = stats.mean_deg
    rows["normal"]["angular"] = asdict(stats)
    rows["average"] = {k: float(np.mean([rows[n][k] for n in PASS_FILES])) for k in ("mse", "ssim", "feature_dist")}
    rows["average"]["mae_deg"] = stats.mean_deg
    return rows


def mean_tables(tables: Sequence[dict]) -> dict:
    """Element-wise mean of several ``eval_stack`` tables."""
    out: dict = {}
    for row in tables[0]:
        out[row] = {}
        for k, v in tables[0][row].items():
            if isinstance(v, dict):
                out[row][k] = {kk: float(np.mean([t[row][k][kk] for t in tables])) for kk in v}
            else:
                out[row][k] = float(np.mean([t[row][k] for t in tables]))
    return out


ROW_LABELS = {
    "albedo": "Light-normalised diffuse",
    "normal": "Normal",
    "specular": "Specular",
    "translucency": "Translucency",
    "ao": "Ambient occlusion",
    "raw_diffuse": "Raw diffuse colour",
    "average": "Average",
}
TABLE_ORDER = ("albedo", "normal", "specular", "translucency", "ao", "raw_diffuse", "average")


def format_table(table: dict) -> str:
    lines = [f"{'Pass':<26}{'MSE':>10}{'SSIM':>8}{'FeatDist':>10}{'MAE(deg)':>10}"]
    for row in TABLE_ORDER:
        r = table[row]
        mae = f"{r['mae_deg']:.2f}" if "mae_deg" in r and row in ("normal", "average") else "-"
        lines.append(f"{ROW_LABELS[row]:<26}{r['mse']:>10.5f}{r['ssim']:>8.3f}{r['feature_dist']:>10.4f}{mae:>10}")
    return "\n".join(lines)


def table_records(table: dict) -> list:
    recs = []
    for row in TABLE_ORDER:
        for k, v in table[row].items():
            if not isinstance(v, dict):
                recs.append({"pass": row, "metric": k, "value": v})
    return recs


# ---------------------------------------------------------------------------
# self-consistency
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    rmse: float
    ssim: float
    feature_dist: float
    count: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def self_consistency(
    decompose: Callable[[np.ndarray], IntrinsicStack],
    test_images: Sequence[np.ndarray],
    max_shift_px: int = 5,
    photometric_frac: float = 0.05,
    light: Optional[tuple] = None,
    seed: int = 0,
) -> ConsistencyReport:
    """Decompose original and perturbed inputs, render both stacks under
    one light, and average the render-to-render differences.
    """
    light_dir, intensity, ambient = light or ((0.0, 0.0, 1.0), 1.0, 0.2)
    rng = np.random.default_rng([seed, 11])
    rmses, ssims, feats = [], [], []
    for img in test_images:
        p = sample_perturbation(rng, max_shift_px, photometric_frac)
        jittered = img if p == Perturbation() else apply_perturbation(img, p)
        a = rerender(decompose(img), light_dir, intensity, ambient)
        b = rerender(decompose(jittered), light_dir, intensity, ambient)
        rmses.append(float(np.sqrt(np.mean((a.astype(np.float64) - b) ** 2))))
        ssims.append(ssim(a, b))
        feats.append(feature_distance(a, b))
    return ConsistencyReport(float(np.mean(rmses)), float(np.mean(ssims)), float(np.mean(feats)), len(rmses))
