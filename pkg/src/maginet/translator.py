"""Stage II refinement and Stage III pass translator.

The translator maps the refined albedo (3 channels) to a 15-channel stack
split into five RGB passes, and is trained against a multi-scale patch
discriminator that sees the 18-channel concatenation of albedo and passes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import tensor as T
from .model import ConfigError, add_conv, conv, scale_width
from .params import ParamStore
from .tensor import Tensor

PASS_NAMES = ("ao", "normal", "specular", "translucency", "raw_diffuse")


# ---------------------------------------------------------------------------
# Stage II
# ---------------------------------------------------------------------------


def init_refine(width: int = 64, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng([seed, 2])
    p = ParamStore()
    add_conv(p, rng, "refine/conv0", 3, width, 3)
    add_conv(p, rng, "refine/conv1", width, width, 3)
    add_conv(p, rng, "refine/proj", width, 3, 1)
    return p


def refine(albedo_hat: Tensor, params: ParamStore, trace: Optional[list] = None) -> Tensor:
    """Upsample 2x, then conv3x3+ReLU, conv3x3+ReLU, conv1x1; clamp to [-1, 1]."""
    n, c, h, w = albedo_hat.shape
    up = T.bilinear_resize(albedo_hat, 2 * h, 2 * w)
    x = T.relu(conv(up, params, "refine/conv0"))
    x = T.relu(conv(x, params, "refine/conv1"))
    out = T.clamp(conv(x, params, "refine/proj"), -1.0, 1.0)
    if trace is not None:
        width = params["refine/conv0.weight"].shape[0]
        for op, cin, cout, rin, rout in (
            ("Upsample", None, None, h, 2 * h),
            ("Conv 3x3", c, width, 2 * h, 2 * h),
            ("Conv 3x3", width, width, 2 * h, 2 * h),
            ("Conv 1x1", width, 3, 2 * h, 2 * h),
        ):
            trace.append(dict(stage="ref", level=None, op=op, cin=cin, cout=cout, res_in=rin, res_out=rout, skip=None))
    return out


# ---------------------------------------------------------------------------
# Stage III
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TranslatorConfig:
    gen_base_channels: int = 64
    num_downsamples: int = 4
    num_res_blocks: int = 9
    num_disc_scales: int = 2
    disc_base_channels: int = 64
    scale_div: int = 1

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 1:
                raise ConfigError(f"translator config field {name} must be >= 1, got {v}")

    @classmethod
    def scaled(cls, scale_div: int, num_downsamples: int = 2, num_res_blocks: int = 3) -> "TranslatorConfig":
        return cls(
            gen_base_channels=scale_width(64, scale_div),
            num_downsamples=num_downsamples,
            num_res_blocks=num_res_blocks,
            num_disc_scales=2,
            disc_base_channels=scale_width(64, scale_div),
            scale_div=scale_div,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TranslatorConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown translator config keys: {sorted(unknown)}")
        return cls(**d)


class PassBundle(NamedTuple):
    ao: Tensor
    normal: Tensor
    specular: Tensor
    translucency: Tensor
    raw_diffuse: Tensor

    def stacked(self) -> Tensor:
        return T.concat(list(self), axis=1)


def init_generator(cfg: TranslatorConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng([seed, 3])
    p = ParamStore()
    ch = cfg.gen_base_channels
    add_conv(p, rng, "gen/stem", 3, ch, 3)
    for i in range(cfg.num_downsamples):
        add_conv(p, rng, f"gen/down{i}", ch, 2 * ch, 3)
        ch *= 2
    for i in range(cfg.num_res_blocks):
        add_conv(p, rng, f"gen/res{i}/conv0", ch, ch, 3)
        add_conv(p, rng, f"gen/res{i}/conv1", ch, ch, 3)
    for i in range(cfg.num_downsamples):
        add_conv(p, rng, f"gen/up{i}", ch, ch // 2, 3)
        ch //= 2
    add_conv(p, rng, "gen/out", ch, 15, 3)
    return p


def generate_passes(albedo_ref: Tensor, cfg: TranslatorConfig, params: ParamStore) -> Tensor:
    """Raw 15-channel generator output in (-1, 1)."""
    h, w = albedo_ref.shape[-2:]
    if h % (2**cfg.num_downsamples) or w % (2**cfg.num_downsamples):
        raise T.ShapeError(f"translate: {h}x{w} not divisible by 2^{cfg.num_downsamples}")
    x = T.relu(conv(albedo_ref, params, "gen/stem"))
    for i in range(cfg.num_downsamples):
        x = T.relu(conv(x, params, f"gen/down{i}", stride=2))
    for i in range(cfg.num_res_blocks):
        y = T.relu(conv(x, params, f"gen/res{i}/conv0"))
        x = x + conv(y, params, f"gen/res{i}/conv1")
    for i in range(cfg.num_downsamples):
        r = x.shape[-1]
        x = T.relu(conv(T.bilinear_resize(x, 2 * r, 2 * r), params, f"gen/up{i}"))
    return T.tanh(conv(x, params, "gen/out"))


def split_passes(stack15: Tensor) -> PassBundle:
    if stack15.shape[1] != 15:
        raise T.ShapeError(f"split_passes: expected 15 channels, got {stack15.shape[1]}")
    return PassBundle(*(stack15[:, 3 * i : 3 * i + 3] for i in range(5)))


def translate(albedo_ref: Tensor, cfg: TranslatorConfig, params: ParamStore) -> PassBundle:
    return split_passes(generate_passes(albedo_ref, cfg, params))


def renormalize_normals(normal: np.ndarray, axis: int = 1) -> np.ndarray:
    """Rescale [-1, 1]-encoded normal vectors to unit length.

    Degenerate (near-zero) vectors become (0, 0, 1). Idempotent.
    """
    n = np.asarray(normal, dtype=np.float64)
    length = np.linalg.norm(n, axis=axis, keepdims=True)
    out = np.where(length > 1e-6, n / np.maximum(length, 1e-12), 0.0)
    degenerate = np.broadcast_to(length <= 1e-6, n.shape)
    if degenerate.any():
        z = np.zeros_like(n)
        idx = [slice(None)] * n.ndim
        idx[axis] = 2
        z[tuple(idx)] = 1.0
        out = np.where(degenerate, z, out)
    # a second pass absorbs the rounding of the float32 cast
    out = out.astype(np.float32)
    length = np.linalg.norm(out.astype(np.float64), axis=axis, keepdims=True)
    return (out / length).astype(np.float32)


# ---------------------------------------------------------------------------
# discriminator and adversarial objectives
# ---------------------------------------------------------------------------

DISC_LAYERS = 4


def init_discriminator(cfg: TranslatorConfig, seed: int = 0, in_channels: int = 18) -> ParamStore:
    rng = np.random.default_rng([seed, 4])
    p = ParamStore()
    nf = cfg.disc_base_channels
    for s in range(cfg.num_disc_scales):
        widths = [in_channels, nf, 2 * nf, 4 * nf, 1]
        for i in range(DISC_LAYERS):
            add_conv(p, rng, f"disc/s{s}/conv{i}", widths[i], widths[i + 1], 3)
    return p


class DiscOutput(NamedTuple):
    logits: list  # per scale
    features: list  # per scale, list of intermediate activations


def discriminate(albedo_ref: Tensor, bundle, cfg: TranslatorConfig, params: ParamStore) -> DiscOutput:
    """Patch logits at each scale for the 18-channel albedo + passes stack."""
    passes = bundle.stacked() if isinstance(bundle, PassBundle) else bundle
    if passes.shape[-2:] != albedo_ref.shape[-2:] or passes.shape[0] != albedo_ref.shape[0]:
        raise T.ShapeError(f"discriminate: passes {passes.shape} vs albedo {albedo_ref.shape}")
    x = T.concat([albedo_ref, passes], axis=1)
    logits, feats = [], []
    for s in range(cfg.num_disc_scales):
        if s:
            x = T.avg_pool2(x)
        h = x
        layer_feats = []
        for i in range(DISC_LAYERS):
            h = conv(h, params, f"disc/s{s}/conv{i}", stride=2)
            if i < DISC_LAYERS - 1:
                h = T.leaky_relu(h, 0.2)
                layer_feats.append(h)
        logits.append(h)
        feats.append(layer_feats)
    return DiscOutput(logits, feats)


def lsgan_loss(logits: list, target: float) -> Tensor:
    terms = [T.mean(T.square(l - target)) for l in logits]
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def feature_matching(real: DiscOutput, fake: DiscOutput) -> Tensor:
    """Mean |D_feat(real) - D_feat(fake)| averaged over layers and scales."""
    per_scale = []
    for fr, ff in zip(real.features, fake.features):
        layer = [T.mean(T.abs_(f - r.detach())) for r, f in zip(fr, ff)]
        per_scale.append(sum(layer[1:], layer[0]) * (1.0 / len(layer)))
    return sum(per_scale[1:], per_scale[0]) * (1.0 / len(per_scale))


class GanLosses(NamedTuple):
    g_adv: Tensor
    d: Tensor
    fm: Tensor


def gan_losses(real_bundle, fake_bundle, albedo_ref: Tensor, cfg: TranslatorConfig, disc_params: ParamStore) -> GanLosses:
    """Least-squares adversarial losses and feature matching.

    ``d`` sees a detached fake so its gradient reaches only the
    discriminator; ``g_adv`` and ``fm`` flow into the generator (and, as a
    side effect, the discriminator weights; callers step only G with them).
    """
    real = real_bundle.stacked() if isinstance(real_bundle, PassBundle) else real_bundle
    fake = fake_bundle.stacked() if isinstance(fake_bundle, PassBundle) else fake_bundle
    cond = albedo_ref.detach()
    d_real = discriminate(cond, real.detach(), cfg, disc_params)
    d_fake_det = discriminate(cond, fake.detach(), cfg, disc_params)
    d_fake = discriminate(cond, fake, cfg, disc_params)
    loss_d = (lsgan_loss(d_real.logits, 1.0) + lsgan_loss(d_fake_det.logits, 0.0)) * 0.5
    loss_g = lsgan_loss(d_fake.logits, 1.0)
    return GanLosses(loss_g, loss_d, feature_matching(d_real, d_fake))
