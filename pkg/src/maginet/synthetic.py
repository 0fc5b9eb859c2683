"""Procedural intrinsic-image scenes.

A scene is a height field made of smooth compact bumps and dents inside an
elliptical face mask, a pigment field (smooth colour noise, a tint that
follows the height field, and a few sharp-edged chromatic patches), and
per-pixel specular and translucency coefficients. All fields are analytic
functions of continuous image coordinates in [-1, 1], so a scene renders
consistently at any resolution.

The lit input image is diffuse (directional + ambient, times AO) plus a
Blinn-Phong highlight plus a back-light transmission term. The raw-diffuse
pass is shaded by a fixed residual light instead of the scene light, which
keeps all six ground-truth passes independent of the scene lighting.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .params import load_ntf, save_ntf

SPEC_EXPONENT = 24.0
AO_DIRECTIONS = 16
AO_STEPS = 6
AO_RADIUS = 0.3
TRANSMISSION_TINT = (1.0, 0.55, 0.4)
RESIDUAL_LIGHT_DIR = tuple((np.array([0.25, -0.35, 1.0]) / np.linalg.norm([0.25, -0.35, 1.0])).tolist())
RESIDUAL_AMBIENT = 0.55
RESIDUAL_INTENSITY = 0.45
BACKGROUND_ALBEDO = (0.32, 0.34, 0.38)
PASS_FILES = ("albedo", "normal", "ao", "specular", "translucency", "raw_diffuse")


@dataclass(frozen=True)
class Blob:
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    height: float


@dataclass(frozen=True)
class Patch:
    cx: float
    cy: float
    rx: float
    ry: float
    color: tuple


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    blobs: tuple
    face: tuple  # (cx, cy, rx, ry) of the elliptical mask
    skin: tuple  # base RGB
    noise: tuple  # ((fx, fy, phase, amp_r, amp_g, amp_b), ...)
    height_tint: tuple  # RGB change per unit height
    patches: tuple
    specular_base: float
    specular_height: float
    translucency_base: float
    light_dir: tuple
    light_intensity: float
    ambient: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        d = json.loads(text)
        d["blobs"] = tuple(Blob(**b) for b in d["blobs"])
        d["patches"] = tuple(Patch(**{**p, "color": tuple(p["color"])}) for p in d["patches"])
        for k in ("face", "skin", "height_tint", "light_dir"):
            d[k] = tuple(d[k])
        d["noise"] = tuple(tuple(n) for n in d["noise"])
        return cls(**d)


@dataclass
class IntrinsicStack:
    """Six co-registered passes in [0, 1] (normals stored as (n+1)/2) plus mask."""

    albedo: np.ndarray
    normal: np.ndarray
    ao: np.ndarray
    specular: np.ndarray
    translucency: np.ndarray
    raw_diffuse: np.ndarray
    mask: np.ndarray

    def passes(self) -> dict:
        return {k: getattr(self, k) for k in PASS_FILES}

    @property
    def resolution(self) -> int:
        return self.albedo.shape[-1]

    def decoded_normals(self) -> np.ndarray:
        return 2.0 * self.normal.astype(np.float64) - 1.0

    def equals(self, other: "IntrinsicStack") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in PASS_FILES + ("mask",))


def _seed_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_light(rng: np.random.Generator, max_polar_deg: float = 60.0) -> tuple:
    cos_max = np.cos(np.deg2rad(max_polar_deg))
    z = rng.uniform(cos_max, 1.0)
    phi = rng.uniform(0, 2 * np.pi)
    r = np.sqrt(1 - z * z)
    v = np.array([r * np.cos(phi), r * np.sin(phi), z])
    return tuple((v / np.linalg.norm(v)).tolist())


def sample_scene(seed: int) -> SceneSpec:
    rng = _seed_rng(seed)
    face = (
        rng.uniform(-0.05, 0.05),
        rng.uniform(-0.02, 0.08),
        rng.uniform(0.68, 0.8),
        rng.uniform(0.78, 0.9),
    )
    blobs = []
    for _ in range(int(rng.integers(2, 6))):
        ang = rng.uniform(0, 2 * np.pi)
        rad = np.sqrt(rng.uniform(0, 1)) * 0.5
        blobs.append(
            Blob(
                cx=face[0] + rad * np.cos(ang) * face[2],
                cy=face[1] + rad * np.sin(ang) * face[3],
                rx=rng.uniform(0.2, 0.45),
                ry=rng.uniform(0.2, 0.45),
                angle=rng.uniform(0, np.pi),
                height=float(rng.choice([-1.0, 1.0]) * rng.uniform(0.08, 0.3)),
            )
        )
    skin = tuple(np.clip(np.array([0.72, 0.52, 0.42]) + rng.normal(0, 0.06, 3), 0.2, 0.9).tolist())
    noise = tuple(
        (
            rng.uniform(-4, 4),
            rng.uniform(-4, 4),
            rng.uniform(0, 2 * np.pi),
            *rng.uniform(0.0, 0.05, 3).tolist(),
        )
        for _ in range(3)
    )
    tint = tuple((np.array([0.55, 0.4, 0.3]) * rng.uniform(0.8, 1.2)).tolist())
    patches = []
    for _ in range(int(rng.integers(1, 4))):
        ang = rng.uniform(0, 2 * np.pi)
        rad = np.sqrt(rng.uniform(0, 1)) * 0.6
        patches.append(
            Patch(
                cx=face[0] + rad * np.cos(ang) * face[2],
                cy=face[1] + rad * np.sin(ang) * face[3],
                rx=rng.uniform(0.06, 0.18),
                ry=rng.uniform(0.04, 0.12),
                color=tuple(rng.uniform(0.1, 0.8, 3).tolist()),
            )
        )
    return SceneSpec(
        seed=int(seed) if np.isscalar(seed) else 0,
        blobs=tuple(blobs),
        face=tuple(float(v) for v in face),
        skin=skin,
        noise=noise,
        height_tint=tint,
        patches=tuple(patches),
        specular_base=float(rng.uniform(0.15, 0.35)),
        specular_height=float(rng.uniform(0.8, 1.5)),
        translucency_base=float(rng.uniform(0.2, 0.5)),
        light_dir=random_light(rng),
        light_intensity=float(rng.uniform(0.6, 1.4)),
        ambient=float(rng.uniform(0.05, 0.3)),
    )


# ---------------------------------------------------------------------------
# analytic fields
# ---------------------------------------------------------------------------


def pixel_grid(res: int) -> tuple:
    c = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    y, x = np.meshgrid(c, c, indexing="ij")
    return x, y


def height_field(spec: SceneSpec, x: np.ndarray, y: np.ndarray, with_grad: bool = True):
    """Height and its analytic x/y derivatives; each bump is H*(1-q)^3 on q<1."""
    h = np.zeros_like(x)
    hx = np.zeros_like(x)
    hy = np.zeros_like(x)
    for b in spec.blobs:
        dx, dy = x - b.cx, y - b.cy
        c, s = np.cos(b.angle), np.sin(b.angle)
        u = (dx * c + dy * s) / b.rx
        v = (-dx * s + dy * c) / b.ry
        q = u * u + v * v
        inside = q < 1
        one_q = np.where(inside, 1 - q, 0.0)
        h += b.height * one_q**3
        if with_grad:
            dh_dq = -3 * b.height * one_q**2
            dq_dx = 2 * u * c / b.rx - 2 * v * s / b.ry
            dq_dy = 2 * u * s / b.rx + 2 * v * c / b.ry
            hx += dh_dq * dq_dx
            hy += dh_dq * dq_dy
    return h, hx, hy


def normals_from_gradient(hx: np.ndarray, hy: np.ndarray) -> np.ndarray:
    n = np.stack([-hx, -hy, np.ones_like(hx)])
    return n / np.linalg.norm(n, axis=0, keepdims=True)


def ambient_occlusion(spec: SceneSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """1 - mean over 16 directions of the sine of the horizon elevation."""
    h0, _, _ = height_field(spec, x, y, with_grad=False)
    occl = np.zeros_like(x)
    for k in range(AO_DIRECTIONS):
        phi = 2 * np.pi * k / AO_DIRECTIONS
        dx, dy = np.cos(phi), np.sin(phi)
        best = np.zeros_like(x)
        for s in range(1, AO_STEPS + 1):
            t = AO_RADIUS * s / AO_STEPS
            hs, _, _ = height_field(spec, x + t * dx, y + t * dy, with_grad=False)
            best = np.maximum(best, (hs - h0) / t)
        occl += best / np.sqrt(1 + best * best)
    return np.clip(1.0 - occl / AO_DIRECTIONS, 0.0, 1.0)


def face_mask(spec: SceneSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cx, cy, rx, ry = spec.face
    return (((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0).astype(np.float64)


def albedo_field(spec: SceneSpec, x, y, h, mask) -> np.ndarray:
    rgb = np.array(spec.skin)[:, None, None] * np.ones_like(x)
    for fx, fy, ph, ar, ag, ab in spec.noise:
        wave = np.sin(np.pi * (fx * x + fy * y) + ph)
        rgb = rgb + np.array([ar, ag, ab])[:, None, None] * wave
    rgb = rgb + np.array(spec.height_tint)[:, None, None] * h
    for p in spec.patches:
        inside = ((x - p.cx) / p.rx) ** 2 + ((y - p.cy) / p.ry) ** 2 <= 1.0
        rgb = np.where(inside, np.array(p.color)[:, None, None], rgb)
    rgb = np.clip(rgb, 0.03, 0.97)
    bg = np.array(BACKGROUND_ALBEDO)[:, None, None] * np.ones_like(x)
    return np.where(mask > 0, rgb, bg)


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------


def _unit_light(light_dir) -> np.ndarray:
    l = np.asarray(light_dir, dtype=np.float64)
    if l.shape != (3,) or abs(np.linalg.norm(l) - 1.0) > 1e-6:
        raise ValueError(f"light direction must be a unit 3-vector, got {light_dir}")
    return l


def lambert(normals: np.ndarray, light_dir) -> np.ndarray:
    l = _unit_light(light_dir)
    return np.maximum(0.0, np.einsum("chw,c->hw", normals, l))


def shade_terms(stack: IntrinsicStack, light_dir, intensity: float, ambient: float) -> dict:
    """Diffuse, specular and transmission contributions as float64 [3, R, R]."""
    l = _unit_light(light_dir)
    n = stack.decoded_normals()
    a = stack.albedo.astype(np.float64)
    ao = stack.ao[:1].astype(np.float64)
    ndl = np.einsum("chw,c->hw", n, l)[None]
    half = l + np.array([0.0, 0.0, 1.0])
    half /= np.linalg.norm(half)
    ndh = np.maximum(0.0, np.einsum("chw,c->hw", n, half))[None]
    lit = (ndl > 0).astype(np.float64)
    spec = intensity * stack.specular[:1].astype(np.float64) * ndh**SPEC_EXPONENT * lit
    trans = (
        intensity
        * stack.translucency[:1].astype(np.float64)
        * np.maximum(0.0, -ndl)
        * np.array(TRANSMISSION_TINT)[:, None, None]
        * a
    )
    diffuse = a * ao * (ambient + intensity * np.maximum(0.0, ndl))
    return {"diffuse": diffuse, "specular": np.broadcast_to(spec, a.shape), "transmission": trans}


def rerender(stack: IntrinsicStack, light_dir, light_intensity: float, ambient: float) -> np.ndarray:
    """Lit RGB image [3, R, R] in [0, 1] from a pass stack."""
    t = shade_terms(stack, light_dir, light_intensity, ambient)
    return np.clip(t["diffuse"] + t["specular"] + t["transmission"], 0.0, 1.0).astype(np.float32)


def residual_diffuse(albedo: np.ndarray, normal01: np.ndarray, ao: np.ndarray) -> np.ndarray:
    n = 2.0 * normal01.astype(np.float64) - 1.0
    e = RESIDUAL_AMBIENT + RESIDUAL_INTENSITY * lambert(n, RESIDUAL_LIGHT_DIR)
    return np.clip(albedo.astype(np.float64) * ao[:1].astype(np.float64) * e[None], 0.0, 1.0)


def render_scene(spec: SceneSpec, res: int) -> tuple:
    """(input_rgb, IntrinsicStack) for ``spec`` at ``res`` x ``res``."""
    x, y = pixel_grid(res)
    h, hx, hy = height_field(spec, x, y)
    mask = face_mask(spec, x, y)
    n = normals_from_gradient(hx, hy)
    ao = ambient_occlusion(spec, x, y)
    alb = albedo_field(spec, x, y, h, mask)
    spec_c = np.clip(spec.specular_base + spec.specular_height * np.maximum(h, 0.0), 0.0, 1.0) * mask
    lum = alb.mean(axis=0)
    trans_c = np.clip(spec.translucency_base + 0.6 * (alb[0] - alb[2]) - 0.3 * (lum - 0.5), 0.0, 1.0) * mask

    f32 = lambda a: np.ascontiguousarray(a, dtype=np.float32)
    rep = lambda a: np.repeat(a[None], 3, axis=0)
    normal01 = f32((n + 1.0) / 2.0)
    ao3 = f32(rep(ao))
    albedo = f32(alb)
    stack = IntrinsicStack(
        albedo=albedo,
        normal=normal01,
        ao=ao3,
        specular=f32(rep(spec_c)),
        translucency=f32(rep(trans_c)),
        raw_diffuse=f32(residual_diffuse(albedo, normal01, ao3)),
        mask=f32(mask[None]),
    )
    image = rerender(stack, spec.light_dir, spec.light_intensity, spec.ambient)
    return image, stack


def generate(seed: int, res: int) -> tuple:
    """(input_rgb, IntrinsicStack, SceneSpec); deterministic per seed."""
    if not 8 <= res <= 1024:
        raise ValueError(f"resolution {res} outside [8, 1024]")
    spec = sample_scene(seed)
    image, stack = render_scene(spec, res)
    return image, stack, spec


def sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    dy: int = 0
    dx: int = 0
    brightness: float = 1.0
    saturation: float = 1.0


def sample_perturbation(rng: np.random.Generator, max_shift_px: int, photometric_frac: float) -> Perturbation:
    dy, dx = (int(v) for v in rng.integers(-max_shift_px, max_shift_px + 1, size=2))
    b, s = rng.uniform(1 - photometric_frac, 1 + photometric_frac, size=2)
    return Perturbation(dy, dx, float(b), float(s))


def apply_perturbation(image: np.ndarray, p: Perturbation) -> np.ndarray:
    """Integer translation with edge replication, then saturation and brightness scaling."""
    img = np.asarray(image)
    h, w = img.shape[-2:]
    rows = np.clip(np.arange(h) - p.dy, 0, h - 1)
    cols = np.clip(np.arange(w) - p.dx, 0, w - 1)
    out = img[..., rows[:, None], cols[None, :]].astype(np.float64)
    if p.saturation != 1.0 and out.shape[-3] == 3:
        gray = out.mean(axis=-3, keepdims=True)
        out = gray + p.saturation * (out - gray)
    if p.brightness != 1.0:
        out = out * p.brightness
    if p.saturation != 1.0 or p.brightness != 1.0:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(img.dtype)


def perturb(image: np.ndarray, max_shift_px: int, photometric_frac: float, rng: np.random.Generator) -> np.ndarray:
    res = image.shape[-1]
    if max_shift_px > res // 8:
        raise ValueError(f"max_shift_px {max_shift_px} exceeds R/8 = {res // 8}")
    return apply_perturbation(image, sample_perturbation(rng, max_shift_px, photometric_frac))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def dataset_split(num_samples: int, seed: int) -> tuple:
    """Disjoint (train, val, test) index arrays in 90/5/5 proportion.

    Validation and test take floor(5%) each; the remainder goes to train.
    """
    if num_samples < 20:
        raise ValueError(f"need at least 20 samples for a 90/5/5 split, got {num_samples}")
    perm = np.random.default_rng([seed, 7]).permutation(num_samples)
    k = num_samples * 5 // 100
    return np.sort(perm[2 * k :]), np.sort(perm[:k]), np.sort(perm[k : 2 * k])


@dataclass
class SampleSet:
    """Stacked arrays for a group of samples (float32, [N, C, R, R])."""

    inputs: np.ndarray
    albedo: np.ndarray
    passes: np.ndarray  # [N, 15, R, R] in translator order
    mask: np.ndarray
    specs: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.inputs[idx], self.albedo[idx], self.passes[idx], self.mask[idx], [self.specs[i] for i in idx])

    def stack(self, i: int) -> IntrinsicStack:
        p = self.passes[i]
        return IntrinsicStack(
            albedo=self.albedo[i],
            ao=p[0:3],
            normal=p[3:6],
            specular=p[6:9],
            translucency=p[9:12],
            raw_diffuse=p[12:15],
            mask=self.mask[i],
        )


TRANSLATOR_ORDER = ("ao", "normal", "specular", "translucency", "raw_diffuse")


def stack_to_passes(stack: IntrinsicStack) -> np.ndarray:
    return np.concatenate([getattr(stack, k) for k in TRANSLATOR_ORDER], axis=0)


def build_samples(seeds: Sequence[int], res: int) -> SampleSet:
    inputs, albedo, passes, masks, specs = [], [], [], [], []
    for s in seeds:
        img, st, spec = generate(s, res)
        inputs.append(img)
        albedo.append(st.albedo)
        passes.append(stack_to_passes(st))
        masks.append(st.mask)
        specs.append(spec)
    return SampleSet(np.stack(inputs), np.stack(albedo), np.stack(passes), np.stack(masks), specs)


def make_dataset(num_samples: int, res: int, master_seed: int) -> SampleSet:
    return build_samples([sample_seed(master_seed, i) for i in range(num_samples)], res)


def write_sample(directory: str, image: np.ndarray, stack: IntrinsicStack, spec: SceneSpec) -> None:
    os.makedirs(directory, exist_ok=True)
    save_ntf(os.path.join(directory, "input.ntf"), image)
    for name in PASS_FILES:
        save_ntf(os.path.join(directory, f"{name}.ntf"), getattr(stack, name))
    save_ntf(os.path.join(directory, "mask.ntf"), stack.mask)
    with open(os.path.join(directory, "spec.json"), "w") as fh:
        fh.write(spec.to_json())


def read_sample(directory: str) -> tuple:
    image = load_ntf(os.path.join(directory, "input.ntf"))
    arrays = {name: load_ntf(os.path.join(directory, f"{name}.ntf")) for name in PASS_FILES + ("mask",)}
    with open(os.path.join(directory, "spec.json")) as fh:
        spec = SceneSpec.from_json(fh.read())
    return image, IntrinsicStack(**arrays), spec


def sample_dirname(i: int) -> str:
    return f"sample_{i:05d}"


def write_dataset(out_dir: str, num_samples: int, res: int, master_seed: int) -> dict:
    """Write samples plus ``split.json``; returns the split dictionary."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(num_samples):
        img, st, spec = generate(sample_seed(master_seed, i), res)
        write_sample(os.path.join(out_dir, sample_dirname(i)), img, st, spec)
    train, val, test = dataset_split(num_samples, master_seed)
    split = {
        "master_seed": master_seed,
        "resolution": res,
        "num_samples": num_samples,
        "train": train.tolist(),
        "val": val.tolist(),
        "test": test.tolist(),
    }
    with open(os.path.join(out_dir, "split.json"), "w") as fh:
        json.dump(split, fh, indent=1)
    return split


def read_split(data_dir: str) -> dict:
    with open(os.path.join(data_dir, "split.json")) as fh:
        return json.load(fh)


def load_dataset(data_dir: str, indices: Optional[Sequence[int]] = None) -> SampleSet:
    split = read_split(data_dir)
    if indices is None:
        indices = range(split["num_samples"])
    inputs, albedo, passes, masks, specs = [], [], [], [], []
    for i in indices:
        img, st, spec = read_sample(os.path.join(data_dir, sample_dirname(i)))
        inputs.append(img)
        albedo.append(st.albedo)
        passes.append(stack_to_passes(st))
        masks.append(st.mask)
        specs.append(spec)
    return SampleSet(np.stack(inputs), np.stack(albedo), np.stack(passes), np.stack(masks), specs)


def with_light(spec: SceneSpec, light_dir) -> SceneSpec:
    return replace(spec, light_dir=tuple(float(v) for v in light_dir))
