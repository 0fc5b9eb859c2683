"""Two-phase optimisation: Stage I-II (albedo network + refinement) under
the four-term loss, then Stage III adversarial training of the pass
translator with Stages I-II frozen.

All randomness derives from ``TrainConfig.master_seed`` through
position-keyed generators (epoch for data order, step for patch sampling),
so a run resumed from a checkpoint replays exactly the same stream.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .losses import LossWeights, feature_perceptual, masked_mse, total_loss
from .model import ConfigError, ModelConfig, init_maginet, maginet_forward
from .params import ParamStore, load_checkpoint, save_checkpoint
from .synthetic import IntrinsicStack, SampleSet
from .translator import (
    TranslatorConfig,
    gan_losses,
    generate_passes,
    init_discriminator,
    init_generator,
    init_refine,
    refine,
    renormalize_normals,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or update turns non-finite; carries the last good params."""

    def __init__(self, message: str, last_good: Optional[ParamStore] = None, step: int = 0):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 5e-5
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_stage12: int = 60
    epochs_stage3: int = 30
    batch_size: int = 2
    restart_period_epochs: int = 0  # 0: a single period spanning the run
    master_seed: int = 0
    lr_stage3: Optional[float] = None
    fm_weight: float = 10.0
    perceptual_weight: float = 10.0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not self.lr_min < self.lr_init:
            raise ConfigError("lr_min must be below lr_init")
        if min(self.epochs_stage12, self.epochs_stage3, self.batch_size) < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        """Desk-scale defaults (R=64 working resolution, minutes on a CPU)."""
        base = dict(lr_init=2e-3, lr_min=1e-5, epochs_stage12=5, epochs_stage3=5, batch_size=2, lr_stage3=1e-3)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers per parameter name plus the step count."""

    def __init__(self, params: ParamStore):
        self.m = OrderedDict((n, np.zeros_like(t.data)) for n, t in params.items())
        self.v = OrderedDict((n, np.zeros_like(t.data)) for n, t in params.items())
        self.step = 0

    def to_entries(self, prefix: str) -> OrderedDict:
        out = OrderedDict()
        out[f"{prefix}/step"] = np.array(self.step, dtype=np.float32)
        for n in self.m:
            out[f"{prefix}/m/{n}"] = self.m[n]
            out[f"{prefix}/v/{n}"] = self.v[n]
        return out

    def load_entries(self, entries, prefix: str) -> None:
        self.step = int(entries[f"{prefix}/step"])
        for n in self.m:
            self.m[n] = np.array(entries[f"{prefix}/m/{n}"], dtype=np.float32)
            self.v[n] = np.array(entries[f"{prefix}/v/{n}"], dtype=np.float32)


def adam_step(params: ParamStore, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Bias-corrected Adam update using each parameter's ``.grad``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    missing = [n for n, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, t in params.items():
        g = t.grad.astype(np.float32, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= np.float32(beta1)
        m += np.float32(1 - beta1) * g
        v *= np.float32(beta2)
        v += np.float32(1 - beta2) * (g * g)
        update = (m / np.float32(c1)) / (np.sqrt(v / np.float32(c2)) + np.float32(eps))
        new = t.data - np.float32(lr) * update
        # an overflowing second moment silently zeroes the step, so check it too
        if not (np.isfinite(new).all() and np.isfinite(v).all()):
            raise T.NonFiniteError(f"adam_step: non-finite update or moment for {name}")
        t.data = new.astype(np.float32, copy=False)
    params.step_count = state.step


def cosine_restart_lr(step: int, steps_per_period: int, lr_init: float, lr_min: float) -> float:
    if steps_per_period < 1:
        raise ValueError("steps_per_period must be >= 1")
    t = step % steps_per_period
    return lr_min + 0.5 * (lr_init - lr_min) * (1 + math.cos(math.pi * t / steps_per_period))


# ---------------------------------------------------------------------------
# pipeline (inference + checkpoint)
# ---------------------------------------------------------------------------


@dataclass
class Pipeline:
    model_config: ModelConfig
    params: ParamStore  # maginet/* and refine/*
    norm_mean: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, np.float32))
    norm_std: np.ndarray = field(default_factory=lambda: np.full(3, 0.25, np.float32))
    translator_config: Optional[TranslatorConfig] = None
    gen_params: Optional[ParamStore] = None
    disc_params: Optional[ParamStore] = None
    oracle: Optional[tuple] = None  # (seed, res) debug bypass

    @classmethod
    def create(cls, model_config: ModelConfig, seed: int = 0) -> "Pipeline":
        params = init_maginet(model_config, seed)
        params.update(init_refine(model_config.refine_channels, seed))
        return cls(model_config, params)

    @property
    def image_res(self) -> int:
        return self.model_config.output_res

    def check_input(self, images: np.ndarray) -> None:
        if images.shape[-1] != self.image_res or images.shape[-2] != self.image_res:
            raise ConfigError(
                f"input is {images.shape[-2]}x{images.shape[-1]}; checkpoint expects {self.image_res}px images"
            )

    def preprocess(self, images: np.ndarray) -> T.Tensor:
        """Downsample full-res [0, 1] images to the working resolution and standardise."""
        self.check_input(images)
        r = self.model_config.input_res
        with T.no_grad():
            x = T.bilinear_resize(T.Tensor(images), r, r).data
        x = (x - self.norm_mean[None, :, None, None]) / self.norm_std[None, :, None, None]
        return T.Tensor(x)

    def albedo(self, images: np.ndarray, probe: Optional[dict] = None) -> T.Tensor:
        """Refined albedo in [-1, 1] at full resolution (graph recorded)."""
        a_hat = maginet_forward(self.preprocess(images), self.model_config, self.params, probe=probe)
        return refine(a_hat, self.params)

    def passes(self, albedo_ref: T.Tensor) -> T.Tensor:
        if self.gen_params is None:
            raise ConfigError("checkpoint has no Stage III generator")
        return generate_passes(albedo_ref, self.translator_config, self.gen_params)

    def decompose(self, image: np.ndarray) -> IntrinsicStack:
        """Six predicted passes in [0, 1] for one [3, H, W] image."""
        if self.oracle is not None:
            from .synthetic import generate

            return generate(int(self.oracle[0]), int(self.oracle[1]))[1]
        with T.no_grad():
            a = self.albedo(np.asarray(image, np.float32)[None])
            p = self.passes(a).data[0].astype(np.float64) if self.gen_params is not None else None
        to01 = lambda x: np.clip((np.asarray(x, np.float64) + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)
        albedo = to01(a.data[0])
        res = albedo.shape[-1]
        if p is None:
            grey = np.full((3, res, res), 0.5, np.float32)
            flat_n = np.zeros((3, res, res), np.float32)
            flat_n[2] = 1.0
            p = np.concatenate([grey * 2 - 1, flat_n, grey * 2 - 1, grey * 2 - 1, grey * 2 - 1])
        normal = renormalize_normals(p[3:6], axis=0)
        return IntrinsicStack(
            albedo=albedo,
            ao=to01(p[0:3]),
            normal=((normal.astype(np.float64) + 1.0) / 2.0).astype(np.float32),
            specular=to01(p[6:9]),
            translucency=to01(p[9:12]),
            raw_diffuse=to01(p[12:15]),
            mask=np.ones((1, res, res), np.float32),
        )

    # -- serialisation ------------------------------------------------------
    def to_entries(self) -> OrderedDict:
        out = OrderedDict()
        for k, v in self.model_config.to_dict().items():
            out[f"config/model/{k}"] = np.array(v, dtype=np.float32)
        if self.translator_config is not None:
            for k, v in self.translator_config.to_dict().items():
                out[f"config/translator/{k}"] = np.array(v, dtype=np.float32)
        out["norm/mean"] = self.norm_mean.astype(np.float32)
        out["norm/std"] = self.norm_std.astype(np.float32)
        if self.oracle is not None:
            out["debug/oracle"] = np.array(self.oracle, dtype=np.float32)
        for store in (self.params, self.gen_params, self.disc_params):
            if store is not None:
                out.update(store.to_arrays())
        return out

    @classmethod
    def from_entries(cls, entries) -> "Pipeline":
        mc = model_config_from_entries(entries)
        params = ParamStore(OrderedDict((k, v) for k, v in entries.items() if k.startswith(("maginet/", "refine/"))))
        expected = init_maginet(mc)
        expected.update(init_refine(mc.refine_channels))
        _check_param_shapes(expected, params)
        tc = translator_config_from_entries(entries)
        gen = disc = None
        if tc is not None:
            gen = ParamStore(OrderedDict((k, v) for k, v in entries.items() if k.startswith("gen/")))
            disc_items = OrderedDict((k, v) for k, v in entries.items() if k.startswith("disc/"))
            disc = ParamStore(disc_items) if disc_items else None
            if len(gen):
                _check_param_shapes(init_generator(tc), gen)
            else:
                gen = None
        oracle = tuple(int(v) for v in entries["debug/oracle"]) if "debug/oracle" in entries else None
        return cls(mc, params, entries["norm/mean"], entries["norm/std"], tc, gen, disc, oracle)

    def save(self, path, extra: Optional[dict] = None) -> None:
        entries = self.to_entries()
        if extra:
            entries.update(extra)
        save_checkpoint(path, entries)

    @classmethod
    def load(cls, path) -> "Pipeline":
        return cls.from_entries(load_checkpoint(path))


def _check_param_shapes(expected: ParamStore, got: ParamStore) -> None:
    diffs = []
    for n, t in expected.items():
        if n not in got:
            diffs.append(f"missing {n}")
        elif got[n].shape != t.shape:
            diffs.append(f"{n}: {got[n].shape} != {t.shape}")
    extra = [n for n in got if n not in expected]
    diffs += [f"unexpected {n}" for n in extra]
    if diffs:
        raise ConfigError("checkpoint parameters do not match config: " + "; ".join(diffs[:5]))


def _config_from_entries(entries, prefix: str) -> dict:
    d = {}
    for k, v in entries.items():
        if k.startswith(prefix):
            key = k[len(prefix) :]
            d[key] = [int(x) for x in v.reshape(-1)] if v.ndim else (int(v) if float(v).is_integer() else float(v))
    return d


def model_config_from_entries(entries) -> ModelConfig:
    d = _config_from_entries(entries, "config/model/")
    if not d:
        raise ConfigError("checkpoint carries no model config header")
    d["enc_channels"] = tuple(d["enc_channels"]) if isinstance(d["enc_channels"], list) else (d["enc_channels"],)
    return ModelConfig.from_dict(d)


def translator_config_from_entries(entries) -> Optional[TranslatorConfig]:
    d = _config_from_entries(entries, "config/translator/")
    return TranslatorConfig.from_dict(d) if d else None


def config_diff(a: dict, b: dict) -> list:
    keys = sorted(set(a) | set(b))
    return [f"{k}: {a.get(k)!r} != {b.get(k)!r}" for k in keys if a.get(k) != b.get(k)]


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def to_pm1(x: np.ndarray) -> np.ndarray:
    return (2.0 * np.asarray(x, np.float32) - 1.0).astype(np.float32)


def channel_stats(images: np.ndarray) -> tuple:
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(np.float32), np.maximum(std, 1e-3).astype(np.float32)


def batch_indices(n: int, batch: int, step: int, seed: int) -> np.ndarray:
    spe = max(1, n // batch)
    epoch, k = divmod(step, spe)
    order = np.random.default_rng([seed, 100, epoch]).permutation(n)
    return np.sort(order[k * batch : (k + 1) * batch])


@dataclass
class TrainResult:
    pipeline: Pipeline  # best-validation parameters
    final: ParamStore  # parameters after the last step
    history: list
    best_val: float
    optimizer: Optional[AdamState] = None
    steps_done: int = 0


def _emit(logfile, record: dict) -> None:
    if logfile is not None:
        logfile.write(json.dumps(record, sort_keys=True) + "\n")
        logfile.flush()


def validate_stage12(pipe: Pipeline, val: SampleSet, batch: int = 4) -> float:
    """Mean masked MSE of the refined albedo in [0, 1] units."""
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(val), batch):
            sl = slice(i, i + batch)
            a = pipe.albedo(val.inputs[sl])
            pred01 = (a.data + 1.0) / 2.0
            n = pred01.shape[0]
            for j in range(n):
                m = val.mask[sl][j]
                diff = (pred01[j].astype(np.float64) - val.albedo[sl][j]) * m
                total += float(np.sum(diff**2) / (m.sum() * 3 + 1e-6))
                count += 1
    return total / max(count, 1)


def train_stage12(
    train: SampleSet,
    val: SampleSet,
    model_config: ModelConfig,
    cfg: TrainConfig,
    logfile=None,
    resume: Optional[dict] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[dict], None]] = None,
    checkpoint_path=None,
) -> TrainResult:
    """Optimise albedo network + refinement jointly under the four-term loss.

    ``resume`` is a checkpoint entry dict written by :func:`stage12_checkpoint`;
    ``stop_after`` ends the run early after that many total steps. With
    ``checkpoint_path`` a resumable checkpoint is written at every epoch end,
    so a diverged run leaves the last good one on disk.
    """
    if train.inputs.shape[-1] != model_config.output_res:
        raise ConfigError(
            f"data resolution {train.inputs.shape[-1]} != 2 x input_res ({model_config.output_res})"
        )
    n = len(train)
    if n < cfg.batch_size:
        raise ValueError("training set smaller than one batch")
    spe = n // cfg.batch_size
    total_steps = cfg.epochs_stage12 * spe
    period = cfg.restart_period_epochs * spe if cfg.restart_period_epochs else total_steps

    pipe = Pipeline.create(model_config, cfg.master_seed)
    pipe.norm_mean, pipe.norm_std = channel_stats(train.inputs)
    state = AdamState(pipe.params)
    best_val, best_params = math.inf, None
    start = 0
    if resume is not None:
        if "train/step" not in resume:
            raise ConfigError("checkpoint has no resumable training state")
        pipe.params.load_arrays(OrderedDict((k[len("resume/") :], v) for k, v in resume.items() if k.startswith("resume/")))
        pipe.norm_mean, pipe.norm_std = resume["norm/mean"], resume["norm/std"]
        state.load_entries(resume, "optim/stage12")
        start = int(resume["train/step"])
        best_val = unpack_f64(resume["train/best_val"])
        if math.isfinite(best_val):
            best_params = ParamStore(OrderedDict((k, v) for k, v in resume.items() if k.startswith(("maginet/", "refine/"))))
    end = total_steps if stop_after is None else min(total_steps, stop_after)

    albedo_pm1 = to_pm1(train.albedo)
    history = []
    last_good = pipe.params.copy()
    t0 = time.perf_counter()
    for step in range(start, end):
        idx = batch_indices(n, cfg.batch_size, step, cfg.master_seed)
        lr = cosine_restart_lr(step, period, cfg.lr_init, cfg.lr_min)
        rng = np.random.default_rng([cfg.master_seed, 200, step])
        probe: dict = {}
        try:
            pred = pipe.albedo(train.inputs[idx], probe=probe)
            loss, terms = total_loss(pred, albedo_pm1[idx], train.mask[idx], cfg.loss_weights, rng)
            pipe.params.zero_grad()
            T.backward(loss)
            adam_step(pipe.params, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        except T.NonFiniteError as exc:
            pipe.params.load_arrays(last_good.to_arrays())
            raise TrainingDiverged(f"stage 1-2 diverged at step {step}: {exc}", last_good, step) from exc
        if step % 25 == 0 or step == end - 1:
            last_good = pipe.params.copy()
        rec = {
            "stage": "12",
            "step": step + 1,
            "epoch": step // spe,
            "lr": lr,
            "total": float(loss.data),
            **terms,
            "gate_min": float(probe["gates"].min()),
            "gate_max": float(probe["gates"].max()),
            "attn_c_min": float(probe["channel_attention"].min()),
            "attn_c_max": float(probe["channel_attention"].max()),
            "attn_s_min": float(probe["spatial_attention"].min()),
            "attn_s_max": float(probe["spatial_attention"].max()),
            "wall": round(time.perf_counter() - t0, 3),
        }
        if (step + 1) % spe == 0:
            rec["val_mse"] = validate_stage12(pipe, val) if len(val) else float(terms["mse"])
            if rec["val_mse"] < best_val:
                best_val, best_params = rec["val_mse"], pipe.params.copy()
            if checkpoint_path is not None:
                snap = TrainResult(
                    Pipeline(model_config, best_params, pipe.norm_mean, pipe.norm_std), pipe.params, [], best_val, state, step + 1
                )
                save_checkpoint(checkpoint_path, stage12_checkpoint(snap))
        history.append(rec)
        _emit(logfile, rec)
        if on_step is not None:
            on_step(rec)

    best = Pipeline(model_config, best_params or pipe.params.copy(), pipe.norm_mean, pipe.norm_std)
    return TrainResult(best, pipe.params, history, best_val, state, end)


def pack_f64(value: float) -> np.ndarray:
    """Carry a float64 through the float32-only tensor format bit-exactly."""
    return np.frombuffer(np.float64(value).tobytes(), dtype=np.float32).copy()


def unpack_f64(arr: np.ndarray) -> float:
    return float(np.frombuffer(np.asarray(arr, dtype=np.float32).tobytes(), dtype=np.float64)[0])


def stage12_checkpoint(result: TrainResult) -> OrderedDict:
    """Checkpoint entries: best-validation pipeline at the top level (what
    inference loads) plus the current parameters, optimiser moments and
    step counter under ``resume/``, ``optim/`` and ``train/``.
    """
    entries = result.pipeline.to_entries()
    for k, v in result.final.to_arrays().items():
        entries[f"resume/{k}"] = v
    entries.update(result.optimizer.to_entries("optim/stage12"))
    entries["train/step"] = np.array(result.steps_done, dtype=np.float32)
    entries["train/best_val"] = pack_f64(result.best_val)
    return entries


def precompute_albedo(pipe: Pipeline, images: np.ndarray, batch: int = 8) -> np.ndarray:
    """Frozen Stage I-II output in [-1, 1] for every image."""
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch):
            out.append(pipe.albedo(images[i : i + batch]).data)
    return np.concatenate(out).astype(np.float32)


def generator_objective(fake: T.Tensor, real: np.ndarray, cond: np.ndarray, tcfg, disc, cfg: TrainConfig):
    """(total generator loss, discriminator loss, term dict)."""
    losses = gan_losses(T.Tensor(real), fake, T.Tensor(cond), tcfg, disc)
    n, c, h, w = fake.shape
    perc = feature_perceptual(fake.reshape(n * 5, 3, h, w), T.Tensor(real.reshape(n * 5, 3, h, w)))
    g_total = losses.g_adv + losses.fm * cfg.fm_weight + perc * cfg.perceptual_weight
    terms = {
        "g_adv": float(losses.g_adv.data),
        "d": float(losses.d.data),
        "fm": float(losses.fm.data),
        "perceptual": float(perc.data),
    }
    return g_total, losses.d, terms


def train_stage3(
    train: SampleSet,
    val: SampleSet,
    pipe: Pipeline,
    tcfg: TranslatorConfig,
    cfg: TrainConfig,
    logfile=None,
    on_step: Optional[Callable[[dict], None]] = None,
    checkpoint_path=None,
) -> TrainResult:
    """Alternate discriminator and generator updates on the frozen albedo.

    ``pipe`` is only read: its parameters never enter an optimiser.
    """
    n = len(train)
    spe = n // cfg.batch_size
    total_steps = cfg.epochs_stage3 * spe
    period = cfg.restart_period_epochs * spe if cfg.restart_period_epochs else total_steps
    lr0 = cfg.lr_stage3 if cfg.lr_stage3 is not None else cfg.lr_init
    lr_min = min(cfg.lr_min, lr0 / 10)

    cond_all = precompute_albedo(pipe, train.inputs)
    real_all = to_pm1(train.passes)
    val_cond = precompute_albedo(pipe, val.inputs) if len(val) else None
    val_real = to_pm1(val.passes) if len(val) else None

    gen = init_generator(tcfg, cfg.master_seed)
    disc = init_discriminator(tcfg, cfg.master_seed)
    g_state, d_state = AdamState(gen), AdamState(disc)
    history = []
    best_val, best_gen = math.inf, None
    t0 = time.perf_counter()
    for step in range(total_steps):
        idx = batch_indices(n, cfg.batch_size, step, cfg.master_seed + 1)
        lr = cosine_restart_lr(step, period, lr0, lr_min)
        cond, real = cond_all[idx], real_all[idx]
        try:
            fake = generate_passes(T.Tensor(cond), tcfg, gen)
            g_total, d_loss, terms = generator_objective(fake, real, cond, tcfg, disc, cfg)
            disc.zero_grad()
            T.backward(d_loss)
            adam_step(disc, d_state, lr, 0.5, cfg.beta2, cfg.adam_eps)
            gen.zero_grad()
            T.backward(g_total)
            adam_step(gen, g_state, lr, 0.5, cfg.beta2, cfg.adam_eps)
        except T.NonFiniteError as exc:
            raise TrainingDiverged(f"stage 3 diverged at step {step}: {exc}", None, step) from exc
        rec = {"stage": "3", "step": step + 1, "epoch": step // spe, "lr": lr, **terms}
        rec["wall"] = round(time.perf_counter() - t0, 3)
        if (step + 1) % spe == 0:
            rec["val_g"] = _validate_stage3(gen, disc, tcfg, cfg, val_cond, val_real) if val_cond is not None else terms["fm"]
            if rec["val_g"] < best_val:
                best_val, best_gen = rec["val_g"], gen.copy()
            if checkpoint_path is not None:
                replace(pipe, translator_config=tcfg, gen_params=best_gen, disc_params=disc).save(checkpoint_path)
        history.append(rec)
        _emit(logfile, rec)
        if on_step is not None:
            on_step(rec)

    out = replace(pipe, translator_config=tcfg, gen_params=best_gen or gen.copy(), disc_params=disc.copy())
    return TrainResult(out, gen, history, best_val, g_state, total_steps)


def _validate_stage3(gen, disc, tcfg, cfg, cond_all, real_all, batch: int = 4) -> float:
    """Mean generator feature-matching + perceptual loss on the validation split."""
    vals = []
    with T.no_grad():
        for i in range(0, len(cond_all), batch):
            cond, real = cond_all[i : i + batch], real_all[i : i + batch]
            fake = generate_passes(T.Tensor(cond), tcfg, gen)
            _, _, terms = generator_objective(fake, real, cond, tcfg, disc, cfg)
            vals.append(terms["fm"] + terms["perceptual"])
    return float(np.mean(vals))
