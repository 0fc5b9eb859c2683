"""Stage I albedo network: residual encoder, dual-attention bottleneck and
gated-skip decoder with a tanh RGB head.

Parameters live in a flat :class:`~maginet.params.ParamStore` under the
``maginet/`` prefix; every function here is a pure function of its inputs
and that store.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import Tensor

PAPER_WIDTHS = (64, 128, 256, 256, 384, 512)
PAPER_BOTTLENECK = 512
PAPER_RES = 512


class ConfigError(ValueError):
    pass


def scale_width(width: int, scale_div: int) -> int:
    return max(4, -(-width // scale_div))


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 6
    enc_channels: tuple = PAPER_WIDTHS
    bottleneck_channels: int = PAPER_BOTTLENECK
    scale_div: int = 1
    attn_reduction: int = 8
    input_res: int = PAPER_RES
    refine_channels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        self.validate()

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def scaled(cls, scale_div: int, levels: int = 6, input_res: Optional[int] = None) -> "ModelConfig":
        """Paper widths divided by ``scale_div`` (ceil, floor of 4), truncated to ``levels``."""
        if not 2 <= levels <= len(PAPER_WIDTHS):
            raise ConfigError(f"levels must be in [2, {len(PAPER_WIDTHS)}], got {levels}")
        widths = [scale_width(w, scale_div) for w in PAPER_WIDTHS[:levels]]
        full = PAPER_WIDTHS + (PAPER_BOTTLENECK,)
        bottleneck = scale_width(full[levels], scale_div)
        res = input_res if input_res is not None else PAPER_RES // scale_div
        return cls(
            levels=levels,
            enc_channels=tuple(widths),
            bottleneck_channels=bottleneck,
            scale_div=scale_div,
            input_res=res,
            refine_channels=scale_width(64, scale_div),
        )

    def validate(self) -> None:
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if len(self.enc_channels) != self.levels:
            raise ConfigError(f"enc_channels has {len(self.enc_channels)} widths for {self.levels} levels")
        if min(self.enc_channels) < 1 or self.bottleneck_channels < 1 or self.refine_channels < 1:
            raise ConfigError("channel widths must be >= 1")
        if self.scale_div < 1 or self.attn_reduction < 1:
            raise ConfigError("scale_div and attn_reduction must be >= 1")
        if self.input_res % (2**self.levels):
            raise ConfigError(f"input_res {self.input_res} not divisible by 2^{self.levels}")
        if self.input_res // 2**self.levels < 2:
            raise ConfigError(
                f"bottleneck would be {self.input_res // 2**self.levels}px; need >= 2 (reduce levels)"
            )

    @property
    def output_res(self) -> int:
        return 2 * self.input_res

    @property
    def attn_hidden(self) -> int:
        return max(1, -(-self.bottleneck_channels // self.attn_reduction))

    def decoder_channels(self) -> list:
        """Output width of decoder level l (D_l), l = 0..levels-1."""
        w = self.enc_channels
        return [w[0]] + [w[l - 1] for l in range(1, self.levels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def kaiming(rng, shape: tuple, gain: float = 2.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * math.sqrt(gain / fan_in)).astype(np.float32, copy=False)


def add_conv(store: ParamStore, rng, name: str, cin: int, cout: int, k: int, gain: float = 2.0) -> None:
    store.add(f"{name}.weight", kaiming(rng, (cout, cin, k, k), gain))
    store.add(f"{name}.bias", np.zeros(cout, dtype=np.float32))


RESIDUAL_GAIN = 0.02


def init_maginet(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Kaiming-normal conv/linear weights, zero biases, gates raw = 0."""
    p = ParamStore()
    _build_maginet(config, p, np.random.default_rng([seed, 1]))
    return p


def _build_maginet(config: ModelConfig, p: ParamStore, rng) -> None:
    w = config.enc_channels
    add_conv(p, rng, "maginet/stem", 3, w[0], 1)
    for l in range(config.levels):
        for i in range(3):
            # damped last branch conv keeps activation scale flat without normalisation
            add_conv(p, rng, f"maginet/enc{l}/res{i}", w[l], w[l], 3, RESIDUAL_GAIN if i == 2 else 2.0)
        nxt = w[l + 1] if l + 1 < config.levels else config.bottleneck_channels
        add_conv(p, rng, f"maginet/enc{l}/down", w[l], nxt, 3, gain=1.0)
    c, hdim = config.bottleneck_channels, config.attn_hidden
    p.add("maginet/attn/fc1.weight", kaiming(rng, (hdim, c)))
    p.add("maginet/attn/fc1.bias", np.zeros(hdim, dtype=np.float32))
    p.add("maginet/attn/fc2.weight", kaiming(rng, (c, hdim)))
    p.add("maginet/attn/fc2.bias", np.zeros(c, dtype=np.float32))
    add_conv(p, rng, "maginet/attn/spatial", 2, 1, 1)
    p.add("maginet/gates.raw", np.zeros(config.levels, dtype=np.float32))
    dec = config.decoder_channels()
    below = config.bottleneck_channels
    for l in reversed(range(config.levels)):
        add_conv(p, rng, f"maginet/dec{l}", below + w[l], dec[l], 3)
        below = dec[l]
    add_conv(p, rng, "maginet/head", dec[0], 3, 1)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def conv(x: Tensor, params: ParamStore, name: str, stride: int = 1) -> Tensor:
    w = params[f"{name}.weight"]
    k = w.shape[-1]
    return T.conv2d(x, w, params[f"{name}.bias"], stride=stride, pad=(k - 1) // 2)


def residual_block(x: Tensor, params: ParamStore, name: str) -> Tensor:
    """``x + F(x)`` with F three pre-activation 3x3 convolutions."""
    cw = params[f"{name}/res0.weight"].shape[1]
    if x.shape[1] != cw:
        raise T.ShapeError(f"{name}: input has {x.shape[1]} channels, block expects {cw}")
    h = x
    for i in range(3):
        h = conv(T.relu(h), params, f"{name}/res{i}")
    return x + h


def encode(image: Tensor, config: ModelConfig, params: ParamStore, trace: Optional[list] = None):
    """Return the bottleneck tensor and the per-level skip features E_0..E_{L-1}."""
    n, c, h, w = image.shape
    if h != config.input_res or w != config.input_res:
        raise T.ShapeError(f"encode: expected {config.input_res}px input, got {h}x{w}")
    if c != 3:
        raise T.ShapeError(f"encode: expected 3 channels, got {c}")
    x = conv(image, params, "maginet/stem")
    skips = []
    for l in range(config.levels):
        cin, res = x.shape[1], x.shape[-1]
        x = residual_block(x, params, f"maginet/enc{l}")
        _trace(trace, "enc", l, "ResBlock", cin, x.shape[1], res, x.shape[-1])
        skips.append(x)
        cin, res = x.shape[1], x.shape[-1]
        x = conv(x, params, f"maginet/enc{l}/down", stride=2)
        _trace(trace, "enc", l, "DownConv", cin, x.shape[1], res, x.shape[-1])
    return x, skips


def channel_attention(x: Tensor, w1: Tensor, b1: Optional[Tensor], w2: Tensor, b2: Optional[Tensor]) -> Tensor:
    """Per-channel mask sigma(W2 relu(W1 GP(x))) shaped [N, C, 1, 1]."""
    n, c = x.shape[:2]
    if w1.shape[1] != c or w2.shape[0] != c:
        raise T.ShapeError(f"channel_attention: MLP {w1.shape}/{w2.shape} does not fit {c} channels")
    gp = T.pool_stats(x, "global_avg")
    h = gp @ _transpose(w1)
    if b1 is not None:
        h = h + b1
    h = T.relu(h) @ _transpose(w2)
    if b2 is not None:
        h = h + b2
    return T.sigmoid(h).reshape(n, c, 1, 1)


def _transpose(w: Tensor) -> Tensor:
    data = w.data.T.copy()
    return T._make(data, (w,), lambda g: (g.T,), "transpose")


def spatial_attention(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    """Per-pixel mask sigma(conv1x1([mean_c(x); max_c(x)])) shaped [N, 1, H, W]."""
    stats = T.concat([T.pool_stats(x, "channel_avg"), T.pool_stats(x, "channel_max")], axis=1)
    return T.sigmoid(T.conv2d(stats, weight, bias))


def bottleneck_modulate(x: Tensor, a_c: Tensor, a_s: Tensor) -> Tensor:
    return x * a_c * a_s


def gate_values(params: ParamStore) -> np.ndarray:
    raw = params["maginet/gates.raw"].data
    return T._sigmoid_np(raw.astype(np.float64))


def gated_fusion(d_up: Tensor, skip: Tensor, gate: Tensor, params: ParamStore, name: str) -> Tensor:
    """conv3x3([d_up ; gate * skip]); ``gate`` is a scalar tensor in (0, 1)."""
    if d_up.shape[-2:] != skip.shape[-2:] or d_up.shape[0] != skip.shape[0]:
        raise T.ShapeError(f"{name}: decoder {d_up.shape} and skip {skip.shape} disagree spatially")
    return conv(T.concat([d_up, skip * gate], axis=1), params, name)


def maginet_forward(
    image: Tensor,
    config: ModelConfig,
    params: ParamStore,
    trace: Optional[list] = None,
    probe: Optional[dict] = None,
) -> Tensor:
    """Albedo estimate in (-1, 1) at ``config.input_res``.

    ``probe`` (if given) receives the attention masks and gate values so
    callers can monitor them during training.
    """
    try:
        x, skips = encode(image, config, params, trace)
        a_c = channel_attention(
            x,
            params["maginet/attn/fc1.weight"],
            params["maginet/attn/fc1.bias"],
            params["maginet/attn/fc2.weight"],
            params["maginet/attn/fc2.bias"],
        )
        a_s = spatial_attention(x, params["maginet/attn/spatial.weight"], params["maginet/attn/spatial.bias"])
        d = bottleneck_modulate(x, a_c, a_s)
        res = x.shape[-1]
        _trace(trace, "attn", None, "Spatial Attn 1x1", x.shape[1], 1, res, res)
        _trace(trace, "attn", None, "Channel Attn FC", x.shape[1], x.shape[1], 1, 1)
        _trace(trace, "attn", None, "Modulation x", x.shape[1], x.shape[1], res, res)
        gates = T.sigmoid(params["maginet/gates.raw"])
        for l in reversed(range(config.levels)):
            res = d.shape[-1]
            up = T.bilinear_resize(d, 2 * res, 2 * res)
            _trace(trace, "dec", l, "Upsample", None, None, res, 2 * res)
            cin = up.shape[1]
            d = T.relu(gated_fusion(up, skips[l], gates[l], params, f"maginet/dec{l}"))
            _trace(trace, "dec", l, "Conv 3x3", cin, d.shape[1], 2 * res, 2 * res, skip=skips[l].shape[1])
        out = T.tanh(conv(d, params, "maginet/head"))
        _trace(trace, "out", None, "Conv 1x1+Tanh", d.shape[1], 3, d.shape[-1], d.shape[-1])
    except T.TensorError as exc:
        raise type(exc)(f"maginet_forward: {exc}") from exc
    if probe is not None:
        probe["channel_attention"] = a_c.data
        probe["spatial_attention"] = a_s.data
        probe["gates"] = gates.data
    return out


def _trace(trace, stage, level, op, cin, cout, rin, rout, skip=None):
    if trace is not None:
        trace.append(
            dict(stage=stage, level=level, op=op, cin=cin, cout=cout, res_in=rin, res_out=rout, skip=skip)
        )


# ---------------------------------------------------------------------------
# analysis helpers
# ---------------------------------------------------------------------------


def encoder_layers(config: ModelConfig, stem_kernel: int = 1) -> list:
    """(kernel, stride) for every encoder conv in forward order."""
    layers = [(stem_kernel, 1)]
    for _ in range(config.levels):
        layers += [(3, 1)] * 3 + [(3, 2)]
    return layers


def receptive_field_of(layers) -> int:
    r, j = 1, 1
    for k, s in layers:
        r += (k - 1) * j
        j *= s
    return r


def receptive_field(config: ModelConfig) -> int:
    """Side length (px) of the input region seen by one bottleneck activation."""
    return receptive_field_of(encoder_layers(config))


def shape_trace(config: ModelConfig, params: Optional[ParamStore] = None) -> list:
    """Layer-by-layer shape trace without running the network.

    Channel counts are read from the constructed parameter tensors when
    ``params`` is given, so the trace reflects what was actually built;
    resolutions follow from the stride/upsample schedule. At toy scale the
    result is identical to the trace recorded by a real forward pass.
    """
    if params is None:
        params = init_maginet(config)

    def io(name):
        w = params[f"{name}.weight"]
        return w.shape[1], w.shape[0]

    trace: list = []
    res = config.input_res
    for l in range(config.levels):
        cin, cout = io(f"maginet/enc{l}/res0")
        _trace(trace, "enc", l, "ResBlock", cin, cout, res, res)
        cin, cout = io(f"maginet/enc{l}/down")
        _trace(trace, "enc", l, "DownConv", cin, cout, res, res // 2)
        res //= 2
    c = params["maginet/attn/fc2.weight"].shape[0]
    _trace(trace, "attn", None, "Spatial Attn 1x1", c, io("maginet/attn/spatial")[1], res, res)
    _trace(trace, "attn", None, "Channel Attn FC", c, c, 1, 1)
    _trace(trace, "attn", None, "Modulation x", c, c, res, res)
    below = c
    for l in reversed(range(config.levels)):
        _trace(trace, "dec", l, "Upsample", None, None, res, 2 * res)
        res *= 2
        cin, cout = io(f"maginet/dec{l}")
        skip = cin - below
        _trace(trace, "dec", l, "Conv 3x3", below, cout, res, res, skip=skip)
        below = cout
    cin, cout = io("maginet/head")
    _trace(trace, "out", None, "Conv 1x1+Tanh", cin, cout, res, res)
    return trace


def format_trace(trace: list) -> str:
    rows = []
    for r in trace:
        label = {"enc": f"E{r['level']}", "dec": f"D{r['level']}", "attn": "Attn", "out": "Out", "ref": "Ref.", "p2h": "P2H"}[
            r["stage"]
        ]
        ch = "-" if r["cin"] is None else f"{r['cin']}->{r['cout']}"
        if r.get("skip"):
            ch += f" (+{r['skip']} skip)"
        rows.append(f"{label:<5} {r['op']:<18} {ch:<22} {r['res_in']}->{r['res_out']}")
    return "\n".join(rows)
