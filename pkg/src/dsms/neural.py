"""Trainable components: noise and transient encoders, FiLM MLPs, and the dilated causal TCN."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffcore import ops
from .diffcore.checkpoint import load_checkpoint, save_checkpoint
from .diffcore.tensor import Tensor, as_tensor

CONFIG_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    """SoundStream-style encoder: input conv, strided blocks of three dilated residual units, output conv."""

    base_channels: int = 32
    strides: tuple = (2, 4, 4, 4)
    output_channels: int = 128
    kernel_size: int = 7
    dilations: tuple = (1, 3, 9)
    max_channels: int = 256
    output_kernel: int = 3
    input_channels: int = 1

    @property
    def downsampling(self):
        return int(np.prod(self.strides))

    def channels(self):
        """Channel count entering each block, plus the final block's output."""
        return [min(self.base_channels * 2 ** b, self.max_channels) for b in range(len(self.strides) + 1)]


@dataclass(frozen=True)
class TCNConfig:
    blocks: int = 8
    dilation_growth: int = 2
    hidden_channels: int = 32
    kernel_size: int = 13
    causal: bool = True
    prelu_init: float = 0.25

    @property
    def dilations(self):
        return [self.dilation_growth ** b for b in range(self.blocks)]

    @property
    def receptive_field(self):
        return 1 + (self.kernel_size - 1) * sum(self.dilations)


@dataclass(frozen=True)
class ModelConfig:
    noise_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(strides=(2, 4, 4, 4)))
    transient_encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(strides=(2, 4, 4, 8)))
    tcn: TCNConfig = field(default_factory=TCNConfig)
    film_hidden: int = 64
    n_bands: int = 128
    noise_hop: int = 128
    strategy: str = "t(s)+n"
    sample_rate: int = 48000
    seed: int = 0

    @property
    def embedding_dim(self):
        return self.transient_encoder.output_channels

    def to_dict(self):
        d = asdict(self)
        d["config_version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported model config version {version}")
        enc = {k: EncoderConfig(**{kk: tuple(v) if isinstance(v, list) else v for kk, v in d.pop(k).items()})
               for k in ("noise_encoder", "transient_encoder")}
        return cls(tcn=TCNConfig(**d.pop("tcn")), **enc, **d)

    def with_strategy(self, strategy):
        return replace(self, strategy=str(strategy))


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class DrumModel:
    """All trainable weights plus the architecture config and mixing strategy."""

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32, params=None):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(self.config.seed))
        self.params: OrderedDict[str, Tensor] = OrderedDict(params)
        n_films = sum(1 for k in self.params if k.startswith("film") and k.endswith("fc1.w"))
        if n_films != self.config.tcn.blocks:
            raise ValueError("one FiLM MLP per TCN block is required")

    @property
    def strategy(self):
        return self.config.strategy

    # -- initialisation ---------------------------------------------------------------

    def _init_params(self, rng):
        p = OrderedDict()
        dt = self.dtype

        def conv(name, c_out, c_in, k):
            p[name + ".w"] = Tensor(_uniform(rng, (c_out, c_in, k), c_in * k, dt), requires_grad=True)
            p[name + ".b"] = Tensor(np.zeros(c_out, dt), requires_grad=True)

        def encoder(prefix, cfg: EncoderConfig):
            ch = cfg.channels()
            conv(f"{prefix}.in", ch[0], cfg.input_channels, cfg.kernel_size)
            for b, s in enumerate(cfg.strides):
                for r, _ in enumerate(cfg.dilations):
                    conv(f"{prefix}.block{b}.res{r}.conv1", ch[b], ch[b], cfg.kernel_size)
                    conv(f"{prefix}.block{b}.res{r}.conv2", ch[b], ch[b], 1)
                conv(f"{prefix}.block{b}.down", ch[b + 1], ch[b], 2 * s)
            conv(f"{prefix}.out", cfg.output_channels, ch[-1], cfg.output_kernel)

        c = self.config
        encoder("noise_encoder", c.noise_encoder)
        encoder("transient_encoder", c.transient_encoder)
        D = c.embedding_dim
        for name in ("query", "w_key", "w_value"):
            shape = (D,) if name == "query" else (D, D)
            p[f"transient_encoder.attn.{name}"] = Tensor(_uniform(rng, shape, D, dt), requires_grad=True)

        H = c.tcn.hidden_channels
        for layer in range(c.tcn.blocks):
            p[f"film{layer}.fc1.w"] = Tensor(_uniform(rng, (c.film_hidden, D), D, dt), requires_grad=True)
            p[f"film{layer}.fc1.b"] = Tensor(np.zeros(c.film_hidden, dt), requires_grad=True)
            # zero output weights and bias (1, 0) make FiLM the identity at init
            p[f"film{layer}.fc2.w"] = Tensor(np.zeros((2 * H, c.film_hidden), dt), requires_grad=True)
            p[f"film{layer}.fc2.b"] = Tensor(np.r_[np.ones(H), np.zeros(H)].astype(dt), requires_grad=True)

        conv("tcn.lift", H, 1, 1)
        for b in range(c.tcn.blocks):
            conv(f"tcn.block{b}.conv", H, H, c.tcn.kernel_size)
            p[f"tcn.block{b}.skip.w"] = Tensor(np.eye(H, dtype=dt)[:, :, None], requires_grad=True)
            p[f"tcn.block{b}.skip.b"] = Tensor(np.zeros(H, dt), requires_grad=True)
            p[f"tcn.block{b}.prelu"] = Tensor(np.full(H, c.tcn.prelu_init, dt), requires_grad=True)
        conv("tcn.out", 1, H, 1)
        return p

    # -- bookkeeping ----------------------------------------------------------------------

    def parameters(self):
        return self.params

    def param_groups(self):
        groups = {"noise_encoder": [], "transient_encoder": [], "film": [], "tcn": []}
        for name in self.params:
            key = "film" if name.startswith("film") else name.split(".")[0]
            groups[key].append(name)
        return groups

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_params(self):
        return int(sum(t.size for t in self.params.values()))

    def astype(self, dtype):
        """Copy of the model with every weight cast (float64 for gradient checks)."""
        params = OrderedDict((k, Tensor(v.data.astype(dtype), requires_grad=True)) for k, v in self.params.items())
        return DrumModel(self.config, dtype, params)

    def copy(self):
        return self.astype(self.dtype)

    def with_strategy(self, strategy):
        params = OrderedDict((k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items())
        return DrumModel(self.config.with_strategy(strategy), self.dtype, params)

    def save(self, path, extra=None):
        cfg = {"model": self.config_text()}
        if extra:
            cfg.update(extra)
        save_checkpoint(path, {k: v.data for k, v in self.params.items()}, cfg)

    @classmethod
    def load(cls, path):
        tensors, cfg = load_checkpoint(path)
        try:
            config = ModelConfig.from_dict(json.loads(cfg["model"]))
        except (KeyError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: checkpoint lacks a model config block") from exc
        dtypes = {t.dtype for t in tensors.values()}
        dtype = dtypes.pop() if len(dtypes) == 1 else np.float32
        params = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in tensors.items())
        return cls(config, dtype, params)

    def config_text(self):
        return json.dumps(self.config.to_dict(), sort_keys=True)

    # -- forward passes -------------------------------------------------------------------

    def _input(self, y):
        if isinstance(y, Tensor):
            return y if y.dtype == self.dtype else Tensor(y.data.astype(self.dtype))
        return Tensor(np.asarray(getattr(y, "samples", y), dtype=self.dtype))

    def _conv(self, name, x, dilation=1, stride=1, padding="same"):
        p = self.params
        return ops.conv1d(x, p[name + ".w"], p[name + ".b"], dilation=dilation, stride=stride, padding=padding)

    def _encode(self, prefix, cfg: EncoderConfig, y):
        y = self._input(y)
        T = y.shape[0]
        if T % cfg.downsampling:
            raise ValueError(f"input length {T} is not divisible by the encoder downsampling {cfg.downsampling}")
        x = self._conv(f"{prefix}.in", ops.reshape(y, (1, T)))
        for b, s in enumerate(cfg.strides):
            for r, d in enumerate(cfg.dilations):
                h = self._conv(f"{prefix}.block{b}.res{r}.conv1", ops.elu(x), dilation=d)
                h = self._conv(f"{prefix}.block{b}.res{r}.conv2", ops.elu(h))
                x = ops.add(x, h)
            x = self._conv(f"{prefix}.block{b}.down", ops.elu(x), stride=s)
        return self._conv(f"{prefix}.out", x)

    def noise_encoder_forward(self, y):
        """Frame-wise band gains (T / 128, N_N), strictly positive."""
        c = self.config
        if c.noise_encoder.downsampling != c.noise_hop:
            raise ValueError("noise encoder downsampling must equal the noise hop")
        feats = self._encode("noise_encoder", c.noise_encoder, y)
        return ops.exp_sigmoid(ops.transpose(feats))

    def transient_encoder_forward(self, y):
        """Embedding z of length 128 from attention-pooled frame features."""
        feats = self._encode("transient_encoder", self.config.transient_encoder, y)
        p = self.params
        return ops.attention_pool(ops.transpose(feats), p["transient_encoder.attn.query"],
                                  p["transient_encoder.attn.w_key"], p["transient_encoder.attn.w_value"])

    def film_params(self, z, layer):
        if not 0 <= layer < self.config.tcn.blocks:
            raise IndexError(f"FiLM layer {layer} out of range")
        p = self.params
        h = ops.tanh(ops.linear(as_tensor(z), p[f"film{layer}.fc1.w"], p[f"film{layer}.fc1.b"]))
        out = ops.linear(h, p[f"film{layer}.fc2.w"], p[f"film{layer}.fc2.b"])
        H = self.config.tcn.hidden_channels
        return ops.getitem(out, slice(0, H)), ops.getitem(out, slice(H, 2 * H))

    def tcn_forward(self, x, z):
        """Transient transfer function T(x, z); same length as x."""
        c = self.config.tcn
        x = self._input(x)
        T = x.shape[0]
        padding = "causal" if c.causal else "same"
        h = self._conv("tcn.lift", ops.reshape(x, (1, T)))
        for b, d in enumerate(c.dilations):
            gamma, beta = self.film_params(z, b)
            u = self._conv(f"tcn.block{b}.conv", h, dilation=d, padding=padding)
            u = ops.prelu(ops.film(u, gamma, beta), self.params[f"tcn.block{b}.prelu"])
            h = ops.add(u, self._conv(f"tcn.block{b}.skip", h))
        return ops.reshape(self._conv("tcn.out", h), (T,))


# free-function forms of the model methods

def noise_encoder_forward(y, model: DrumModel):
    return model.noise_encoder_forward(y)


def transient_encoder_forward(y, model: DrumModel):
    return model.transient_encoder_forward(y)


def film_params(z, layer, model: DrumModel):
    return model.film_params(z, layer)


def tcn_forward(x, z, model: DrumModel):
    return model.tcn_forward(x, z)


def desk_config(strategy="t(s)+n", seed=0, base_channels=8) -> ModelConfig:
    """Narrow encoders for CPU-scale runs; TCN and FiLM sizes unchanged."""
    return ModelConfig(
        noise_encoder=EncoderConfig(base_channels=base_channels, strides=(2, 4, 4, 4)),
        transient_encoder=EncoderConfig(base_channels=base_channels, strides=(2, 4, 4, 8)),
        strategy=strategy,
        seed=seed,
    )
