"""Mel-band transformer separation network with pluggable time-axis attention.

Pipeline: STFT -> band-split -> L x (time transformer, frequency transformer)
-> multi-band complex mask estimation -> mask * mixture -> inverse STFT.
"""
import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from wsa_separation import dsp
from wsa_separation.attention import FullAttention, WsaConfig, build_kernel, rope_rotate
from wsa_separation.core import Rng
from wsa_separation.errors import AttentionModeError, ConfigError, DimensionError

LOGGER = logging.getLogger(__name__)

ATTENTION_MODES = ('full', 'wsa')


def _toy_stft():
    return dsp.StftConfig(fft_size=512, hop=128, sample_rate=16000)


@dataclass(frozen=True)
class ModelConfig:
    num_bands: int = 12
    model_dim: int = 64
    heads: int = 4
    head_dim: int = 16
    blocks: int = 2
    attention_mode: str = 'full'
    wsa: WsaConfig = field(default_factory=WsaConfig)
    stft: dsp.StftConfig = field(default_factory=_toy_stft)
    band_overlap_bins: int = 2
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.model_dim != self.heads * self.head_dim:
            raise ConfigError('model_dim %d != heads %d x head_dim %d'
                              % (self.model_dim, self.heads, self.head_dim))
        if self.head_dim % 2:
            raise ConfigError('head_dim must be even for rotary embeddings, got %d' % self.head_dim)
        if self.blocks < 1 or self.num_bands < 1:
            raise ConfigError('blocks and num_bands must be >= 1')
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError('unsupported attention mode %s' % self.attention_mode)

    @classmethod
    def toy(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides):
        """Published geometry: 60 mel bands, 6 blocks, 44.1 kHz at a 10 ms hop."""
        params = dict(num_bands=60, blocks=6, stft=dsp.StftConfig())
        params.update(overrides)
        return cls(**params)

    def band_spec(self):
        return dsp.mel_band_edges(self.num_bands, self.stft.fft_size, self.stft.sample_rate,
                                  self.band_overlap_bins)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['wsa'] = self.wsa.to_dict()
        data['stft'] = self.stft.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if 'wsa' in data:
            data['wsa'] = WsaConfig.from_dict(data['wsa'])
        if 'stft' in data:
            data['stft'] = dsp.StftConfig.from_dict(data['stft'])
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError('invalid model configuration: %s' % e)


class MultiHeadAttention(nn.Module):
    """RoPE multi-head attention delegating the score pattern to an AttentionKernel."""

    def __init__(self, config, kernel):
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.rope_base = config.rope_base
        self.kernel = kernel
        self.qkv = nn.Linear(config.model_dim, 3 * config.model_dim, bias=False)
        self.proj = nn.Linear(config.model_dim, config.model_dim, bias=False)
        if kernel.num_sinks:
            self.sink_kqv = nn.Parameter(torch.zeros(self.heads, kernel.num_sinks, 3, self.head_dim))
        else:
            self.register_parameter('sink_kqv', None)

    def forward(self, x, recorder=None):
        batch, seq, dim = x.shape
        q, k, v = self.qkv(x).view(batch, seq, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        # sinks stay position-less
        q = rope_rotate(q, self.rope_base)
        k = rope_rotate(k, self.rope_base)
        if recorder is not None:
            recorder(self.kernel.weights(q, k))
        out = self.kernel.attend(q, k, v, self.sink_kqv)
        return self.proj(out.transpose(1, 2).reshape(batch, seq, dim))


class TransformerLayer(nn.Module):
    """Pre-norm attention and GELU feed-forward, both residual."""

    def __init__(self, config, kernel):
        super().__init__()
        self.attn_norm = nn.LayerNorm(config.model_dim)
        self.attn = MultiHeadAttention(config, kernel)
        self.ff_norm = nn.LayerNorm(config.model_dim)
        self.ff = nn.Sequential(
            nn.Linear(config.model_dim, 4 * config.model_dim),
            nn.GELU(),
            nn.Linear(4 * config.model_dim, config.model_dim))

    @property
    def mode(self):
        return self.attn.kernel.mode

    def forward(self, x, recorder=None):
        x = x + self.attn(self.attn_norm(x), recorder=recorder)
        return x + self.ff(self.ff_norm(x))


class TransformerBlock(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.time_layer = TransformerLayer(config, build_kernel(config.attention_mode, config.wsa))
        # frequency attention is always full
        self.freq_layer = TransformerLayer(config, FullAttention())


def _check_features(x, layer):
    if x.dim() < 3 or x.shape[-1] != layer.attn_norm.normalized_shape[0]:
        raise DimensionError('features of shape %s do not match model_dim %d'
                             % (tuple(x.shape), layer.attn_norm.normalized_shape[0]))


def band_split(spec, bands, band_in):
    """Projects each band's interleaved (re, im) bins to model_dim, framewise.

    Args:
      spec: complex (..., F, T') spectrogram.
      bands: the BandSpec.
      band_in: one nn.Linear(2 * band width -> model_dim) per band.

    Returns:
      (..., N_b, T', model_dim) features.
    """
    if spec.shape[-2] != bands.num_bins or len(band_in) != bands.num_bands:
        raise DimensionError('spectrogram with %d bins and %d projections do not match a '
                             '%d-band split of %d bins' % (spec.shape[-2], len(band_in),
                                                           bands.num_bands, bands.num_bins))
    features = []
    for b, (lo, hi) in enumerate(bands.bands):
        sub = spec[..., lo:hi + 1, :].transpose(-1, -2)
        interleaved = torch.stack([sub.real, sub.imag], dim=-1).flatten(-2)
        features.append(band_in[b](interleaved))
    return torch.stack(features, dim=-3)


def time_transformer_layer(x, layer, recorder=None):
    """Attention over the T' axis, each band (and channel) independently.

    The attention mode (full or WSA) is the one `layer` was built with.
    """
    _check_features(x, layer)
    lead = x.shape[:-2]
    out = layer(x.reshape(-1, x.shape[-2], x.shape[-1]), recorder=recorder)
    return out.reshape(*lead, x.shape[-2], x.shape[-1])


def freq_transformer_layer(x, layer, recorder=None):
    """Full attention over the band axis, each time frame independently."""
    _check_features(x, layer)
    swapped = x.transpose(-3, -2)
    lead = swapped.shape[:-2]
    out = layer(swapped.reshape(-1, swapped.shape[-2], swapped.shape[-1]), recorder=recorder)
    return out.reshape(*lead, swapped.shape[-2], swapped.shape[-1]).transpose(-3, -2)


def estimate_masks(x, band_out, bands):
    """Per-band heads emit (re, im) per bin; bins shared by bands sum their contributions."""
    if x.dim() < 3 or x.shape[-3] != bands.num_bands or len(band_out) != bands.num_bands:
        raise DimensionError('features of shape %s do not match a %d-band split'
                             % (tuple(x.shape), bands.num_bands))
    lead = x.shape[:-3]
    frames = x.shape[-2]
    re = x.new_zeros(*lead, bands.num_bins, frames)
    im = x.new_zeros(*lead, bands.num_bins, frames)
    for b in range(bands.num_bands):
        width = bands.width(b)
        pairs = band_out[b](x[..., b, :, :]).reshape(*lead, frames, width, 2).transpose(-3, -2)
        index = bands.indices(b).to(x.device)
        re = re.index_add(re.dim() - 2, index, pairs[..., 0])
        im = im.index_add(im.dim() - 2, index, pairs[..., 1])
    return torch.complex(re, im)


class SepModel(nn.Module):
    """Band-split, alternating time/frequency transformers, multi-band mask estimation."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.bands = config.band_spec()
        self.band_in = nn.ModuleList(
            nn.Linear(2 * self.bands.width(b), config.model_dim) for b in range(config.num_bands))
        self.blocks = nn.ModuleList(TransformerBlock(config) for _ in range(config.blocks))
        self.band_out = nn.ModuleList(
            nn.Linear(config.model_dim, 2 * self.bands.width(b)) for b in range(config.num_bands))

    @property
    def dtype(self):
        return self.band_in[0].weight.dtype

    def attention_sites(self):
        """(layer_index, axis) of every attention site, in forward order."""
        sites = []
        for index in range(len(self.blocks)):
            sites.append((index, 'time'))
            sites.append((index, 'frequency'))
        return sites

    def forward(self, spec, recorder=None):
        """Complex mask (..., F, T') for a complex mixture spectrogram (..., F, T').

        `recorder(layer_index, axis, weights)` receives dense attention weights
        of every site when given.
        """
        x = band_split(spec, self.bands, self.band_in)
        for index, block in enumerate(self.blocks):
            x = time_transformer_layer(
                x, block.time_layer,
                recorder=None if recorder is None else functools.partial(recorder, index, 'time'))
            x = freq_transformer_layer(
                x, block.freq_layer,
                recorder=None if recorder is None else functools.partial(recorder, index, 'frequency'))
        return estimate_masks(x, self.band_out, self.bands)


def separate(model, mix, recorder=None):
    """Separates a mixture; returns the estimated source and the complex mask."""
    cfg = model.config.stft
    if mix.sample_rate != cfg.sample_rate:
        raise ConfigError('mixture sampled at %d Hz, model expects %d Hz'
                          % (mix.sample_rate, cfg.sample_rate))
    samples = mix.samples.to(model.dtype)
    spec = dsp.stft(dsp.AudioBuffer(samples, mix.sample_rate), cfg)
    mask = model(spec, recorder=recorder)
    estimate = dsp.istft(mask * spec, cfg, mix.length)
    return estimate, mask


def init_toy_model(config, seed):
    """Builds a model with uniform(+-1/sqrt(fan_in)) weights drawn from Rng(seed)."""
    model = SepModel(config)
    rng = Rng(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.copy_(rng.uniform_tensor(module.weight.shape, -bound, bound))
                if module.bias is not None:
                    module.bias.copy_(rng.uniform_tensor(module.bias.shape, -bound, bound))
    LOGGER.info('Initialized %s model with %d parameters (seed %d)',
                config.attention_mode, sum(p.numel() for p in model.parameters()), seed)
    return model


def convert_to_wsa(model, wsa):
    """Copies a full-attention model into a WSA model with zero-initialized sinks.

    Only time layers change; frequency layers keep full attention and their weights.
    """
    if model.config.attention_mode != 'full':
        raise AttentionModeError('model already uses %s attention' % model.config.attention_mode)
    config = dataclasses.replace(model.config, attention_mode='wsa', wsa=wsa)
    student = SepModel(config).to(model.dtype)
    result = student.load_state_dict(model.state_dict(), strict=False)
    unexpected_missing = [name for name in result.missing_keys if not name.endswith('sink_kqv')]
    if unexpected_missing or result.unexpected_keys:
        raise DimensionError('cannot convert parameters %s'
                             % (unexpected_missing + list(result.unexpected_keys)))
    with torch.no_grad():
        for name in result.missing_keys:
            student.get_parameter(name).zero_()
    LOGGER.info('Converted time attention to WSA (window=%d, sinks=%d)', wsa.window, wsa.sinks)
    return student
