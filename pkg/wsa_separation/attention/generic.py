import abc
from dataclasses import dataclass, asdict

import six

from wsa_separation.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class WsaConfig:
    """Windowed sink attention: diagonal band of width `window` plus `sinks` global tokens."""

    window: int = 10
    sinks: int = 8

    def __post_init__(self):
        if self.window < 0 or self.window % 2:
            raise ConfigError('window must be even and >= 0, got %d' % self.window)
        if self.sinks < 0:
            raise ConfigError('sinks must be >= 0, got %d' % self.sinks)

    @property
    def half_window(self):
        return self.window // 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class AttentionDims:
    batch: int
    heads: int
    seq: int
    head_dim: int

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 1:
                raise DimensionError('attention %s must be >= 1, got %d' % (name, value))

    @classmethod
    def of(cls, q, k, v):
        """Dims shared by q, k and v of shape (B, H, N, D)."""
        if q.dim() != 4 or q.shape != k.shape or q.shape != v.shape:
            raise DimensionError('q, k, v must share a (B, H, N, D) shape, got %s, %s, %s'
                                 % (tuple(q.shape), tuple(k.shape), tuple(v.shape)))
        return cls(*q.shape)


def wsa_mask(i, j, cfg):
    """True where query i may attend key j in the sink-extended sequence.

    Positions 0..S-1 are sinks. Works on ints and on broadcastable index tensors.
    """
    return (i < cfg.sinks) | (j < cfg.sinks) | (abs(i - j) <= cfg.half_window)


@six.add_metaclass(abc.ABCMeta)
class AttentionKernel:
    """Abstract attention kernel over (B, H, N, D) queries, keys and values."""

    mode = None
    num_sinks = 0

    @abc.abstractmethod
    def attend(self, q, k, v, sink_kqv=None):
        """Returns the attention output, same shape as `v`."""
        raise NotImplementedError()

    def weights(self, q, k):
        """Returns dense (B, H, N, N) attention weights, when the kernel can afford them."""
        raise NotImplementedError()
