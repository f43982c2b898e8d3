from wsa_separation.attention.generic import AttentionDims, AttentionKernel, WsaConfig, wsa_mask
from wsa_separation.attention.dense import (FullAttention, full_attention,
                                            masked_attention_oracle, masked_attention_weights)
from wsa_separation.attention.windowed import (AllocationTracker, WindowedSinkAttention,
                                               prepend_sinks, windowed_sink_attention,
                                               windowed_sink_oracle)
from wsa_separation.attention.rope import rope_rotate
from wsa_separation.attention.flops import FlopsReport, attention_flops
from wsa_separation.errors import ConfigError


def build_kernel(mode, wsa=None):
    """Returns the attention kernel implementing `mode`."""
    if mode == 'full':
        return FullAttention()
    if mode == 'wsa':
        if wsa is None:
            raise ConfigError('wsa attention needs a WsaConfig')
        return WindowedSinkAttention(wsa)
    raise ConfigError('unsupported attention mode %s' % mode)
