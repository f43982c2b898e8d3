"""Blockwise windowed sink attention.

Real token p attends the S sinks and the real tokens p' with |p - p'| <= W/2.
Sinks occupy indices 0..S-1 of the extended sequence; their own output rows
are never needed and never computed. Query rows are processed in tiles, each
tile only touching the key slice its band can reach, so no N x N buffer exists.
"""
import logging
import math

import torch

from wsa_separation.attention.generic import AttentionDims, AttentionKernel, wsa_mask
from wsa_separation.attention.dense import masked_attention_oracle
from wsa_separation.core import matmul, softmax_rows
from wsa_separation.errors import DimensionError

LOGGER = logging.getLogger(__name__)

TILE_ROWS = 64


class AllocationTracker:
    """Records the size of each kernel intermediate, per (batch, head)."""

    def __init__(self):
        self.peak = 0
        self.peak_label = None
        self.count = 0

    def record(self, label, tensor, groups):
        size = tensor.numel() // groups
        self.count += 1
        if size > self.peak:
            self.peak = size
            self.peak_label = label
        return tensor


def _check_sinks(sink_kqv, heads, sinks, head_dim):
    if sinks == 0:
        if sink_kqv is not None and sink_kqv.numel():
            raise DimensionError('sink parameters given for a configuration without sinks')
        return
    expected = (heads, sinks, 3, head_dim)
    if sink_kqv is None or tuple(sink_kqv.shape) != expected:
        raise DimensionError('sink parameters must have shape %s, got %s'
                             % (expected, None if sink_kqv is None else tuple(sink_kqv.shape)))


def prepend_sinks(q, k, v, sink_kqv):
    """Builds the (S + N)-long extended sequence; sinks take indices 0..S-1."""
    if sink_kqv is None or sink_kqv.shape[1] == 0:
        return q, k, v
    batch = q.shape[0]
    parts = []
    for index, tensor in ((1, q), (0, k), (2, v)):
        sink = sink_kqv[:, :, index].unsqueeze(0).expand(batch, -1, -1, -1)
        parts.append(torch.cat([sink.to(tensor.dtype), tensor], dim=2))
    return tuple(parts)


def windowed_sink_oracle(q, k, v, sink_kqv, cfg):
    """Dense reference of `windowed_sink_attention` on the extended sequence."""
    eq, ek, ev = prepend_sinks(q, k, v, sink_kqv)
    out = masked_attention_oracle(eq, ek, ev, lambda i, j: wsa_mask(i, j, cfg))
    return out[:, :, cfg.sinks:]


def windowed_sink_attention(q, k, v, sink_kqv, cfg, tile_rows=TILE_ROWS, tracker=None):
    """Windowed sink attention without materializing the full score matrix.

    Args:
      q, k, v: (B, H, N, D) tensors, already position-encoded.
      sink_kqv: (H, S, 3, D) learned sink key/query/value vectors, or None when S == 0.
      cfg: the WsaConfig.
      tile_rows: query rows per tile.
      tracker: optional AllocationTracker observing every intermediate.

    Returns:
      The (B, H, N, D) output of the real tokens.
    """
    dims = AttentionDims.of(q, k, v)
    _check_sinks(sink_kqv, dims.heads, cfg.sinks, dims.head_dim)
    groups = dims.batch * dims.heads
    half = cfg.half_window
    scale = 1.0 / math.sqrt(dims.head_dim)

    def track(label, tensor):
        if tracker is not None:
            tracker.record(label, tensor, groups)
        return tensor

    if cfg.sinks:
        sink_k = sink_kqv[:, :, 0].to(q.dtype)
        sink_v = sink_kqv[:, :, 2].to(q.dtype)

    tiles = []
    for r0 in range(0, dims.seq, tile_rows):
        r1 = min(dims.seq, r0 + tile_rows)
        c0 = max(0, r0 - half)
        c1 = min(dims.seq, r1 + half)
        q_tile = q[:, :, r0:r1]
        band = track('band_scores', matmul(q_tile, k[:, :, c0:c1].transpose(-1, -2)) * scale)
        offsets = (torch.arange(r0, r1, device=q.device).unsqueeze(1)
                   - torch.arange(c0, c1, device=q.device).unsqueeze(0))
        band = track('masked_scores', band.masked_fill(offsets.abs() > half, float('-inf')))
        if cfg.sinks:
            sink_scores = track('sink_scores', matmul(q_tile, sink_k.transpose(-1, -2)) * scale)
            band = track('scores', torch.cat([sink_scores, band], dim=-1))
        probs = track('probs', softmax_rows(band))
        out = track('band_out', matmul(probs[..., cfg.sinks:], v[:, :, c0:c1]))
        if cfg.sinks:
            out = track('out', out + matmul(probs[..., :cfg.sinks], sink_v))
        tiles.append(out)
    LOGGER.debug('WSA over %d tokens in %d tile(s), window=%d sinks=%d',
                 dims.seq, len(tiles), cfg.window, cfg.sinks)
    return track('output', torch.cat(tiles, dim=2))


class WindowedSinkAttention(AttentionKernel):
    """Sparse windowed attention with learned sink tokens."""

    mode = 'wsa'

    def __init__(self, config, tile_rows=TILE_ROWS):
        self.config = config
        self.tile_rows = tile_rows

    @property
    def num_sinks(self):
        return self.config.sinks

    def attend(self, q, k, v, sink_kqv=None):
        return windowed_sink_attention(q, k, v, sink_kqv, self.config, tile_rows=self.tile_rows)
