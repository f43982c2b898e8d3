"""Attention cost model: score evaluations and peak score buffers per (batch, head, layer)."""
from dataclasses import dataclass

from wsa_separation.attention.windowed import TILE_ROWS
from wsa_separation.errors import ConfigError

MODES = ('full', 'wsa', 'window-only')


@dataclass(frozen=True)
class FlopsReport:
    mode: str
    seq_len: int
    window: int
    sinks: int
    score_count: int
    reduction_vs_full: float
    peak_scores: int

    def describe(self):
        if self.mode == 'full':
            return 'full attention over %d frames: %d scores' % (self.seq_len, self.score_count)
        return '%s (W=%d, S=%d) over %d frames: %d scores, %.1fx fewer than full' % (
            self.mode, self.window, self.sinks, self.seq_len, self.score_count,
            self.reduction_vs_full)


def attention_flops(n, cfg=None, mode=None):
    """Counts attention scores for a sequence of `n` tokens.

    The count follows the N x (W + S) cost model, clamped to [N, N^2]; the
    kernel itself evaluates W + 1 band columns per row.

    Args:
      n: sequence length.
      cfg: WsaConfig, or None for full attention.
      mode: 'full', 'wsa' or 'window-only' (sinks ignored); defaults from `cfg`.
    """
    if n < 1:
        raise ConfigError('sequence length must be >= 1, got %d' % n)
    if mode is None:
        mode = 'full' if cfg is None else 'wsa'
    if mode not in MODES:
        raise ConfigError('unknown attention mode %s' % mode)
    full = n * n
    if mode == 'full':
        return FlopsReport(mode, n, n, 0, full, 1.0, full)
    if cfg is None:
        raise ConfigError('%s accounting needs a window configuration' % mode)

    sinks = cfg.sinks if mode == 'wsa' else 0
    score_count = min(full, max(n, n * (cfg.window + sinks)))
    rows = min(TILE_ROWS, n)
    peak = rows * (min(n, rows + cfg.window) + sinks)
    return FlopsReport(mode, n, cfg.window, sinks, score_count, full / float(score_count), peak)
