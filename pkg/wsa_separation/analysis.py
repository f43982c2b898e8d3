"""Attention locality study: map capture, locality statistics, zero-shot window sweep.

CSV exports go through `LocalStorage` so every report is written atomically.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch

from wsa_separation.attention import WsaConfig, attention_flops
from wsa_separation.errors import AttentionModeError, ConfigError, DimensionError
from wsa_separation.metrics import sdr
from wsa_separation.model import convert_to_wsa, separate
from wsa_separation.storage import LocalStorage

LOGGER = logging.getLogger(__name__)

LOCALITY_WINDOWS = (2, 6, 10, 20, 50)
SWEEP_WINDOWS = (200, 100, 50, 20, 10)
FLOAT_FORMAT = '%.6g'


@dataclass
class AttentionRecord:
    layer_index: int
    axis: str
    map: torch.Tensor
    seq_len: int


@dataclass
class LocalityStats:
    window: int
    in_band_mass: float
    per_layer: list = field(default_factory=list)
    axis: str = 'time'


def capture_attention(model, audio):
    """Head-averaged attention map of every attention site, in forward order.

    Time maps are also averaged over bands and channels, frequency maps over
    frames and channels.
    """
    if model.config.attention_mode != 'full':
        raise AttentionModeError('dense attention maps need a full-attention model, '
                                 'this one uses %s' % model.config.attention_mode)
    records = []

    def recorder(layer_index, axis, weights):
        averaged = weights.mean(dim=(0, 1)).detach()
        LOGGER.debug('Captured %s attention of layer %d: %s', axis, layer_index,
                     tuple(weights.shape))
        records.append(AttentionRecord(layer_index=layer_index, axis=axis, map=averaged,
                                       seq_len=averaged.shape[-1]))

    with torch.no_grad():
        separate(model, audio, recorder=recorder)
    return records


def _check_square(attention_map):
    if attention_map.dim() != 2 or attention_map.shape[0] != attention_map.shape[1]:
        raise DimensionError('attention map must be square, got %s' % (tuple(attention_map.shape),))
    return attention_map.shape[0]


def locality_mass(attention_map, w):
    """Fraction of the row-stochastic weight within |i - j| <= w/2."""
    n = _check_square(attention_map)
    index = torch.arange(n)
    band = (index.unsqueeze(1) - index.unsqueeze(0)).abs() <= w // 2
    return float(attention_map.to(torch.float64)[band].sum()) / n


def diagonal_crop(attention_map, center_size=30):
    """Square window of `center_size` centered on the diagonal midpoint."""
    n = _check_square(attention_map)
    if n < center_size:
        raise DimensionError('cannot crop %d x %d from a %d x %d map'
                             % (center_size, center_size, n, n))
    start = (n - center_size + 1) // 2
    return attention_map[start:start + center_size, start:start + center_size]


def locality_table(records, windows=LOCALITY_WINDOWS):
    """LocalityStats per (axis, window), with the per-layer breakdown."""
    table = []
    for axis in ('time', 'frequency'):
        layers = [record for record in records if record.axis == axis]
        if not layers:
            continue
        for w in windows:
            per_layer = [locality_mass(record.map, w) for record in layers]
            table.append(LocalityStats(window=w, in_band_mass=float(np.mean(per_layer)),
                                       per_layer=per_layer, axis=axis))
    return table


def zero_shot_sweep(model, eval_pairs, windows=SWEEP_WINDOWS, seq_len=None):
    """Median SDR of sink-less WSA conversions of `model`, one row per window.

    The first row is the full-attention baseline (window None). The FLOPs
    column uses `seq_len`, or the frame count of the first mixture.
    """
    if model.config.attention_mode != 'full':
        raise AttentionModeError('the sweep converts a full-attention model, got %s'
                                 % model.config.attention_mode)
    if not eval_pairs:
        raise ConfigError('zero-shot sweep needs at least one evaluation pair')
    if seq_len is None:
        seq_len = model.config.stft.num_frames(eval_pairs[0][0].length)

    def median_sdr(candidate):
        values = []
        with torch.no_grad():
            for mix, target in eval_pairs:
                estimate, _ = separate(candidate, mix)
                values.append(sdr(estimate, target))
        return float(np.median(values))

    rows = [{'window': None, 'sdr_db': median_sdr(model), 'flops_reduction': 1.0}]
    for w in windows:
        converted = convert_to_wsa(model, WsaConfig(window=w, sinks=0))
        report = attention_flops(seq_len, converted.config.wsa, mode='window-only')
        rows.append({'window': w, 'sdr_db': median_sdr(converted),
                     'flops_reduction': report.reduction_vs_full})
        LOGGER.info('Window %d: median SDR %.2f dB, %.1fx fewer scores',
                    w, rows[-1]['sdr_db'], report.reduction_vs_full)
    return rows


def _write_frame(frame, path, storage, header=True):
    storage = storage or LocalStorage()

    def _write(tmpname):
        frame.to_csv(tmpname, index=False, header=header, float_format=FLOAT_FORMAT,
                     encoding='utf-8')

    return storage.write(path, _write, suffix='.csv')


def sweep_frame(rows):
    frame = pd.DataFrame(rows, columns=['window', 'sdr_db', 'flops_reduction'])
    frame['window'] = frame['window'].map(lambda w: 'full' if w is None or pd.isna(w) else int(w))
    return frame


def export_sweep(rows, path, storage=None):
    return _write_frame(sweep_frame(rows), path, storage)


def export_map(attention_map, path, storage=None):
    """n x n map as CSV: a header of column indices then one line per row."""
    values = attention_map.detach().cpu().to(torch.float64).numpy()
    frame = pd.DataFrame(values, columns=['k%d' % j for j in range(values.shape[1])])
    return _write_frame(frame, path, storage)


def locality_frame(stats):
    layers = max((len(s.per_layer) for s in stats), default=0)
    rows = []
    for s in stats:
        row = {'window': s.window, 'axis': s.axis, 'in_band_mass': s.in_band_mass}
        for index in range(layers):
            row['layer_%d' % index] = s.per_layer[index] if index < len(s.per_layer) else np.nan
        rows.append(row)
    columns = ['window', 'axis', 'in_band_mass'] + ['layer_%d' % i for i in range(layers)]
    return pd.DataFrame(rows, columns=columns)


def export_locality(stats, path, storage=None):
    return _write_frame(locality_frame(stats), path, storage)


def export_history(history, path, storage=None):
    """Loss history rows (LossBreakdown.as_row dicts) as step,recon,distill_mse,distill_cos,total."""
    frame = pd.DataFrame(history, columns=['recon', 'distill_mse', 'distill_cos', 'total'])
    frame.insert(0, 'step', range(len(frame)))
    return _write_frame(frame, path, storage)


def export_metrics(report, path, storage=None):
    frame = pd.DataFrame({'metric': list(report.keys()), 'value': list(report.values())})
    return _write_frame(frame, path, storage)


def read_csv(path):
    return pd.read_csv(path, encoding='utf-8')
