"""Separation metrics: SDR, chunked SDR, Fullness and Bleedless.

Multichannel signals are scored on their channel-concatenated samples.
"""
import logging
from dataclasses import dataclass

import librosa
import numpy as np
import torch

from wsa_separation import dsp
from wsa_separation.errors import ConfigError, DimensionError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricConfig:
    sdr_cap_db: float = 100.0
    eps: float = 1e-10
    chunk_seconds: float = 1.0
    mel_bands_for_fb: int = 80
    db_floor: float = -80.0
    silence_db: float = -60.0
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        if self.sdr_cap_db <= 0 or self.eps <= 0:
            raise ConfigError('sdr_cap_db and eps must be positive')
        if self.chunk_seconds <= 0:
            raise ConfigError('chunk_seconds must be positive, got %s' % self.chunk_seconds)
        if self.db_floor >= 0:
            raise ConfigError('db_floor must be negative, got %s' % self.db_floor)


DEFAULT_CONFIG = MetricConfig()


def _check_pair(est, ref):
    if est.samples.shape != ref.samples.shape:
        raise DimensionError('estimate %s and reference %s differ in shape'
                             % (tuple(est.samples.shape), tuple(ref.samples.shape)))
    if est.sample_rate != ref.sample_rate:
        raise ConfigError('estimate at %d Hz, reference at %d Hz' % (est.sample_rate, ref.sample_rate))


def _sdr(est, ref, cfg):
    num = np.sum(ref ** 2) + cfg.eps
    den = np.sum((ref - est) ** 2) + cfg.eps
    return float(np.clip(10.0 * np.log10(num / den), -cfg.sdr_cap_db, cfg.sdr_cap_db))


def _as_float64(audio):
    return audio.numpy().astype(np.float64)


def sdr(est, ref, cfg=DEFAULT_CONFIG):
    _check_pair(est, ref)
    return _sdr(_as_float64(est).ravel(), _as_float64(ref).ravel(), cfg)


def chunk_sdrs(est, ref, cfg=DEFAULT_CONFIG):
    """SDR of each non-overlapping chunk; a trailing chunk shorter than half is dropped."""
    _check_pair(est, ref)
    chunk = int(round(cfg.chunk_seconds * ref.sample_rate))
    if ref.length < chunk / 2.0:
        raise DimensionError('%d samples is shorter than half a %d-sample chunk'
                             % (ref.length, chunk))
    e = _as_float64(est)
    r = _as_float64(ref)
    values = []
    for start in range(0, ref.length, chunk):
        stop = min(ref.length, start + chunk)
        if stop - start < chunk / 2.0:
            break
        values.append(_sdr(e[:, start:stop].ravel(), r[:, start:stop].ravel(), cfg))
    return values


def csdr(est, ref, cfg=DEFAULT_CONFIG):
    return float(np.median(chunk_sdrs(est, ref, cfg)))


def mel_magnitude(audio, cfg=DEFAULT_CONFIG):
    """Mel-magnitude spectrogram (mel_bands_for_fb, frames) of the concatenated channels."""
    stft_cfg = dsp.StftConfig(fft_size=cfg.fft_size, hop=cfg.hop, sample_rate=audio.sample_rate)
    mono = torch.from_numpy(_as_float64(audio).reshape(1, -1))
    magnitude = dsp.stft(dsp.AudioBuffer(mono, audio.sample_rate), stft_cfg)[0].abs().numpy()
    fb = librosa.filters.mel(sr=audio.sample_rate, n_fft=cfg.fft_size,
                             n_mels=cfg.mel_bands_for_fb, htk=True)
    return fb @ magnitude


def mel_db_pair(est, ref, cfg=DEFAULT_CONFIG):
    """Both mel spectrograms in dB relative to the reference peak, floored at cfg.db_floor."""
    est_mel = mel_magnitude(est, cfg)
    ref_mel = mel_magnitude(ref, cfg)
    peak = max(float(ref_mel.max()), 1e-12)

    def to_db(mel):
        return np.maximum(20.0 * np.log10(np.maximum(mel, 1e-12) / peak), cfg.db_floor)

    return to_db(est_mel), to_db(ref_mel)


def _headroom(ref_db, cfg):
    """Mean height of the reference above the floor: the deficit of a silent estimate."""
    return float(np.mean(ref_db - cfg.db_floor))


def _one_sided_score(gap, headroom):
    mean_gap = float(np.mean(np.maximum(0.0, gap)))
    if headroom <= 0:
        return 100.0 if mean_gap == 0 else 0.0
    return 100.0 * max(0.0, 1.0 - mean_gap / headroom)


def fullness(est, ref, cfg=DEFAULT_CONFIG):
    """Penalizes target content missing from the estimate, in [0, 100].

    A silent estimate scores 0, whatever the reference.
    """
    _check_pair(est, ref)
    est_db, ref_db = mel_db_pair(est, ref, cfg)
    return _one_sided_score(ref_db - est_db, _headroom(ref_db, cfg))


def bleedless(est, ref, cfg=DEFAULT_CONFIG):
    """Penalizes estimate content absent from the target, in [0, 100]."""
    _check_pair(est, ref)
    est_db, ref_db = mel_db_pair(est, ref, cfg)
    return _one_sided_score(est_db - ref_db, _headroom(ref_db, cfg))


def bleedless_segments(est, ref, cfg=DEFAULT_CONFIG):
    """Bleedless of each chunk, tagged by whether the reference chunk is silent.

    Frames are scored against the whole-signal reference headroom, so silent
    chunks are penalized for any leaked energy. A chunk is silent when the
    reference energy falls below cfg.silence_db (dB full scale).

    Returns:
      A list of (silent, score) tuples, one per chunk of `chunk_sdrs`.
    """
    _check_pair(est, ref)
    est_db, ref_db = mel_db_pair(est, ref, cfg)
    headroom = _headroom(ref_db, cfg)
    chunk = int(round(cfg.chunk_seconds * ref.sample_rate))
    r = _as_float64(ref)
    segments = []
    for start in range(0, ref.length, chunk):
        stop = min(ref.length, start + chunk)
        if stop - start < chunk / 2.0:
            break
        # frames centered inside the chunk
        first, last = -(-start // cfg.hop), -(-stop // cfg.hop)
        energy_db = 10.0 * np.log10(float(np.mean(r[:, start:stop] ** 2)) + cfg.eps)
        score = _one_sided_score(est_db[:, first:last] - ref_db[:, first:last], headroom)
        segments.append((energy_db < cfg.silence_db, score))
    return segments


def evaluate_pairs(pairs, cfg=DEFAULT_CONFIG):
    """Scores (estimate, reference) pairs.

    Returns the median full-signal SDR, the cSDR pooled over the chunks of all
    pairs, mean Fullness / Bleedless, and the mean chunk Bleedless over silent
    and over active reference chunks (NaN when there is no such chunk).
    """
    if not pairs:
        raise ConfigError('no pairs to evaluate')
    sdrs, chunks, full, bleed, segments = [], [], [], [], []
    for est, ref in pairs:
        sdrs.append(sdr(est, ref, cfg))
        chunks.extend(chunk_sdrs(est, ref, cfg))
        full.append(fullness(est, ref, cfg))
        bleed.append(bleedless(est, ref, cfg))
        segments.extend(bleedless_segments(est, ref, cfg))

    def segment_mean(silent):
        scores = [score for is_silent, score in segments if is_silent == silent]
        return float(np.mean(scores)) if scores else float('nan')

    report = {
        'sdr': float(np.median(sdrs)),
        'csdr': float(np.median(chunks)),
        'fullness': float(np.mean(full)),
        'bleedless': float(np.mean(bleed)),
        'bleedless_silent': segment_mean(True),
        'bleedless_active': segment_mean(False),
    }
    LOGGER.info('Evaluated %d pair(s): %s', len(pairs), report)
    return report
