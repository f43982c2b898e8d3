"""STFT analysis/synthesis, mel band-split tables and WAV I/O."""
import logging
from dataclasses import dataclass, asdict

import numpy as np
import soundfile
import torch

from wsa_separation.errors import AudioIOError, ConfigError, DimensionError
from wsa_separation.storage import LocalStorage

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class StftConfig:
    """Hann-windowed, center-aligned STFT geometry."""

    fft_size: int = 2048
    hop: int = 441
    sample_rate: int = 44100

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2:
            raise ConfigError('fft_size must be even and >= 2, got %d' % self.fft_size)
        # NOLA for a periodic Hann window
        if not 1 <= self.hop <= self.fft_size // 2:
            raise ConfigError('hop must be in [1, fft_size/2], got hop=%d for fft_size=%d'
                              % (self.hop, self.fft_size))
        if self.sample_rate <= 0:
            raise ConfigError('sample_rate must be positive, got %d' % self.sample_rate)

    @property
    def num_bins(self):
        return self.fft_size // 2 + 1

    def num_frames(self, length):
        return length // self.hop + 1

    def window(self, dtype=torch.float32):
        return torch.hann_window(self.fft_size, periodic=True, dtype=dtype)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# multi-resolution set of the reconstruction loss
def loss_resolutions(sample_rate):
    return [StftConfig(fft_size=n, hop=n // 4, sample_rate=sample_rate) for n in (512, 1024, 2048)]


@dataclass
class AudioBuffer:
    """Multichannel audio: `samples` is a (channels, length) tensor."""

    samples: torch.Tensor
    sample_rate: int

    def __post_init__(self):
        if not torch.is_tensor(self.samples):
            self.samples = torch.as_tensor(np.asarray(self.samples, dtype=np.float32))
        if self.samples.dim() == 1:
            self.samples = self.samples.unsqueeze(0)
        if self.samples.dim() != 2:
            raise DimensionError('audio samples must be (channels, length), got %s'
                                 % (tuple(self.samples.shape),))
        if self.sample_rate <= 0:
            raise ConfigError('sample_rate must be positive, got %s' % self.sample_rate)

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.length / float(self.sample_rate)

    def numpy(self):
        return self.samples.detach().cpu().numpy()


@dataclass(frozen=True)
class BandSpec:
    """Inclusive STFT-bin ranges of the band-split, ordered by lower bin."""

    num_bands: int
    bands: tuple
    num_bins: int

    def __post_init__(self):
        if len(self.bands) != self.num_bands:
            raise ConfigError('band table has %d entries, expected %d'
                              % (len(self.bands), self.num_bands))
        covered = np.zeros(self.num_bins, dtype=bool)
        previous = None
        for lo, hi in self.bands:
            if not 0 <= lo <= hi < self.num_bins:
                raise ConfigError('band (%d, %d) outside bins 0..%d' % (lo, hi, self.num_bins - 1))
            if previous is not None and (lo < previous[0] or lo > previous[1] + 1):
                raise ConfigError('band (%d, %d) does not follow (%d, %d)'
                                  % (lo, hi, previous[0], previous[1]))
            covered[lo:hi + 1] = True
            previous = (lo, hi)
        if not covered.all():
            raise ConfigError('bins %s are not covered by any band'
                              % np.flatnonzero(~covered).tolist())

    def width(self, band):
        lo, hi = self.bands[band]
        return hi - lo + 1

    def indices(self, band):
        lo, hi = self.bands[band]
        return torch.arange(lo, hi + 1)


def hz_to_mel(f):
    """HTK mel scale."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError('frequency must be non-negative, got %s' % f)
    mel = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f = 700.0 * (10.0 ** (mel / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def mel_band_edges(num_bands, fft_size, sample_rate, overlap_bins=2):
    """Splits the STFT bins into `num_bands` mel-spaced bands.

    Band edges are equally spaced in mel between 0 and Nyquist; each band is then
    widened by `overlap_bins` on both sides, clamped to the bin range.
    """
    num_bins = fft_size // 2 + 1
    if num_bands < 1:
        raise ConfigError('num_bands must be >= 1, got %d' % num_bands)
    if overlap_bins < 0:
        raise ConfigError('overlap_bins must be >= 0, got %d' % overlap_bins)
    if num_bands > num_bins:
        raise ConfigError('%d bands cannot split %d bins' % (num_bands, num_bins))

    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_bands + 1)
    edges = np.round(mel_to_hz(mels) * fft_size / sample_rate).astype(np.int64)
    edges[0] = 0
    edges[-1] = num_bins
    # every band keeps at least one bin of its own
    for b in range(1, num_bands):
        edges[b] = max(edges[b], edges[b - 1] + 1)
    for b in range(num_bands - 1, 0, -1):
        edges[b] = min(edges[b], edges[b + 1] - 1)

    bands = tuple((int(max(0, edges[b] - overlap_bins)),
                   int(min(num_bins - 1, edges[b + 1] - 1 + overlap_bins)))
                  for b in range(num_bands))
    return BandSpec(num_bands=num_bands, bands=bands, num_bins=num_bins)


def stft(audio, cfg):
    """Complex spectrogram (channels, fft_size/2+1, length//hop+1) of an AudioBuffer."""
    x = audio.samples
    if x.shape[-1] < 1:
        raise DimensionError('cannot analyze empty audio')
    # reflection needs more samples than the padding
    pad_mode = 'reflect' if x.shape[-1] > cfg.fft_size // 2 else 'constant'
    return torch.stft(x, n_fft=cfg.fft_size, hop_length=cfg.hop,
                      window=cfg.window(dtype=x.dtype).to(x.device),
                      center=True, pad_mode=pad_mode, return_complex=True)


def istft(spec, cfg, out_len):
    """Overlap-add synthesis back to an AudioBuffer of exactly `out_len` samples."""
    if spec.dim() == 2:
        spec = spec.unsqueeze(0)
    if spec.dim() != 3 or spec.shape[1] != cfg.num_bins:
        raise DimensionError('spectrogram of shape %s does not match fft_size %d'
                             % (tuple(spec.shape), cfg.fft_size))
    window = cfg.window(dtype=spec.real.dtype).to(spec.device)
    samples = torch.istft(spec, n_fft=cfg.fft_size, hop_length=cfg.hop, window=window,
                          center=True, length=out_len)
    return AudioBuffer(samples, cfg.sample_rate)


def multi_res_stft(audio, cfgs):
    return [stft(audio, cfg) for cfg in cfgs]


def read_wav(path):
    """Reads a PCM16 or float32 WAV file; no resampling."""
    try:
        data, sample_rate = soundfile.read(path, dtype='float32', always_2d=True)
    except (RuntimeError, soundfile.SoundFileError) as e:
        raise AudioIOError('cannot read %s: %s' % (path, e))
    LOGGER.debug('Read %s: %d channel(s), %d samples at %d Hz',
                 path, data.shape[1], data.shape[0], sample_rate)
    return AudioBuffer(torch.from_numpy(np.ascontiguousarray(data.T)), sample_rate)


def write_wav(path, audio, subtype='FLOAT', storage=None):
    """Writes an AudioBuffer atomically; `subtype` is 'FLOAT' or 'PCM_16'."""
    if subtype not in ('FLOAT', 'PCM_16'):
        raise ConfigError('unsupported WAV subtype %s' % subtype)
    storage = storage or LocalStorage()
    data = audio.numpy().T
    if subtype == 'PCM_16':
        data = np.clip(data, -1.0, 1.0)

    def _write(tmpname):
        soundfile.write(tmpname, data, audio.sample_rate, subtype=subtype, format='WAV')

    try:
        return storage.write(path, _write, suffix='.wav')
    except (RuntimeError, soundfile.SoundFileError) as e:
        raise AudioIOError('cannot write %s: %s' % (path, e))
