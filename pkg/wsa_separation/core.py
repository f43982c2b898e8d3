"""Numeric substrate shared by all modules: checked matmul, masked softmax, seeded RNG."""
import logging

import numpy as np
import torch

from wsa_separation.errors import DimensionError, FullyMaskedRowError

LOGGER = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def matmul(a, b):
    """Matrix product over the last two dimensions.

    Leading dimensions broadcast as in `torch.matmul`.
    """
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError('cannot multiply tensors of shape %s and %s'
                             % (tuple(a.shape), tuple(b.shape)))
    return torch.matmul(a, b)


def softmax_rows(scores):
    """Row softmax over the last dimension; -inf entries get exactly zero weight."""
    finite_rows = torch.isfinite(scores).any(dim=-1)
    if not bool(finite_rows.all()):
        raise FullyMaskedRowError('%d fully masked row(s) in scores of shape %s'
                                  % (int((~finite_rows).sum()), tuple(scores.shape)))
    return torch.softmax(scores, dim=-1)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(state):
    """Advances a splitmix64 state, returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    Pure integer arithmetic, so a seed yields the same stream on every platform.
    Not thread-safe: each consumer owns its generator.
    """

    def __init__(self, seed):
        state = int(seed) & _MASK64
        self._s = []
        for _ in range(4):
            state, value = splitmix64(state)
            self._s.append(value)

    def next_u64(self):
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self):
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low, high):
        return low + (high - low) * self.random()

    def randint(self, n):
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError('randint upper bound must be positive, got %d' % n)
        return (self.next_u64() * n) >> 64

    def uniform_tensor(self, shape, low, high, dtype=torch.float32):
        count = int(np.prod(shape, dtype=np.int64))
        span = high - low
        values = np.fromiter((low + span * self.random() for _ in range(count)),
                             dtype=np.float64, count=count)
        return torch.from_numpy(values.reshape(tuple(shape))).to(dtype)

    def numpy_generator(self):
        """Bulk generator for audio-sized draws, seeded from this stream."""
        return np.random.default_rng(self.next_u64())
