"""Rotary position embeddings."""
import torch

from wsa_separation.errors import DimensionError


def rope_rotate(x, base=10000.0, positions=None):
    """Rotates pairs (x[2t], x[2t+1]) by angle p * base^(-2t/D) at position p.

    Args:
      x: (..., N, D) tensor, D even.
      base: frequency base.
      positions: optional (N,) positions, defaults to 0..N-1.
    """
    seq, dim = x.shape[-2], x.shape[-1]
    if dim % 2:
        raise DimensionError('rotary embedding needs an even head dimension, got %d' % dim)
    if positions is None:
        positions = torch.arange(seq, device=x.device)
    freqs = base ** (-torch.arange(0, dim, 2, device=x.device, dtype=torch.float64) / dim)
    angles = positions.to(torch.float64).unsqueeze(-1) * freqs
    cos = torch.cos(angles).to(x.dtype)
    sin = torch.sin(angles).to(x.dtype)
    x_even = x[..., 0::2]
    x_odd = x[..., 1::2]
    rotated = torch.stack([x_even * cos - x_odd * sin, x_even * sin + x_odd * cos], dim=-1)
    return rotated.flatten(-2)
