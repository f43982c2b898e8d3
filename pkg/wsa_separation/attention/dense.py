"""Dense attention: the full-attention baseline and the masked reference oracle."""
import math

import torch

from wsa_separation.attention.generic import AttentionDims, AttentionKernel
from wsa_separation.core import matmul, softmax_rows
from wsa_separation.errors import DimensionError


def _scores(q, k):
    return matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])


def full_attention(q, k, v):
    AttentionDims.of(q, k, v)
    return matmul(softmax_rows(_scores(q, k)), v)


def dense_mask(mask_fn, n, device=None):
    """Evaluates `mask_fn(i, j)` on an (n, n) index grid."""
    rows = torch.arange(n, device=device).unsqueeze(1)
    cols = torch.arange(n, device=device).unsqueeze(0)
    mask = torch.as_tensor(mask_fn(rows, cols), dtype=torch.bool, device=device)
    return mask.expand(n, n)


def masked_attention_weights(q, k, mask_fn):
    """Dense (B, H, N, N) weights with every position outside the mask at exactly 0."""
    mask = dense_mask(mask_fn, q.shape[-2], device=q.device)
    scores = _scores(q, k).masked_fill(~mask, float('-inf'))
    return softmax_rows(scores)


def masked_attention_oracle(q, k, v, mask_fn):
    """Reference masked attention; materializes the full N x N matrix.

    `mask_fn(i, j)` receives broadcastable index tensors and returns booleans.
    """
    AttentionDims.of(q, k, v)
    return matmul(masked_attention_weights(q, k, mask_fn), v)


class FullAttention(AttentionKernel):
    """Full softmax attention over the whole sequence."""

    mode = 'full'

    def attend(self, q, k, v, sink_kqv=None):
        if sink_kqv is not None:
            raise DimensionError('full attention takes no sink parameters')
        return full_attention(q, k, v)

    def weights(self, q, k):
        return softmax_rows(_scores(q, k))
