"""Training objective: multi-resolution reconstruction plus mask distillation.

All L1 / L2 terms are means over their elements, so unit loss weights stay
meaningful whatever the model or clip size.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch

from wsa_separation import dsp
from wsa_separation.core import Rng
from wsa_separation.errors import ConfigError, DimensionError, NonFiniteLossError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_mse: float = 1.0
    lambda_cos: float = 1.0

    def __post_init__(self):
        if self.lambda_mse < 0 or self.lambda_cos < 0:
            raise ConfigError('loss weights must be >= 0, got %s' % (self,))


@dataclass
class LossBreakdown:
    """Loss terms as scalar tensors; `total` carries the graph."""

    recon: torch.Tensor
    distill_mse: torch.Tensor
    distill_cos: torch.Tensor
    total: torch.Tensor

    def as_row(self):
        return {'recon': self.recon.item(), 'distill_mse': self.distill_mse.item(),
                'distill_cos': self.distill_cos.item(), 'total': self.total.item()}


def recon_loss(est, target, cfgs=None):
    """Mean absolute error in time plus per-resolution mean absolute (re, im) STFT error."""
    if est.samples.shape != target.samples.shape:
        raise DimensionError('estimate %s and target %s differ in shape'
                             % (tuple(est.samples.shape), tuple(target.samples.shape)))
    if cfgs is None:
        cfgs = dsp.loss_resolutions(est.sample_rate)
    target = dsp.AudioBuffer(target.samples.to(est.samples.dtype), target.sample_rate)
    loss = (est.samples - target.samples).abs().mean()
    for est_spec, target_spec in zip(dsp.multi_res_stft(est, cfgs), dsp.multi_res_stft(target, cfgs)):
        loss = loss + torch.view_as_real(est_spec - target_spec).abs().mean()
    return loss


def _flatten_examples(mask):
    """(examples, 2 * elements) real vectors, re then im; a 2-D mask is one example."""
    if mask.dim() < 3:
        mask = mask.unsqueeze(0)
    flat = mask.reshape(mask.shape[0], -1)
    return torch.cat([flat.real, flat.imag], dim=1)


def mask_distill_loss(m_s, m_t):
    """Returns (mse, 1 - cos) between student and teacher complex masks.

    The cosine is taken per example on real-flattened masks and averaged; an
    all-zero side counts as orthogonal.
    """
    if m_s.shape != m_t.shape:
        raise DimensionError('student mask %s and teacher mask %s differ in shape'
                             % (tuple(m_s.shape), tuple(m_t.shape)))
    m_t = m_t.to(m_s.dtype)
    mse = torch.view_as_real(m_s - m_t).pow(2).mean()

    a = _flatten_examples(m_s)
    b = _flatten_examples(m_t)
    norm_a = a.norm(dim=1, keepdim=True)
    norm_b = b.norm(dim=1, keepdim=True)
    zero_a = (norm_a == 0).squeeze(1)
    zero_b = (norm_b == 0).squeeze(1)
    if bool((zero_a & zero_b).any()):
        raise ValueError('cosine similarity undefined: both masks are all-zero')
    tiny = torch.finfo(a.dtype).tiny
    unit_a = a / norm_a.clamp_min(tiny)
    unit_b = b / norm_b.clamp_min(tiny)
    # for unit vectors 1 - cos = |a - b|^2 / 2, exactly 0 when equal
    cos_term = 0.5 * (unit_a - unit_b).pow(2).sum(dim=1) + 0.5 * (zero_a.to(a.dtype) + zero_b.to(a.dtype))
    return mse, cos_term.mean()


def total_loss(student_out, target, teacher_mask, weights=LossWeights(), cfgs=None):
    """L_recon + lambda_mse * mse + lambda_cos * (1 - cos).

    Args:
      student_out: (estimate AudioBuffer, complex mask) as returned by `separate`.
      target: ground-truth AudioBuffer.
      teacher_mask: the teacher's complex mask for the same mixture.
    """
    est, student_mask = student_out
    recon = recon_loss(est, target, cfgs)
    mse, cos_term = mask_distill_loss(student_mask, teacher_mask)
    total = recon + weights.lambda_mse * mse + weights.lambda_cos * cos_term
    return LossBreakdown(recon=recon, distill_mse=mse, distill_cos=cos_term, total=total)


def grad(loss_fn, params):
    """Reverse-mode gradients of `loss_fn()` for every tensor of `params`."""
    params = list(params)
    loss = loss_fn()
    if not bool(torch.isfinite(loss)):
        raise NonFiniteLossError('loss is %s' % loss.item())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    skip_threshold: float

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


def finite_diff_check(loss_fn, params, eps=1e-3, samples=50, seed=0, analytic=None,
                      min_magnitude=1e-8):
    """Compares analytic gradients with central differences on random coordinates.

    Args:
      loss_fn: callable returning the scalar loss for the current parameter values.
      params: parameter tensors perturbed in place (restored afterwards).
      eps: finite-difference step.
      samples: number of random coordinates.
      seed: Rng seed choosing the coordinates.
      analytic: gradients aligned with `params`; computed with `grad` when None.
      min_magnitude: numeric derivatives smaller than this are skipped and reported.

    Returns:
      A GradCheckReport; relative error is |analytic - numeric| / max(1e-6, |numeric|).
    """
    params = list(params)
    if analytic is None:
        analytic = grad(loss_fn, params)
    sizes = np.cumsum([p.numel() for p in params])
    rng = Rng(seed)
    max_error = 0.0
    checked = skipped = 0
    with torch.no_grad():
        base = float(loss_fn())
        # below this the central difference drowns in rounding noise
        floor = max(min_magnitude,
                    1e5 * torch.finfo(params[0].dtype).eps * abs(base) / eps)
        for _ in range(samples):
            flat = rng.randint(int(sizes[-1]))
            index = int(np.searchsorted(sizes, flat, side='right'))
            offset = flat - (int(sizes[index - 1]) if index else 0)
            values = params[index].view(-1)
            original = values[offset].item()
            values[offset] = original + eps
            upper = values[offset].item()
            f_plus = float(loss_fn())
            values[offset] = original - eps
            lower = values[offset].item()
            f_minus = float(loss_fn())
            values[offset] = original
            numeric = (f_plus - f_minus) / (upper - lower)
            if abs(numeric) < floor:
                skipped += 1
                continue
            exact = float(analytic[index].reshape(-1)[offset])
            max_error = max(max_error, abs(exact - numeric) / max(1e-6, abs(numeric)))
            checked += 1
    LOGGER.info('Gradient check: %d coordinate(s) checked, %d skipped below %.3g, '
                'max relative error %.3g', checked, skipped, floor, max_error)
    return GradCheckReport(max_rel_error=max_error, checked=checked, skipped=skipped,
                           skip_threshold=floor)
