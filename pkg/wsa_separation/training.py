"""Desk-scale distillation: synthetic mixtures, the Adam loop and the toy gradient check."""
import copy
import itertools
import logging
from dataclasses import dataclass

import numpy as np
import torch

from wsa_separation.attention import WsaConfig
from wsa_separation.core import Rng
from wsa_separation.dsp import AudioBuffer
from wsa_separation.errors import ConfigError, NonFiniteLossError
from wsa_separation.losses import LossWeights, finite_diff_check, grad, recon_loss, total_loss
from wsa_separation.model import ModelConfig, SepModel, convert_to_wsa, init_toy_model, separate

LOGGER = logging.getLogger(__name__)

_CHORDS = ((1.0, 1.25, 1.5), (1.0, 1.2, 1.5), (1.0, 4.0 / 3.0, 2.0), (1.0, 1.5, 2.0))
DEMO_TARGETS = ('reference', 'teacher')


def _bandpass_noise(noise, shape, sample_rate, low_hz, high_hz):
    spectrum = np.fft.rfft(noise.standard_normal(shape), axis=-1)
    freqs = np.fft.rfftfreq(shape[-1], d=1.0 / sample_rate)
    spectrum[..., (freqs < low_hz) | (freqs > high_hz)] = 0
    filtered = np.fft.irfft(spectrum, n=shape[-1], axis=-1)
    return filtered / max(float(np.abs(filtered).max()), 1e-12)


def synthetic_pairs(seed, sample_rate=16000, seconds=0.5, channels=1):
    """Endless (mixture, target) AudioBuffer pairs.

    Target: a random sinusoid chord plus a few enveloped noise bursts.
    Interference: band-passed noise.
    """
    length = int(round(seconds * sample_rate))
    if length < 1:
        raise ConfigError('synthetic clips need at least one sample')
    rng = Rng(seed)
    noise = rng.numpy_generator()
    t = np.arange(length) / float(sample_rate)
    while True:
        target = np.zeros((channels, length))
        root = rng.uniform(110.0, 880.0)
        for ratio in _CHORDS[rng.randint(len(_CHORDS))]:
            phase = rng.uniform(0.0, 2 * np.pi)
            target += rng.uniform(0.05, 0.15) * np.sin(2 * np.pi * root * ratio * t + phase)
        burst = max(1, length // 10)
        for _ in range(1 + rng.randint(3)):
            start = rng.randint(max(1, length - burst))
            stop = min(length, start + burst)
            envelope = np.hanning(stop - start)
            target[:, start:stop] += 0.05 * noise.standard_normal((channels, stop - start)) * envelope
        low = rng.uniform(1000.0, 3000.0)
        interference = 0.1 * _bandpass_noise(noise, (channels, length), sample_rate,
                                             low, low + rng.uniform(500.0, 2000.0))
        mix = target + interference
        yield (AudioBuffer(torch.from_numpy(mix.astype(np.float32)), sample_rate),
               AudioBuffer(torch.from_numpy(target.astype(np.float32)), sample_rate))


def teacher_labelled(pairs, teacher):
    """Replaces each pair's target by the teacher's own estimate of the mixture."""
    for mix, _ in pairs:
        with torch.no_grad():
            estimate, _ = separate(teacher, mix)
        yield mix, estimate


def _adam(model, lr):
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def pretrain(model, data, steps, lr=1e-3, log_every=100):
    """Fits `model` to the ground-truth targets of `data` with L_recon alone.

    Returns the per-step reconstruction losses.
    """
    model.train()
    optimizer = _adam(model, lr)
    history = []
    for step in range(steps):
        mix, target = next(data)
        estimate, _ = separate(model, mix)
        loss = recon_loss(estimate, target)
        if not bool(torch.isfinite(loss)):
            raise NonFiniteLossError('reconstruction loss is %s at step %d' % (loss.item(), step),
                                     step=step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(loss.item())
        if log_every and (step + 1) % log_every == 0:
            LOGGER.info('Pretraining step %d/%d: recon %.5f', step + 1, steps, loss.item())
    model.eval()
    return history


def distill_loop(teacher, student, data, steps, lr=1e-3, weights=LossWeights(), log_every=50):
    """Trains `student` on L_total against a frozen `teacher`.

    Args:
      teacher: full-attention SepModel providing the distillation masks.
      student: SepModel being optimized, usually `convert_to_wsa(teacher, ...)`.
      data: iterator of (mixture, target) AudioBuffer pairs.
      steps: number of optimizer steps.
      lr: Adam learning rate.
      weights: LossWeights of the distillation terms.
      log_every: INFO progress period, in steps.

    Returns:
      One LossBreakdown.as_row() dict per step.
    """
    teacher.eval()
    optimizer = _adam(student, lr)
    history = []
    for step in range(steps):
        mix, target = next(data)
        with torch.no_grad():
            _, teacher_mask = separate(teacher, mix)
        losses = total_loss(separate(student, mix), target, teacher_mask, weights)
        if not bool(torch.isfinite(losses.total)):
            raise NonFiniteLossError('loss is %s at step %d' % (losses.total.item(), step), step=step)
        optimizer.zero_grad()
        losses.total.backward()
        optimizer.step()
        history.append(losses.as_row())
        if log_every and (step + 1) % log_every == 0:
            LOGGER.info('Step %d/%d: total %.5f (recon %.5f, mse %.5f, cos %.5f)',
                        step + 1, steps, losses.total.item(), losses.recon.item(),
                        losses.distill_mse.item(), losses.distill_cos.item())
    return history


def distill_ratio(history, span=50):
    """Mean distillation loss over the last `span` steps divided by the first `span`."""
    def distill(rows):
        return np.mean([row['distill_mse'] + row['distill_cos'] for row in rows])

    span = min(span, len(history))
    if not span:
        raise ConfigError('empty loss history')
    first = distill(history[:span])
    last = distill(history[-span:])
    if first == 0:
        return 0.0 if last == 0 else float('inf')
    return float(last / first)


@dataclass
class DemoResult:
    teacher: SepModel
    student: SepModel
    pretrain_history: list
    history: list


def distill_demo(seed=0, steps=500, pretrain_steps=1500, lr=1e-3, window=10, sinks=8,
                 seconds=0.5, pool=4, targets='reference', config=None, weights=LossWeights()):
    """Desk-scale distillation run.

    A full-attention teacher is first fitted to `pool` synthetic clips, then
    copied into a WSA student distilled on the same clips.

    Args:
      targets: 'reference' trains L_recon on the synthetic sources, 'teacher'
        on the teacher's own estimates.
    """
    if targets not in DEMO_TARGETS:
        raise ConfigError('targets must be one of %s, got %s' % (', '.join(DEMO_TARGETS), targets))
    if pool < 1:
        raise ConfigError('the clip pool needs at least one clip, got %d' % pool)
    config = config or ModelConfig.toy()
    clips = list(itertools.islice(
        synthetic_pairs(seed + 1, sample_rate=config.stft.sample_rate, seconds=seconds), pool))
    teacher = init_toy_model(config, seed)
    pretrain_history = pretrain(teacher, itertools.cycle(clips), pretrain_steps, lr=lr)
    student = convert_to_wsa(teacher, WsaConfig(window=window, sinks=sinks))
    data = itertools.cycle(clips)
    if targets == 'teacher':
        data = teacher_labelled(data, teacher)
    history = distill_loop(teacher, student, data, steps, lr=lr, weights=weights)
    return DemoResult(teacher=teacher, student=student, pretrain_history=pretrain_history,
                      history=history)


def gradcheck_config():
    """The small model the gradient check runs on."""
    return ModelConfig(num_bands=4, model_dim=16, heads=2, head_dim=8, blocks=1)


def check_gradients(seed=0, precision='f32', samples=50, weights=LossWeights()):
    """Verifies analytic L_total gradients of a WSA student against finite differences.

    Gradients are computed by autograd in `precision`; the central differences
    always run on a float64 copy of the student with a 1e-6 step.
    """
    if precision not in ('f32', 'f64'):
        raise ConfigError('precision must be f32 or f64, got %s' % precision)
    dtype = torch.float32 if precision == 'f32' else torch.float64
    config = gradcheck_config()
    teacher = init_toy_model(config, seed)
    student = convert_to_wsa(teacher, WsaConfig(window=10, sinks=8))
    rng = Rng(seed + 1)
    with torch.no_grad():
        for layer in student.modules():
            if getattr(layer, 'sink_kqv', None) is not None:
                layer.sink_kqv.copy_(rng.uniform_tensor(layer.sink_kqv.shape, -0.1, 0.1))
    mix, target = next(synthetic_pairs(seed, sample_rate=config.stft.sample_rate, seconds=0.25))
    with torch.no_grad():
        _, teacher_mask = separate(teacher, mix)

    def loss_of(model):
        return lambda: total_loss(separate(model, mix), target, teacher_mask, weights).total

    student = student.to(dtype)
    analytic = grad(loss_of(student), list(student.parameters()))
    reference = copy.deepcopy(student).double()
    report = finite_diff_check(loss_of(reference), list(reference.parameters()), eps=1e-6,
                               samples=samples, seed=seed, analytic=analytic,
                               min_magnitude=1e-4 if precision == 'f32' else 1e-8)
    return report


def tolerance(precision):
    return 1e-2 if precision == 'f32' else 1e-4
