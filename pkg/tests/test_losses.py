import numpy as np
import pytest
import torch

from wsa_separation import dsp
from wsa_separation.errors import ConfigError, DimensionError, NonFiniteLossError
from wsa_separation.losses import (LossWeights, finite_diff_check, grad, mask_distill_loss,
                                   recon_loss, total_loss)
from wsa_separation.model import ModelConfig, init_toy_model, separate


def _audio(seed, channels=1, length=4000):
    gen = np.random.default_rng(seed)
    samples = gen.uniform(-0.3, 0.3, (channels, length)).astype(np.float32)
    return dsp.AudioBuffer(torch.from_numpy(samples), 16000)


def _mask(seed, shape=(2, 33, 6)):
    gen = torch.Generator().manual_seed(seed)
    return torch.complex(torch.randn(*shape, generator=gen), torch.randn(*shape, generator=gen))


def test_loss_weights():
    assert LossWeights() == LossWeights(lambda_mse=1.0, lambda_cos=1.0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_mse=-1.0)


def test_recon_loss_identical_is_zero():
    audio = _audio(0)
    assert float(recon_loss(audio, audio)) == 0.0


def test_recon_loss_constant_offset():
    target = _audio(1)
    est = dsp.AudioBuffer(target.samples + 0.25, 16000)
    assert float(recon_loss(est, target, cfgs=[])) == pytest.approx(0.25, rel=1e-5)
    assert float(recon_loss(est, target)) > 0.25


def test_recon_loss_symmetric():
    a = _audio(2)
    b = _audio(3)
    assert float(recon_loss(a, b)) == pytest.approx(float(recon_loss(b, a)), rel=1e-6)


def test_recon_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        recon_loss(_audio(0, length=4000), _audio(0, length=3999))


def test_mask_distill_identical():
    mask = _mask(0)
    mse, cos_term = mask_distill_loss(mask, mask.clone())
    assert float(mse) == 0.0 and float(cos_term) == 0.0


def test_mask_distill_antiparallel():
    mask = _mask(1)
    mse, cos_term = mask_distill_loss(-mask, mask)
    assert float(cos_term) == pytest.approx(2.0, abs=1e-6)
    expected = 4 * torch.view_as_real(mask).pow(2).mean()
    assert float(mse) == pytest.approx(float(expected), rel=1e-5)


def test_mask_distill_orthogonal():
    ones = torch.ones(1, 10, 4)
    real = torch.complex(ones, torch.zeros_like(ones))
    imag = torch.complex(torch.zeros_like(ones), ones)
    _, cos_term = mask_distill_loss(real, imag)
    assert float(cos_term) == pytest.approx(1.0, abs=1e-6)


def test_mask_distill_zero_masks():
    zero = torch.zeros(1, 5, 3, dtype=torch.complex64)
    with pytest.raises(ValueError):
        mask_distill_loss(zero, zero)
    _, cos_term = mask_distill_loss(zero, _mask(2, (1, 5, 3)))
    assert float(cos_term) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        mask_distill_loss(_mask(0, (1, 5, 3)), _mask(0, (1, 5, 4)))


def test_mask_distill_ranges():
    for seed in range(5):
        mse, cos_term = mask_distill_loss(_mask(seed), _mask(seed + 10))
        assert float(mse) >= 0.0
        assert 0.0 <= float(cos_term) <= 2.0


def test_total_loss_additivity():
    est = _audio(4)
    target = _audio(5)
    student = _mask(3)
    teacher = _mask(4)
    weights = LossWeights(lambda_mse=0.5, lambda_cos=2.0)
    losses = total_loss((est, student), target, teacher, weights)
    expected = losses.recon + 0.5 * losses.distill_mse + 2.0 * losses.distill_cos
    assert float(losses.total) == pytest.approx(float(expected), abs=1e-6)
    row = losses.as_row()
    assert set(row) == {'recon', 'distill_mse', 'distill_cos', 'total'}
    assert all(type(value) is float for value in row.values())
    assert row['total'] == losses.total.item()

    only_recon = total_loss((est, student), target, teacher, LossWeights(0.0, 0.0))
    assert float(only_recon.total) == pytest.approx(float(only_recon.recon))

    perfect = total_loss((target, teacher), target, teacher)
    assert float(perfect.total) == 0.0


def test_grad_scalar_quadratic():
    w = torch.tensor(2.0, requires_grad=True)
    x, y = 3.0, 1.0
    (g,) = grad(lambda: (w * x - y) ** 2, [w])
    assert float(g) == pytest.approx(2 * (2.0 * x - y) * x)


def test_grad_unused_parameter_is_zero():
    w = torch.tensor(1.0, requires_grad=True)
    unused = torch.ones(3, requires_grad=True)
    grads = grad(lambda: w * 2, [w, unused])
    assert torch.equal(grads[1], torch.zeros(3))


def test_grad_zero_input_zero_target():
    model = init_toy_model(ModelConfig.toy(), 0)
    silence = dsp.AudioBuffer(torch.zeros(1, 2000), 16000)

    def loss_fn():
        estimate, _ = separate(model, silence)
        return recon_loss(estimate, silence)

    params = [head.bias for head in model.band_out]
    for g in grad(loss_fn, params):
        assert bool((g == 0).all())


def test_grad_non_finite():
    w = torch.tensor(1.0, requires_grad=True)
    with pytest.raises(NonFiniteLossError):
        grad(lambda: w * float('nan'), [w])


def test_finite_diff_check_quadratic():
    gen = torch.Generator().manual_seed(0)
    w = torch.randn(10, generator=gen, dtype=torch.float64).requires_grad_()
    x = torch.randn(10, generator=gen, dtype=torch.float64)
    y = torch.randn(10, generator=gen, dtype=torch.float64)
    before = w.detach().clone()
    report = finite_diff_check(lambda: ((w * x - y) ** 2).sum(), [w])
    assert report.checked + report.skipped == 50
    assert report.checked > 0
    assert report.max_rel_error <= 1e-6
    assert torch.equal(w.detach(), before)


def test_finite_diff_check_detects_wrong_gradient():
    w = torch.ones(4, dtype=torch.float64, requires_grad=True)
    report = finite_diff_check(lambda: (w ** 2).sum(), [w], analytic=[torch.zeros(4)])
    assert not report.passed(1e-2)
