import copy
import itertools

import numpy as np
import pytest
import torch

from wsa_separation.attention import WsaConfig
from wsa_separation.errors import ConfigError, NonFiniteLossError
from wsa_separation.losses import LossWeights
from wsa_separation.model import ModelConfig, convert_to_wsa, init_toy_model
from wsa_separation.training import (check_gradients, distill_demo, distill_loop, distill_ratio,
                                     pretrain, synthetic_pairs, teacher_labelled, tolerance)


def test_synthetic_pairs_deterministic():
    a = synthetic_pairs(3)
    b = synthetic_pairs(3)
    for _ in range(3):
        (mix_a, target_a), (mix_b, target_b) = next(a), next(b)
        assert torch.equal(mix_a.samples, mix_b.samples)
        assert torch.equal(target_a.samples, target_b.samples)
    mix, target = next(synthetic_pairs(4, seconds=0.25, channels=2))
    assert mix.samples.shape == (2, 4000) and mix.sample_rate == 16000
    assert not torch.equal(mix.samples, target.samples)
    assert float(mix.samples.abs().max()) < 1.0


def test_teacher_labelled_targets():
    teacher = init_toy_model(ModelConfig.toy(), 0)
    mix, target = next(teacher_labelled(synthetic_pairs(1), teacher))
    assert target.samples.shape == mix.samples.shape
    assert not target.samples.requires_grad


def test_distill_loop_identical_student_starts_at_zero():
    teacher = init_toy_model(ModelConfig.toy(), 0)
    student = copy.deepcopy(teacher)
    history = distill_loop(teacher, student, synthetic_pairs(0), steps=3)
    assert len(history) == 3
    assert history[0]['distill_mse'] == 0.0
    assert history[0]['distill_cos'] == 0.0
    assert history[0]['recon'] > 0.0


def test_distill_loop_deterministic():
    def run():
        teacher = init_toy_model(ModelConfig.toy(), 2)
        student = convert_to_wsa(teacher, WsaConfig(window=10, sinks=8))
        return distill_loop(teacher, student, synthetic_pairs(5), steps=4)

    assert run() == run()


def test_distill_loop_non_finite():
    teacher = init_toy_model(ModelConfig.toy(), 0)
    student = copy.deepcopy(teacher)
    # inf * 0 on the identical-student mse term
    weights = LossWeights(lambda_mse=float('inf'))
    with pytest.raises(NonFiniteLossError) as excinfo:
        distill_loop(teacher, student, synthetic_pairs(0), steps=2, weights=weights)
    assert excinfo.value.step == 0


def test_distill_ratio():
    history = [{'distill_mse': 1.0, 'distill_cos': 1.0}] * 50 + \
        [{'distill_mse': 0.25, 'distill_cos': 0.25}] * 50
    assert distill_ratio(history) == pytest.approx(0.25)


def test_pretrain_fits_reference_targets():
    teacher = init_toy_model(ModelConfig.toy(), 0)
    clips = list(itertools.islice(synthetic_pairs(1), 2))
    history = pretrain(teacher, itertools.cycle(clips), steps=200)
    assert len(history) == 200
    assert np.mean(history[-20:]) < np.mean(history[:20])
    assert not teacher.training


def test_distill_demo_halves_distill_loss():
    result = distill_demo(seed=0)
    assert len(result.history) == 500
    assert all(np.isfinite(row["total"]) for row in result.history)
    assert np.mean(result.pretrain_history[-50:]) < np.mean(result.pretrain_history[:50])
    assert distill_ratio(result.history) <= 0.5


def test_distill_demo_teacher_targets():
    result = distill_demo(seed=0, steps=3, pretrain_steps=2, pool=1, targets="teacher")
    assert len(result.history) == 3
    assert result.student.config.attention_mode == "wsa"


def test_distill_demo_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        distill_demo(targets="oracle")
    with pytest.raises(ConfigError):
        distill_demo(pool=0)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_gradients_match_finite_differences_f32(seed):
    report = check_gradients(seed=seed, precision='f32')
    assert report.checked > 0
    assert report.max_rel_error <= tolerance('f32')


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences_f64(seed):
    report = check_gradients(seed=seed, precision='f64')
    assert report.checked > 0
    assert report.max_rel_error <= tolerance('f64')
