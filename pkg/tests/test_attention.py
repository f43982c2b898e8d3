import math

import pytest
import torch

from wsa_separation.attention import (AllocationTracker, FullAttention, WindowedSinkAttention,
                                      WsaConfig, attention_flops, build_kernel, full_attention,
                                      masked_attention_oracle, masked_attention_weights,
                                      rope_rotate, windowed_sink_attention, windowed_sink_oracle,
                                      wsa_mask)
from wsa_separation.core import Rng
from wsa_separation.errors import ConfigError, DimensionError, FullyMaskedRowError


def _qkv(shape, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(*shape, generator=gen, dtype=dtype) for _ in range(3)]


def test_wsa_config_validation():
    assert WsaConfig().window == 10 and WsaConfig().sinks == 8
    with pytest.raises(ConfigError):
        WsaConfig(window=9)
    with pytest.raises(ConfigError):
        WsaConfig(window=-2)
    with pytest.raises(ConfigError):
        WsaConfig(sinks=-1)


def test_wsa_mask_examples():
    cfg = WsaConfig(window=10, sinks=8)
    assert wsa_mask(3, 700, cfg)
    assert wsa_mask(700, 3, cfg)
    assert wsa_mask(100, 104, cfg)
    assert wsa_mask(100, 105, cfg)
    assert not wsa_mask(100, 106, cfg)


def test_full_attention_single_token():
    q, k, v = _qkv((1, 2, 1, 4))
    assert torch.allclose(full_attention(q, k, v), v)


def test_full_attention_saturated_selection():
    k = torch.eye(8).reshape(1, 1, 8, 8)
    v = torch.randn(1, 1, 8, 8, generator=torch.Generator().manual_seed(1))
    out = full_attention(50.0 * k, k, v)
    assert float((out - v).abs().max()) <= 1e-3


def test_full_attention_brute_force():
    q, k, v = _qkv((2, 2, 16, 8), seed=3, dtype=torch.float64)
    out = full_attention(q, k, v)
    expected = torch.zeros_like(v)
    for b in range(2):
        for h in range(2):
            for i in range(16):
                scores = [float(q[b, h, i] @ k[b, h, j]) / math.sqrt(8) for j in range(16)]
                top = max(scores)
                weights = [math.exp(s - top) for s in scores]
                total = sum(weights)
                for j in range(16):
                    expected[b, h, i] += weights[j] / total * v[b, h, j]
    assert float((out - expected).abs().max()) <= 1e-5


def test_full_attention_shape_mismatch():
    q, k, v = _qkv((1, 1, 4, 4))
    with pytest.raises(DimensionError):
        full_attention(q, k[..., :3], v)


def test_oracle_identity_masks():
    q, k, v = _qkv((1, 2, 12, 4), seed=5)
    assert torch.equal(masked_attention_oracle(q, k, v, lambda i, j: True), full_attention(q, k, v))
    out = masked_attention_oracle(q, k, v, lambda i, j: i == j)
    assert torch.allclose(out, v)


def test_oracle_fully_masked_row():
    q, k, v = _qkv((1, 1, 4, 4))
    with pytest.raises(FullyMaskedRowError):
        masked_attention_oracle(q, k, v, lambda i, j: (i > 0) & (i == j))


def test_oracle_zero_leakage_and_stochastic_rows():
    cfg = WsaConfig(window=4, sinks=2)
    q, k, _ = _qkv((2, 2, 40, 8), seed=6)
    weights = masked_attention_weights(q, k, lambda i, j: wsa_mask(i, j, cfg))
    index = torch.arange(40)
    outside = ~wsa_mask(index.unsqueeze(1), index.unsqueeze(0), cfg)
    assert bool((weights[..., outside] == 0).all())
    assert float((weights.sum(dim=-1) - 1).abs().max()) <= 1e-6


def test_blockwise_matches_oracle_random_configs():
    rng = Rng(2024)
    for trial in range(100):
        batch = 1 + rng.randint(2)
        heads = 1 + rng.randint(4)
        seq = 1 + rng.randint(256)
        head_dim = 1 + rng.randint(32)
        window = (0, 2, 10, 64)[rng.randint(4)]
        sinks = (0, 1, 8)[rng.randint(3)]
        cfg = WsaConfig(window=window, sinks=sinks)
        q, k, v = _qkv((batch, heads, seq, head_dim), seed=trial)
        sink_kqv = rng.uniform_tensor((heads, sinks, 3, head_dim), -1.0, 1.0) if sinks else None
        out = windowed_sink_attention(q, k, v, sink_kqv, cfg)
        expected = windowed_sink_oracle(q, k, v, sink_kqv, cfg)
        assert out.shape == v.shape
        assert float((out - expected).abs().max()) <= 1e-5, (batch, heads, seq, head_dim, cfg)


@pytest.mark.parametrize("seq", [1, 37, 64, 65, 200])
def test_covering_window_equals_full_attention(seq):
    q, k, v = _qkv((2, 3, seq, 8), seed=seq)
    cfg = WsaConfig(window=2 * seq, sinks=0)
    out = windowed_sink_attention(q, k, v, None, cfg)
    assert float((out - full_attention(q, k, v)).abs().max()) <= 1e-6


def test_self_only_window():
    q, k, v = _qkv((1, 1, 1, 4))
    out = windowed_sink_attention(q, k, v, None, WsaConfig(window=0, sinks=0))
    assert torch.allclose(out, v)


def test_sink_parameter_shape():
    q, k, v = _qkv((1, 2, 10, 4))
    cfg = WsaConfig(window=2, sinks=3)
    with pytest.raises(DimensionError):
        windowed_sink_attention(q, k, v, None, cfg)
    with pytest.raises(DimensionError):
        windowed_sink_attention(q, k, v, torch.zeros(2, 3, 3, 5), cfg)


@pytest.mark.parametrize("seq", [256, 801, 4000])
def test_memory_contract(seq):
    cfg = WsaConfig(window=10, sinks=8)
    heads, head_dim = 2, 16
    q, k, v = _qkv((1, heads, seq, head_dim), seed=seq)
    sink_kqv = torch.zeros(heads, cfg.sinks, 3, head_dim)
    tracker = AllocationTracker()
    windowed_sink_attention(q, k, v, sink_kqv, cfg, tracker=tracker)
    assert tracker.count > 0
    assert tracker.peak <= 64 * seq * (cfg.window + cfg.sinks + 1)
    # the score buffers stay within one tile, whatever the length
    assert tracker.peak <= max(attention_flops(seq, cfg).peak_scores, seq * head_dim)
    assert tracker.peak < seq * seq


def test_flops_reference_numbers():
    full = attention_flops(801)
    assert full.score_count == 641601
    wsa = attention_flops(801, WsaConfig(window=10, sinks=8))
    assert wsa.score_count == 14418
    assert abs(wsa.reduction_vs_full - 44.5) <= 0.05
    reductions = [round(attention_flops(801, WsaConfig(window=w, sinks=0),
                                        mode='window-only').reduction_vs_full)
                  for w in (200, 100, 50, 20, 10)]
    assert reductions == [4, 8, 16, 40, 80]


def test_flops_clamp_and_errors():
    report = attention_flops(100, WsaConfig(window=200, sinks=0), mode='window-only')
    assert report.score_count == 10000 and report.reduction_vs_full == 1.0
    assert attention_flops(5, WsaConfig(window=0, sinks=0), mode='window-only').score_count == 5
    assert attention_flops(801, WsaConfig(), mode='window-only').sinks == 0
    assert 'fewer' in attention_flops(801, WsaConfig()).describe()
    with pytest.raises(ConfigError):
        attention_flops(0)
    with pytest.raises(ConfigError):
        attention_flops(10, mode='window-only')


def test_rope_properties():
    x = torch.randn(2, 3, 10, 8, generator=torch.Generator().manual_seed(0))
    rotated = rope_rotate(x)
    assert torch.allclose(rotated[..., 0, :], x[..., 0, :])
    assert float((rotated.norm(dim=-1) - x.norm(dim=-1)).abs().max()) <= 1e-5
    with pytest.raises(DimensionError):
        rope_rotate(torch.zeros(4, 5))


def test_rope_relative_positions():
    gen = torch.Generator().manual_seed(4)
    q = torch.randn(1, 16, generator=gen)
    k = torch.randn(1, 16, generator=gen)

    def score(p1, p2):
        rq = rope_rotate(q, positions=torch.tensor([p1]))
        rk = rope_rotate(k, positions=torch.tensor([p2]))
        return float((rq * rk).sum())

    assert abs(score(3, 1) - score(7, 5)) <= 1e-4


def test_kernels():
    assert isinstance(build_kernel('full'), FullAttention)
    kernel = build_kernel('wsa', WsaConfig(window=4, sinks=2))
    assert isinstance(kernel, WindowedSinkAttention)
    assert kernel.num_sinks == 2 and kernel.mode == 'wsa'
    with pytest.raises(ConfigError):
        build_kernel('wsa')
    with pytest.raises(ConfigError):
        build_kernel('sparse')
    q, k, v = _qkv((1, 1, 6, 4))
    with pytest.raises(NotImplementedError):
        kernel.weights(q, k)
    with pytest.raises(DimensionError):
        FullAttention().attend(q, k, v, torch.zeros(1, 1, 3, 4))
