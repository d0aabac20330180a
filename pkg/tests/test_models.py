import numpy as np
import pytest
import torch

from scarfuse.errors import ConfigurationError, DataError, ShapeError
from scarfuse.models import (
    EcgAutoencoder, EcgDecoder, EcgEncoder, FeatureMap, FusionSegmenter,
    ModelConfig, TemporalGatedFusion, UNetBackbone, fuse_features,
)

torch.manual_seed(0)


# ------------------------------------------------------------------- U-Net

def test_encode_to_mid_shapes():
    net = UNetBackbone(in_channels=18, base_width=16, depth=4, tap_depth=2)
    f, skips = net.encode_to_mid(torch.randn(2, 18, 64, 64))
    assert f.values.shape == (2, 64, 16, 16)
    assert f.stage == 2
    assert [tuple(s.shape) for s in skips] == [(2, 16, 64, 64), (2, 32, 32, 32)]


def test_forward_equals_encode_then_decode():
    net = UNetBackbone()
    net.eval()
    x = torch.randn(1, 18, 64, 64)
    with torch.no_grad():
        whole = net(x)
        f, skips = net.encode_to_mid(x)
        pieces = net.decode_segment(f, skips)
    assert torch.equal(whole, pieces)
    assert whole.shape == (1, 4, 64, 64)


def test_unet_input_validation():
    net = UNetBackbone()
    with pytest.raises(ShapeError, match="18"):
        net.encode_to_mid(torch.randn(1, 3, 64, 64))
    with pytest.raises(ShapeError, match="divisible"):
        net.encode_to_mid(torch.randn(1, 18, 60, 60))
    bad = torch.randn(1, 18, 64, 64)
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(DataError):
        net.encode_to_mid(bad)


def test_decode_segment_validates_stage_and_skips():
    net = UNetBackbone()
    f, skips = net.encode_to_mid(torch.randn(1, 18, 64, 64))
    with pytest.raises(ShapeError, match="stage"):
        net.decode_segment(FeatureMap(values=f.values, stage=1), skips)
    with pytest.raises(ShapeError, match="skip"):
        net.decode_segment(f, skips[:1])


def test_zero_input_zero_bias_propagates_zero():
    net = UNetBackbone()
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith(".bias"):
                p.zero_()
    f, _ = net.encode_to_mid(torch.zeros(1, 18, 64, 64))
    assert torch.equal(f.values, torch.zeros_like(f.values))


def test_tap_depth_must_be_interior():
    with pytest.raises(ShapeError):
        UNetBackbone(depth=4, tap_depth=0)
    with pytest.raises(ShapeError):
        UNetBackbone(depth=4, tap_depth=4)


# --------------------------------------------------------------------- ECG

def test_ecg_encoder_shapes_and_stochasticity():
    enc = EcgEncoder()
    latent = enc(torch.randn(3, 12, 600))
    assert latent.z.shape == (3, 64)
    assert latent.cross_lead_attention.shape == (3, 12, 12)
    assert latent.temporal_attention.shape == (3, 12, 75)
    rows = latent.cross_lead_attention.sum(dim=2)
    assert torch.allclose(rows, torch.ones_like(rows), atol=1e-6)
    sums = latent.temporal_attention.sum(dim=2)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
    assert (latent.cross_lead_attention >= 0).all()


def test_ecg_encoder_is_batch_independent():
    enc = EcgEncoder()
    enc.eval()
    wave = torch.randn(1, 12, 128)
    with torch.no_grad():
        solo = enc(wave).z
        paired = enc(torch.cat([wave, torch.randn(1, 12, 128)], dim=0)).z
    assert torch.allclose(solo[0], paired[0], atol=1e-6)


def test_uniform_cross_lead_attention_when_query_is_zeroed():
    enc = EcgEncoder()
    with torch.no_grad():
        enc.q_proj.weight.zero_()
        enc.q_proj.bias.zero_()
    latent = enc(torch.randn(2, 12, 64))
    expected = torch.full((2, 12, 12), 1.0 / 12.0)
    assert torch.allclose(latent.cross_lead_attention, expected, atol=1e-7)


def test_ecg_encoder_input_validation():
    enc = EcgEncoder()
    with pytest.raises(ShapeError, match="12"):
        enc(torch.randn(1, 11, 600))
    with pytest.raises(ShapeError, match="divisible"):
        enc(torch.randn(1, 12, 100))
    with pytest.raises(ShapeError):
        enc(torch.randn(1, 12, 32))  # too short
    bad = torch.randn(1, 12, 64)
    bad[0, 0, 0] = float("inf")
    with pytest.raises(DataError):
        enc(bad)


def test_ecg_decoder_shape_and_zero_final_layer():
    dec = EcgDecoder(t_samples=600)
    out = dec(torch.randn(2, 64))
    assert out.shape == (2, 12, 600)
    with torch.no_grad():
        dec.up[-1].weight.zero_()
        dec.up[-1].bias.zero_()
    out = dec(torch.randn(2, 64))
    assert torch.equal(out, torch.zeros_like(out))


def test_autoencoder_reduces_reconstruction_error():
    torch.manual_seed(1)
    model = EcgAutoencoder(width=8, t_samples=64)
    rng = np.random.default_rng(2)
    base = np.sin(np.linspace(0, 4 * np.pi, 64))
    waves = np.stack([
        np.stack([base * a for a in rng.uniform(0.5, 1.5, size=12)])
        for _ in range(8)
    ])
    x = torch.from_numpy(waves).float()
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    with torch.no_grad():
        start = float(torch.nn.functional.mse_loss(model(x)[0], x))
    for _ in range(200):
        opt.zero_grad()
        recon, _ = model(x)
        loss = torch.nn.functional.mse_loss(recon, x)
        loss.backward()
        opt.step()
    assert float(loss.detach()) < 0.5 * start


# ------------------------------------------------------------------ fusion

def test_fuse_matches_scalar_loop_oracle():
    rng = np.random.default_rng(5)
    b, c, h, w_ = 2, 4, 8, 8
    f = rng.normal(size=(b, c, h, w_))
    f_ecg = rng.normal(size=(b, c, h, w_))
    gate = rng.dirichlet([1, 1], size=b)
    gamma = rng.normal(size=(b, c))
    beta = rng.normal(size=(b, c))

    f_mixed, f_fused = fuse_features(
        torch.from_numpy(f), torch.from_numpy(f_ecg), torch.from_numpy(gate),
        torch.from_numpy(gamma), torch.from_numpy(beta),
    )
    for bi in range(b):
        for ci in range(c):
            for i in range(h):
                for j in range(w_):
                    mixed = f[bi, ci, i, j] * gate[bi, 0] + f_ecg[bi, ci, i, j] * gate[bi, 1]
                    fused = f[bi, ci, i, j] + mixed * (1 + gamma[bi, ci]) + beta[bi, ci]
                    assert abs(float(f_mixed[bi, ci, i, j]) - mixed) < 1e-6
                    assert abs(float(f_fused[bi, ci, i, j]) - fused) < 1e-6


def test_gamma_minus_one_bypasses_fusion_bitwise():
    f = torch.randn(2, 8, 4, 4)
    f_ecg = torch.randn(2, 8, 4, 4)
    w = torch.softmax(torch.randn(2, 2), dim=1)
    _, f_fused = fuse_features(f, f_ecg, w, torch.full((2, 8), -1.0), torch.zeros(2, 8))
    assert torch.equal(f_fused, f)


def test_gate_starts_balanced_and_film_starts_neutral():
    fusion = TemporalGatedFusion(channels=8)
    w = fusion.gate_weights(torch.randn(3, 8, 4, 4), torch.randn(3, 64))
    assert torch.equal(w, torch.full((3, 2), 0.5))
    gamma, beta = fusion.temporal_film(torch.rand(3))
    assert torch.equal(gamma, torch.zeros(3, 8))
    assert torch.equal(beta, torch.zeros(3, 8))


def test_gate_rows_are_convex_after_perturbation():
    fusion = TemporalGatedFusion(channels=8)
    with torch.no_grad():
        for p in fusion.gate.parameters():
            p.add_(torch.randn_like(p))
    w = fusion.gate_weights(torch.randn(5, 8, 4, 4), torch.randn(5, 64))
    assert torch.allclose(w.sum(dim=1), torch.ones(5), atol=1e-6)
    assert (w >= 0).all() and (w <= 1).all()


def test_fusion_without_time_conditioning():
    fusion = TemporalGatedFusion(channels=8, use_time=False)
    assert not hasattr(fusion, "time_mlp")
    f = FeatureMap(values=torch.randn(2, 8, 4, 4), stage=2)
    state = fusion.fuse(f, torch.randn(2, 64), torch.rand(2))
    assert torch.equal(state.gamma, torch.zeros(2, 8))
    expected = f.values + state.f_mixed
    assert torch.allclose(state.f_fused.values, expected, atol=1e-7)


def test_fuse_state_shapes_and_projection_broadcast():
    fusion = TemporalGatedFusion(channels=8)
    f = FeatureMap(values=torch.randn(2, 8, 6, 6), stage=2)
    state = fusion.fuse(f, torch.randn(2, 64), torch.rand(2))
    assert state.f_fused.values.shape == (2, 8, 6, 6)
    assert state.f_fused.stage == 2
    assert state.w.shape == (2, 2)
    # the projected ECG map is spatially constant per channel
    assert torch.allclose(state.f_ecg.std(dim=(2, 3)), torch.zeros(2, 8), atol=1e-7)


def test_temporal_film_clamps_and_warns(caplog):
    fusion = TemporalGatedFusion(channels=4)
    with torch.no_grad():
        fusion.time_mlp[-1].weight.normal_()
    with caplog.at_level("WARNING"):
        g1, _ = fusion.temporal_film(torch.tensor([1.5]))
        g2, _ = fusion.temporal_film(torch.tensor([1.0]))
    assert any("clamp" in rec.message for rec in caplog.records)
    assert torch.allclose(g1, g2)


def test_fusion_latent_width_is_checked():
    fusion = TemporalGatedFusion(channels=8)
    with pytest.raises(ShapeError, match="64"):
        fusion.gate_weights(torch.randn(2, 8, 4, 4), torch.randn(2, 32))


# ----------------------------------------------------------- full network

def test_full_model_outputs():
    cfg = ModelConfig(t_samples=64)
    model = FusionSegmenter(cfg)
    out = model(torch.randn(2, 18, 64, 64), torch.randn(2, 12, 64), torch.rand(2))
    assert out.logits.shape == (2, 4, 64, 64)
    assert out.fusion.w.shape == (2, 2)
    assert out.latent.z.shape == (2, 64)
    assert out.ecg_recon.shape == (2, 12, 64)


def test_variant_names():
    assert ModelConfig().variant_name() == "full"
    assert ModelConfig(use_time=False).variant_name() == "no_time"
    assert ModelConfig(use_ecg=False, use_time=False).variant_name() == "image_prior"
    assert ModelConfig(use_prior=False, use_ecg=False, use_time=False).variant_name() == "baseline"


def test_baseline_ignores_prior_channels():
    torch.manual_seed(3)
    cfg = ModelConfig(use_prior=False, use_ecg=False, use_time=False)
    model = FusionSegmenter(cfg)
    model.eval()
    image = torch.randn(1, 1, 64, 64)
    prior_a = torch.randint(0, 2, (1, 17, 64, 64)).float()
    prior_b = torch.zeros(1, 17, 64, 64)
    with torch.no_grad():
        out_a = model(torch.cat([image, prior_a], dim=1))
        out_b = model(torch.cat([image, prior_b], dim=1))
    assert torch.equal(out_a.logits, out_b.logits)


def test_image_only_variant_has_no_ecg_modules():
    model = FusionSegmenter(ModelConfig(use_ecg=False, use_time=False))
    assert model.ecg_encoder is None and model.fusion is None
    out = model(torch.randn(1, 18, 64, 64))
    assert out.fusion is None and out.ecg_recon is None


def test_time_without_ecg_is_rejected():
    with pytest.raises(ConfigurationError):
        FusionSegmenter(ModelConfig(use_ecg=False, use_time=True))


def test_full_model_requires_waveform():
    model = FusionSegmenter(ModelConfig(t_samples=64))
    with pytest.raises(ConfigurationError):
        model(torch.randn(1, 18, 64, 64))


def test_param_groups_partition_everything():
    for cfg in (ModelConfig(t_samples=64),
                ModelConfig(use_time=False, t_samples=64),
                ModelConfig(use_ecg=False, use_time=False),
                ModelConfig(use_prior=False, use_ecg=False, use_time=False)):
        model = FusionSegmenter(cfg)
        groups = model.param_groups()
        seen = [name for params in groups.values() for name, _ in params]
        all_names = [name for name, _ in model.named_parameters()]
        assert sorted(seen) == sorted(all_names)
        ids_grouped = sorted(id(p) for params in groups.values() for _, p in params)
        ids_model = sorted(id(p) for p in model.parameters())
        assert ids_grouped == ids_model


def test_model_config_round_trip_and_unknown_keys():
    cfg = ModelConfig(base_width=8, use_time=False)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ConfigurationError, match="unknown"):
        ModelConfig.from_dict({"bogus_knob": 1})
