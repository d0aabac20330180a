import json

import numpy as np
import pytest
import torch
from torch import nn

from scarfuse import checkpoint, data, synth, training
from scarfuse.errors import ConfigurationError, DataError
from scarfuse.models import FusionSegmenter, ModelConfig


# ---------------------------------------------------------------- schedules

def test_poly_decay_frozen_values():
    assert training.poly_decay_lr(1e-2, 0, 100) == pytest.approx(1e-2)
    # half-way with power 0.9: 1e-2 * 0.5^0.9
    assert training.poly_decay_lr(1e-2, 50, 100) == pytest.approx(5.358867312681466e-3, abs=1e-12)
    assert training.poly_decay_lr(1e-2, 100, 100) == 0.0
    assert training.poly_decay_lr(1e-2, 150, 100) == 0.0


def test_poly_decay_validates():
    with pytest.raises(ConfigurationError):
        training.poly_decay_lr(1e-2, -1, 100)
    with pytest.raises(ConfigurationError):
        training.poly_decay_lr(1e-2, 0, 0)


def test_warmup_cosine_endpoints():
    peak, floor = 1e-3, 1e-6
    lr0 = training.warmup_cosine_lr(0, 100, 10, peak, floor)
    assert lr0 == pytest.approx(peak / 10)
    assert training.warmup_cosine_lr(9, 100, 10, peak, floor) == pytest.approx(peak)
    mid = training.warmup_cosine_lr(55, 100, 10, peak, floor)
    assert mid == pytest.approx((peak + floor) / 2)
    assert training.warmup_cosine_lr(100, 100, 10, peak, floor) == floor
    assert training.warmup_cosine_lr(400, 100, 10, peak, floor) == floor


def test_warmup_cosine_validates():
    with pytest.raises(ConfigurationError):
        training.warmup_cosine_lr(0, 100, 200, 1e-3)
    with pytest.raises(ConfigurationError):
        training.warmup_cosine_lr(0, 100, 10, 1e-7, 1e-6)


# --------------------------------------------------------------- optimizers

def _small_model_cfg(**kw):
    return ModelConfig(base_width=8, ecg_width=8, attn_dim=16, t_samples=600, **kw)


def test_build_optimizers_groups_and_hyperparams():
    model = FusionSegmenter(_small_model_cfg())
    cfg = training.TrainConfig(model=model.config)
    bundle = training.build_optimizers(model, cfg, max_steps=100, warmup_steps=10)
    assert set(bundle.optimizers) == {"mri_backbone", "ecg_network", "fusion_gate"}
    sgd = bundle.optimizers["mri_backbone"]
    assert isinstance(sgd, torch.optim.SGD)
    assert sgd.defaults["momentum"] == 0.99 and sgd.defaults["nesterov"]
    assert sgd.defaults["weight_decay"] == pytest.approx(3e-5)
    assert isinstance(bundle.optimizers["ecg_network"], torch.optim.AdamW)
    assert bundle.optimizers["ecg_network"].defaults["weight_decay"] == pytest.approx(5e-5)
    assert bundle.optimizers["fusion_gate"].defaults["weight_decay"] == pytest.approx(1e-4)


def test_build_optimizers_rejects_orphan_parameters():
    model = FusionSegmenter(_small_model_cfg())
    model.stray = nn.Parameter(torch.zeros(3))
    cfg = training.TrainConfig(model=model.config)
    with pytest.raises(ConfigurationError, match="stray"):
        training.build_optimizers(model, cfg, max_steps=10, warmup_steps=0)


def test_image_only_model_gets_backbone_optimizer_only():
    model = FusionSegmenter(_small_model_cfg(use_ecg=False, use_time=False))
    cfg = training.TrainConfig(model=model.config)
    bundle = training.build_optimizers(model, cfg, max_steps=10, warmup_steps=0)
    assert set(bundle.optimizers) == {"mri_backbone"}


def test_bundle_applies_scheduled_lr():
    model = FusionSegmenter(_small_model_cfg())
    cfg = training.TrainConfig(model=model.config)
    bundle = training.build_optimizers(model, cfg, max_steps=100, warmup_steps=10)
    for p in model.parameters():
        p.grad = torch.zeros_like(p)
    bundle.step()
    assert bundle.optimizers["mri_backbone"].param_groups[0]["lr"] == pytest.approx(
        training.poly_decay_lr(cfg.lr_backbone, 0, 100, cfg.poly_power))
    assert bundle.optimizers["ecg_network"].param_groups[0]["lr"] == pytest.approx(
        training.warmup_cosine_lr(0, 100, 10, cfg.lr_ecg, cfg.lr_floor))
    assert bundle.global_step == 1


# -------------------------------------------------------------- train_step

def _tiny_batch(rng, n=4, size=32, t=600):
    image_prior = rng.normal(size=(n, 18, size, size)).astype(np.float32)
    labels = rng.integers(0, 4, size=(n, size, size))
    waveform = rng.normal(size=(n, 12, t)).astype(np.float32)
    return {
        "image_prior": torch.from_numpy(image_prior),
        "labels": torch.from_numpy(labels),
        "waveform": torch.from_numpy(waveform),
        "t_norm": torch.rand(n),
    }


def test_train_step_reduces_loss_on_fixed_batch():
    torch.manual_seed(0)
    model = FusionSegmenter(_small_model_cfg())
    cfg = training.TrainConfig(model=model.config)
    bundle = training.build_optimizers(model, cfg, max_steps=60, warmup_steps=5)
    batch = _tiny_batch(np.random.default_rng(0))
    first = training.train_step(model, batch, bundle, 0.1, cfg)
    for _ in range(29):
        last = training.train_step(model, batch, bundle, 0.1, cfg)
    assert last.l_total < first.l_total
    assert last.l_seg > 0 and last.lambda_ecg == 0.1


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    model = FusionSegmenter(_small_model_cfg())
    cfg = training.TrainConfig(model=model.config)
    bundle = training.build_optimizers(model, cfg, max_steps=10, warmup_steps=2)
    for p in model.parameters():
        p.grad = torch.randn_like(p) * 1e-3
    bundle.step()
    path = tmp_path / "model.ckpt"
    checkpoint.save_checkpoint(path, cfg.to_dict(), model,
                               optimizer_states=bundle.state_dict(),
                               meta={"epochs_completed": 1})
    bundle2 = checkpoint.load_checkpoint(path)
    assert bundle2.meta["epochs_completed"] == 1
    assert bundle2.config["model"]["base_width"] == 8
    state = model.state_dict()
    for name, arr in bundle2.model_state.items():
        assert np.array_equal(arr, state[name].numpy())
    assert bundle2.optimizer_state["global_step"] == 1
    # momentum buffers survive the round trip
    sgd_state = bundle2.optimizer_state["groups"]["mri_backbone"]["state"]
    assert any("momentum_buffer" in s for s in sgd_state.values())


def test_checkpoint_is_byte_deterministic(tmp_path):
    model = FusionSegmenter(_small_model_cfg(use_ecg=False, use_time=False))
    cfg = training.TrainConfig(model=model.config)
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", cfg.to_dict(), model)
    checkpoint.save_checkpoint(tmp_path / "b.ckpt", cfg.to_dict(), model)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    import zipfile

    model = FusionSegmenter(_small_model_cfg(use_ecg=False, use_time=False))
    cfg = training.TrainConfig(model=model.config)
    path = tmp_path / "model.ckpt"
    checkpoint.save_checkpoint(path, cfg.to_dict(), model)
    with zipfile.ZipFile(path) as zf:
        names = zf.namelist()
        contents = {n: zf.read(n) for n in names}
    blob_name = next(n for n in names if n.startswith("blobs/model/"))
    corrupted = bytearray(contents[blob_name])
    corrupted[-1] ^= 0xFF
    contents[blob_name] = bytes(corrupted)
    with zipfile.ZipFile(path, "w") as zf:
        for n in names:
            zf.writestr(n, contents[n])
    with pytest.raises(DataError, match="digest"):
        checkpoint.load_checkpoint(path)


def test_checkpoint_rejects_future_format(tmp_path):
    import zipfile

    path = tmp_path / "weird.ckpt"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps({
            "format_version": 99, "config": {}, "meta": {},
            "optimizers": {}, "blobs": {},
        }))
    with pytest.raises(DataError, match="version"):
        checkpoint.load_checkpoint(path)


# ---------------------------------------------------------------- pretrain

def test_pretrain_ecg_learns(tmp_dataset):
    _, samples = data.read_dataset(tmp_dataset)
    corpus = np.stack([
        data.median_tiled_waveform(s.ecg.waveform, 3) for s in samples.values()
    ])
    cfg = training.TrainConfig(model=_small_model_cfg(), pretrain_epochs=8,
                               pretrain_batch=4, seed=0)
    model, history = training.pretrain_ecg(corpus, cfg)
    assert len(history) == 8
    assert history[-1] < history[0]
    recon, latent = model(torch.from_numpy(corpus[:2]).float())
    assert recon.shape == (2, 12, 600)
    assert latent.z.shape == (2, 64)


def test_median_tiled_waveform():
    wave = np.zeros((12, 6))
    wave[0] = [1.0, 2.0, 1.0, 4.0, 1.0, 0.0]  # beats (1,2), (1,4), (1,0)
    out = data.median_tiled_waveform(wave, 3)
    assert out.shape == (12, 6)
    assert list(out[0]) == [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]
    with pytest.raises(DataError):
        data.median_tiled_waveform(wave, 4)


# --------------------------------------------------------------------- fit

@pytest.fixture(scope="module")
def tmp_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "tiny"
    synth.generate_dataset(out, 10, seed=0, cfg=synth.GeneratorConfig(size=32))
    return out


def _fit_cfg(epochs=3, **kw):
    kw.setdefault("seed", 0)
    return training.TrainConfig(
        epochs=epochs, batch_size=8, warmup_epochs=1,
        lambda_warmup_epochs=2, model=_small_model_cfg(), **kw
    )


def test_fit_writes_artifacts_and_summary(tmp_path, tmp_dataset):
    run = tmp_path / "run"
    summary = training.fit(_fit_cfg(), tmp_dataset, run)
    for name in ("best.ckpt", "final.ckpt", "train_log.csv", "val_log.csv",
                 "fusion_log.csv", "config.json", "summary.json"):
        assert (run / name).exists(), name
    assert summary["variant"] == "full"
    assert summary["epochs"] == 3
    assert 0.0 <= summary["best_val_dice"] <= 1.0
    assert summary["global_step"] == 3 * 4  # 28 train slices, batch 8
    on_disk = json.loads((run / "summary.json").read_text())
    assert on_disk == pytest.approx(summary)

    model, cfg, meta = training.load_model(run / "final.ckpt")
    assert meta["kind"] == "final" and meta["epochs_completed"] == 3
    assert cfg.model == _small_model_cfg()


def test_fit_is_deterministic(tmp_path, tmp_dataset):
    s1 = training.fit(_fit_cfg(epochs=2), tmp_dataset, tmp_path / "a")
    s2 = training.fit(_fit_cfg(epochs=2), tmp_dataset, tmp_path / "b")
    assert s1 == s2
    assert ((tmp_path / "a" / "final.ckpt").read_bytes()
            == (tmp_path / "b" / "final.ckpt").read_bytes())


def test_fit_seed_changes_trajectory(tmp_path, tmp_dataset):
    s1 = training.fit(_fit_cfg(epochs=2), tmp_dataset, tmp_path / "a")
    s2 = training.fit(_fit_cfg(epochs=2, seed=1), tmp_dataset, tmp_path / "b")
    assert s1["final_train_loss"] != s2["final_train_loss"]


def test_resume_reproduces_next_epoch_losses(tmp_path, tmp_dataset):
    full = training.fit(_fit_cfg(epochs=3), tmp_dataset, tmp_path / "full")
    stub = training.fit(_fit_cfg(epochs=3), tmp_dataset, tmp_path / "stub",
                        stop_after_epochs=2)
    assert stub["epochs"] == 2
    resumed = training.fit(_fit_cfg(epochs=3), tmp_dataset, tmp_path / "resumed",
                           resume_from=tmp_path / "stub" / "final.ckpt")

    def epoch2_losses(run):
        rows = (run / "train_log.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        e_idx, l_idx = header.index("epoch"), header.index("l_total")
        return [float(r.split(",")[l_idx]) for r in rows[1:]
                if r.split(",")[e_idx] == "2"]

    losses_full = epoch2_losses(tmp_path / "full")
    losses_resumed = epoch2_losses(tmp_path / "resumed")
    assert len(losses_full) == 4
    assert losses_resumed == pytest.approx(losses_full, abs=1e-6)
    assert resumed["final_val_dice"] == pytest.approx(full["final_val_dice"], abs=1e-6)


def test_resume_beyond_config_epochs_is_rejected(tmp_path, tmp_dataset):
    training.fit(_fit_cfg(epochs=2), tmp_dataset, tmp_path / "stub")
    with pytest.raises(ConfigurationError, match="epochs"):
        training.fit(_fit_cfg(epochs=2), tmp_dataset, tmp_path / "again",
                     resume_from=tmp_path / "stub" / "final.ckpt")


def test_fit_rejects_waveform_length_mismatch(tmp_path, tmp_dataset):
    cfg = _fit_cfg()
    cfg.model.t_samples = 608
    with pytest.raises(ConfigurationError, match="t_samples"):
        training.fit(cfg, tmp_dataset, tmp_path / "run")


def test_train_config_round_trip():
    cfg = _fit_cfg(epochs=5)
    again = training.TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ConfigurationError, match="unknown"):
        training.TrainConfig.from_dict({"nope": 1})
    with pytest.raises(ConfigurationError):
        training.TrainConfig(entropy_mode="sideways")
