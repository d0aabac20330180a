import pytest

from scarfuse import synth, training
from scarfuse.models import ModelConfig


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 12-sample 32x32 dataset shared by the report and CLI tests."""
    out = tmp_path_factory.mktemp("shared") / "ds12"
    synth.generate_dataset(out, 12, seed=3, cfg=synth.GeneratorConfig(size=32))
    return out


def _train_cfg(variant_kw):
    return training.TrainConfig(
        epochs=2, batch_size=8, seed=0, warmup_epochs=1, lambda_warmup_epochs=2,
        model=ModelConfig(base_width=8, ecg_width=8, attn_dim=16, t_samples=600,
                          **variant_kw),
    )


@pytest.fixture(scope="session")
def trained_runs(tmp_path_factory, small_dataset):
    """Checkpoints for the full and baseline variants, trained briefly."""
    root = tmp_path_factory.mktemp("runs")
    paths = {}
    for name, kw in (
        ("full", {}),
        ("baseline", {"use_prior": False, "use_ecg": False, "use_time": False}),
    ):
        training.fit(_train_cfg(kw), small_dataset, root / name)
        paths[name] = root / name / "final.ckpt"
    return paths
