import json

from click.testing import CliRunner

from scarfuse import data, nifti
from scarfuse.cli import main


def _run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_gen_data_and_make_prior(tmp_path):
    out = tmp_path / "ds"
    res = _run("gen-data", "--n", "10", "--seed", "1", "--out", str(out))
    assert res.exit_code == 0
    assert "wrote 10 samples" in res.output
    manifest, samples = data.read_dataset(out)
    assert len(samples) == 10

    sample_dir = out / manifest.splits["train"][0]
    prior_path = tmp_path / "prior.nii.gz"
    res = _run("make-prior", "--in", str(sample_dir), "--out", str(prior_path))
    assert res.exit_code == 0
    channels, _ = nifti.read_nifti(prior_path)
    assert channels.shape[-1] == 17
    sidecar = json.loads((tmp_path / "prior.json").read_text())
    assert sidecar["reference_angle"] == 0.0
    assert sidecar["zone_of_segment"]["17"] == "apex"


def test_gen_data_staleness_options_change_output(tmp_path):
    _run("gen-data", "--n", "10", "--out", str(tmp_path / "a"))
    _run("gen-data", "--n", "10", "--out", str(tmp_path / "b"),
         "--staleness-growth", "0.9", "--staleness-noise", "0.9")
    cfg_a = json.loads((tmp_path / "a" / "gen_config.json").read_text())["generator"]
    cfg_b = json.loads((tmp_path / "b" / "gen_config.json").read_text())["generator"]
    assert cfg_b["growth_rate"] == 0.9 and cfg_b["ecg_noise_gain"] == 0.9
    assert cfg_a["growth_rate"] != 0.9


def test_train_evaluate_report_workflow(tmp_path, small_dataset):
    cfg = {
        "epochs": 1, "batch_size": 8, "seed": 0, "warmup_epochs": 1,
        "lambda_warmup_epochs": 2,
        "model": {"base_width": 8, "ecg_width": 8, "attn_dim": 16,
                  "t_samples": 600},
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    run_dir = tmp_path / "train_run"
    res = _run("train", "--config", str(cfg_path),
               "--data", str(small_dataset), "--out", str(run_dir))
    assert res.exit_code == 0
    assert "variant: full" in res.output
    assert (run_dir / "final.ckpt").exists()

    eval_root = tmp_path / "evals"
    res = _run("evaluate", "--model", str(run_dir / "final.ckpt"),
               "--data", str(small_dataset), "--out", str(eval_root / "full"))
    assert res.exit_code == 0
    assert "full on test" in res.output

    res = _run("report", "--run", str(eval_root), "--no-figures")
    assert res.exit_code == 0
    assert "reference model: full" in res.output
    assert (eval_root / "report" / "summary.csv").exists()
    assert not (eval_root / "report" / "figures").exists()


def test_cli_help_lists_commands():
    res = _run("--help")
    assert res.exit_code == 0
    for cmd in ("gen-data", "make-prior", "train", "evaluate", "report"):
        assert cmd in res.output
