"""Command-line behaviour: exit codes, manifests, and the full micro flow.

A tiny dataset is generated once through the real `degrade` command and a
checkpoint trained on it through the real `train` command; the remaining
commands are exercised against those artifacts.
"""

import csv
import json

import pytest

from ofpnet.cli import main
from ofpnet.config import config_fingerprint, parse_config_file
from ofpnet.model import ModelConfig, count_params
from ofpnet.train import BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE

MICRO_SET = [
    "--set", "model.channels=4",
    "--set", "model.projection_depth_m=1",
    "--set", "model.fusion_blocks=1",
    "--set", "model.angular_size=2,2",
    "--set", "train.lr0=0.001",
    "--set", "train.halve_every=2",
    "--set", "train.total_epochs=2",
    "--set", "train.iters_per_epoch=2",
    "--set", "train.batch=1",
    "--set", "train.patch=8",
    "--set", "train.scale=2",
    "--set", "train.val_interval=2",
]

MICRO_MODEL = ModelConfig(
    channels=4, projection_depth_m=1, fusion_blocks=1, angular_size=(2, 2)
)


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main([
        "degrade", "--synthetic", "4", "--scale", "2", "--size", "16x16",
        "--angular", "2x2", "--split", "2,1,1", "--seed", "3",
        "--out", str(root / "degrade"),
    ])
    assert rc == 0
    rc = main([
        "train", "--data", str(root / "degrade" / "data"),
        "--out", str(root / "train"), "--seed", "0", *MICRO_SET,
    ])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def cli_data(cli_root):
    return str(cli_root / "degrade" / "data")


@pytest.fixture(scope="module")
def cli_ckpt(cli_root):
    return str(cli_root / "train" / BEST_CHECKPOINT)


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------

class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_command(self, capsys):
        assert main(["polish"]) == 2
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert main(["train", "--help"]) == 0
        capsys.readouterr()

    def test_unknown_config_key_is_config_error(self, cli_data, tmp_path, capsys):
        rc = main([
            "train", "--data", cli_data, "--out", str(tmp_path),
            "--set", "model.depth=3",
        ])
        assert rc == 3
        assert "model.depth" in capsys.readouterr().err

    def test_malformed_config_file(self, cli_data, tmp_path, capsys):
        bad = tmp_path / "conf.txt"
        bad.write_text("model.channels 8\n")
        rc = main(["train", "--data", cli_data, "--config", str(bad),
                   "--out", str(tmp_path / "out")])
        assert rc == 3
        assert "conf.txt:1" in capsys.readouterr().err

    def test_missing_checkpoint_is_config_error(self, cli_data, tmp_path, capsys):
        rc = main([
            "eval", "--data", cli_data, "--checkpoint",
            str(tmp_path / "none.pt"), "--out", str(tmp_path),
        ])
        assert rc == 3
        capsys.readouterr()

    def test_eval_without_scale_or_checkpoint(self, cli_data, tmp_path, capsys):
        rc = main(["eval", "--data", cli_data, "--out", str(tmp_path)])
        assert rc == 3
        capsys.readouterr()

    def test_missing_data_root_is_runtime_error(self, tmp_path, capsys):
        rc = main([
            "eval", "--data", str(tmp_path / "void"), "--scale", "2",
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 4
        capsys.readouterr()

    def test_bad_split_spec(self, tmp_path, capsys):
        rc = main([
            "degrade", "--synthetic", "2", "--split", "1,1",
            "--out", str(tmp_path),
        ])
        assert rc == 3
        capsys.readouterr()


# ---------------------------------------------------------------------------
# degrade
# ---------------------------------------------------------------------------

class TestDegrade:
    def test_tree_and_manifest(self, cli_root):
        data = cli_root / "degrade" / "data"
        assert (data / "scene_000" / "gt" / "view_0_0.png").exists()
        assert (data / "scene_000" / "lr_x2" / "view_1_1.png").exists()
        assert (data / "splits.json").exists()
        manifest = json.loads((cli_root / "degrade" / "manifest.json").read_text())
        assert manifest["command"] == "degrade"
        assert manifest["seed"] == 3
        assert manifest["config"]["degrade.scenes"] == 4
        assert any(k.endswith("view_0_0.png") for k in manifest["artifacts"])
        assert set(manifest["versions"]) == {"python", "numpy", "torch"}

    def test_artifact_hashes_are_sha256(self, cli_root):
        manifest = json.loads((cli_root / "degrade" / "manifest.json").read_text())
        digest = next(iter(manifest["artifacts"].values()))
        assert len(digest) == 64 and int(digest, 16) >= 0

    def test_default_out_uses_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("OFPNET_OUT", str(tmp_path / "envroot"))
        rc = main(["degrade", "--synthetic", "1", "--scale", "2",
                   "--size", "16x16", "--angular", "2x2"])
        assert rc == 0
        assert (tmp_path / "envroot" / "degrade" / "data" / "scene_000").exists()
        capsys.readouterr()


# ---------------------------------------------------------------------------
# train / finetune
# ---------------------------------------------------------------------------

class TestTrain:
    def test_artifacts(self, cli_root):
        out = cli_root / "train"
        assert (out / BEST_CHECKPOINT).exists()
        assert (out / LAST_CHECKPOINT).exists()
        with open(out / LOG_FILE) as fh:
            rows = list(csv.DictReader(fh))
        assert len([r for r in rows if r["train_l1"] != ""]) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model.channels"] == 4
        assert manifest["config"]["train.scale"] == 2
        assert LAST_CHECKPOINT in manifest["artifacts"]

    def test_resume_from_cli(self, cli_root, cli_data, tmp_path):
        out = tmp_path / "resumed"
        rc = main([
            "train", "--data", cli_data, "--out", str(out), "--seed", "0",
            "--resume", str(cli_root / "train" / LAST_CHECKPOINT),
            *MICRO_SET[:-2], "--set", "train.val_interval=2",
            "--set", "train.total_epochs=4",
        ])
        assert rc == 0
        assert (out / LAST_CHECKPOINT).exists()

    def test_finetune_from_cli(self, cli_ckpt, cli_data, tmp_path, capsys):
        rc = main([
            "finetune", "--data", cli_data, "--checkpoint", cli_ckpt,
            "--out", str(tmp_path), "--seed", "1", *MICRO_SET,
        ])
        assert rc == 0
        assert (tmp_path / LAST_CHECKPOINT).exists()
        capsys.readouterr()

    def test_finetune_model_override_must_match(self, cli_ckpt, cli_data, tmp_path, capsys):
        rc = main([
            "finetune", "--data", cli_data, "--checkpoint", cli_ckpt,
            "--out", str(tmp_path), "--set", "model.channels=8",
        ])
        assert rc == 3
        capsys.readouterr()


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

class TestEval:
    def test_model_and_baseline_reports(self, cli_ckpt, cli_data, tmp_path, capsys):
        rc = main([
            "eval", "--data", cli_data, "--checkpoint", cli_ckpt,
            "--out", str(tmp_path), "--dump-sr",
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "ofpnet:" in printed and "identity:" in printed and "delta" in printed
        assert (tmp_path / "report_ofpnet.csv").exists()
        assert (tmp_path / "report_identity.csv").exists()
        assert (tmp_path / "summary.csv").exists()
        dumped = list((tmp_path / "sr").rglob("*.png"))
        assert len(dumped) == 4  # one test scene, 2x2 views
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["eval.scale"] == 2

    def test_baseline_only(self, cli_data, tmp_path, capsys):
        rc = main([
            "eval", "--data", cli_data, "--scale", "2", "--split", "val",
            "--out", str(tmp_path),
        ])
        assert rc == 0
        assert (tmp_path / "report_identity.csv").exists()
        assert not (tmp_path / "report_ofpnet.csv").exists()
        capsys.readouterr()


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

class TestAblate:
    def test_two_variant_table(self, cli_data, tmp_path, capsys):
        rc = main([
            "ablate", "--data", cli_data, "--out", str(tmp_path),
            "--variants", "freq:h,proj:full", "--seed", "0",
            *MICRO_SET[:-2], "--set", "train.val_interval=1",
            "--set", "train.total_epochs=1", "--set", "train.halve_every=1",
            "--set", "train.iters_per_epoch=1",
        ])
        assert rc == 0
        with open(tmp_path / "ablation_table.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["freq:h", "proj:full"]
        assert (tmp_path / "freq_h" / BEST_CHECKPOINT).exists()
        assert "variant" in capsys.readouterr().out

    def test_unknown_variant_fails_fast(self, cli_data, tmp_path, capsys):
        rc = main([
            "ablate", "--data", cli_data, "--out", str(tmp_path),
            "--variants", "freq:x", *MICRO_SET,
        ])
        assert rc == 3
        assert not (tmp_path / "freq_x").exists()
        capsys.readouterr()


# ---------------------------------------------------------------------------
# epi
# ---------------------------------------------------------------------------

class TestEpi:
    def test_strip_export_and_slopes(self, cli_data, tmp_path, capsys):
        rc = main([
            "epi", "--data", cli_data, "--scene", "scene_000",
            "--lines", "1:6,1:10", "--out", str(tmp_path),
        ])
        assert rc == 0
        strips = sorted((tmp_path / "epi" / "scene_000").glob("*.png"))
        assert [p.name for p in strips] == [
            "epi_horizontal_v1_l10.png", "epi_horizontal_v1_l6.png"
        ]
        out = capsys.readouterr().out
        assert out.count("px/view") == 2

    def test_sr_source_needs_checkpoint(self, cli_data, tmp_path, capsys):
        rc = main([
            "epi", "--data", cli_data, "--scene", "scene_000",
            "--source", "sr", "--out", str(tmp_path),
        ])
        assert rc == 3
        capsys.readouterr()


# ---------------------------------------------------------------------------
# info and config plumbing
# ---------------------------------------------------------------------------

class TestInfo:
    def test_reports_count_params(self, capsys):
        rc = main(["info", *MICRO_SET])
        assert rc == 0
        out = capsys.readouterr().out
        assert f"parameters: {count_params(MICRO_MODEL)}" in out

    def test_checkpoint_meta(self, cli_ckpt, capsys):
        rc = main(["info", "--checkpoint", cli_ckpt])
        assert rc == 0
        out = capsys.readouterr().out
        assert "phase: train" in out
        assert f"parameters: {count_params(MICRO_MODEL)}" in out

    def test_set_last_wins(self, capsys):
        rc = main([
            "info", "--set", "model.channels=16", "--set", "model.channels=4",
            "--set", "model.projection_depth_m=1",
            "--set", "model.fusion_blocks=1",
            "--set", "model.angular_size=2,2",
        ])
        assert rc == 0
        assert f"parameters: {count_params(MICRO_MODEL)}" in capsys.readouterr().out

    def test_config_file_plus_set(self, tmp_path, capsys):
        conf = tmp_path / "desk.cfg"
        conf.write_text(
            "# desk defaults\n"
            "model.channels = 8\n"
            "model.projection_depth_m = 1\n"
            "model.fusion_blocks = 1\n"
            "model.angular_size = 2,2\n"
        )
        parsed = parse_config_file(conf)
        assert parsed["model.channels"] == 8
        rc = main(["info", "--config", str(conf), "--set", "model.channels=4"])
        assert rc == 0
        assert f"parameters: {count_params(MICRO_MODEL)}" in capsys.readouterr().out

    def test_fingerprint_tracks_config(self):
        assert config_fingerprint(MICRO_MODEL) != config_fingerprint(ModelConfig())
        assert len(config_fingerprint(MICRO_MODEL)) == 12
