import json

import pytest
import yaml

import waveunet_lab as wl
from waveunet_lab.cli import main
from waveunet_lab.config import ExperimentConfig, read_manifest

TINY_ARCH = {
    "num_levels": 2,
    "extra_filters_per_level": 2,
    "kernel_down": 5,
    "kernel_up": 3,
    "input_length": 256,
    "audio_channels": 1,
    "num_sources": 2,
    "seed": 5,
}
TINY_TRAIN = {
    "initial_lr": 1e-3,
    "initial_batch": 2,
    "iterations_per_epoch": 2,
    "patience_epochs": 2,
    "max_epochs": 2,
    "snippet_length": 256,
    "validation_snippets_per_track": 1,
}
TINY_DATASET = {"synthetic": {"seed": 6, "tracks": 3, "duration": 2.0, "channels": 1}}


def write_config(path, **overrides):
    cfg = {
        "run_name": overrides.pop("run_name", "tiny"),
        "output_dir": overrides.pop("output_dir"),
        "architecture": {**TINY_ARCH, **overrides.pop("architecture", {})},
        "freeze": overrides.pop("freeze", {"regime": "U"}),
        "training": {**TINY_TRAIN, **overrides.pop("training", {})},
        "dataset": overrides.pop("dataset", TINY_DATASET),
        "data_seed": overrides.pop("data_seed", 3),
    }
    cfg.update(overrides)
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestTrainCommand:
    def test_u_run_produces_manifest_and_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "u1.yaml", output_dir=str(tmp_path / "runs"),
                           run_name="U1")
        assert main(["train", "--config", str(cfg)]) == 0
        run_dir = tmp_path / "runs" / "U1"
        manifest = read_manifest(run_dir / "manifest.json")
        assert manifest.kind == "train"
        assert manifest.results["final_phase"] in ("main", "finetune1", "finetune2", "done")
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "initial.ckpt").exists()
        history = [json.loads(line) for line in (run_dir / "history.jsonl").read_text().splitlines()]
        assert [h["epoch"] for h in history] == [1, 2]

    def test_j_run_keeps_frozen_groups_byte_identical(self, tmp_path):
        cfg = write_config(
            tmp_path / "j1.yaml", output_dir=str(tmp_path / "runs"), run_name="J1",
            freeze={"regime": "J", "freeze_seed": 9},
        )
        assert main(["train", "--config", str(cfg)]) == 0
        run_dir = tmp_path / "runs" / "J1"
        initial = wl.load_checkpoint(run_dir / "initial.ckpt")
        best = wl.load_checkpoint(run_dir / "best.ckpt")
        assert wl.verify_frozen(initial, best, initial.freeze_spec) is True

    def test_missing_num_levels_names_the_field(self, tmp_path, capsys):
        raw = {
            "run_name": "bad",
            "output_dir": str(tmp_path),
            "architecture": {k: v for k, v in TINY_ARCH.items() if k != "num_levels"},
            "training": TINY_TRAIN,
            "dataset": TINY_DATASET,
        }
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(raw))
        assert main(["train", "--config", str(path)]) == 1
        err = capsys.readouterr().err
        assert "config error" in err
        assert "architecture.num_levels" in err

    def test_rerun_with_same_config_is_idempotent(self, tmp_path):
        cfg = write_config(tmp_path / "u.yaml", output_dir=str(tmp_path / "runs"),
                           run_name="U1")
        assert main(["train", "--config", str(cfg)]) == 0
        first = (tmp_path / "runs" / "U1" / "best.ckpt").read_bytes()
        assert main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "runs" / "U1" / "best.ckpt").read_bytes() == first

    def test_same_run_name_different_config_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "u.yaml", output_dir=str(tmp_path / "runs"),
                           run_name="U1")
        assert main(["train", "--config", str(cfg)]) == 0
        cfg2 = write_config(tmp_path / "u2.yaml", output_dir=str(tmp_path / "runs"),
                            run_name="U1", data_seed=99)
        assert main(["train", "--config", str(cfg2)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_dataset_file_errors(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "u.yaml", output_dir=str(tmp_path / "runs"),
                           dataset={"path": str(tmp_path / "nowhere")})
        assert main(["train", "--config", str(cfg)]) == 1
        assert "data error" in capsys.readouterr().err


class TestEvaluateCommand:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = write_config(tmp_path / "u.yaml", output_dir=str(tmp_path / "runs"),
                           run_name="U1")
        main(["train", "--config", str(cfg)])
        return tmp_path / "runs" / "U1" / "best.ckpt"

    def test_evaluate_writes_report(self, trained, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--checkpoint", str(trained), "--stages", "1",
            "--synthetic", "3", "--seed", "6", "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "eval_U1_s1.json").read_text())
        assert report["model"] == "U1"
        assert report["stages"] == 1
        assert report["metric"] == "projection_sdr"
        assert (out / "eval_U1_s1.csv").exists()

    def test_stage1_report_matches_library_evaluation(self, trained, tmp_path):
        out = tmp_path / "eval"
        main(["evaluate", "--checkpoint", str(trained), "--stages", "1",
              "--synthetic", "3", "--seed", "6", "--out", str(out)])
        from_cli = json.loads((out / "eval_U1_s1.json").read_text())
        ckpt = wl.load_checkpoint(trained)
        # rebuild the corpus exactly as the CLI did: synthetic defaults with
        # the checkpoint's channel count
        split = wl.synth_dataset(seed=6, n_tracks=3, duration=30.0, channels=1)
        report = wl.evaluate_model(ckpt.build(), split, stages=1, model="U1")
        assert from_cli["sources"] == json.loads(
            json.dumps(report.to_dict(), sort_keys=True)
        )["sources"]

    def test_invalid_stage_count_is_an_argument_error(self, trained, capsys):
        code = main(["evaluate", "--checkpoint", str(trained), "--stages", "0",
                     "--synthetic", "3"])
        assert code == 1
        assert "argument error" in capsys.readouterr().err

    def test_dataset_required(self, trained, capsys):
        code = main(["evaluate", "--checkpoint", str(trained), "--stages", "1"])
        assert code == 1
        assert "argument error" in capsys.readouterr().err


def write_variants(path, out_dir, n_variants=3, duplicate=False):
    def arch(**kw):
        d = dict(TINY_ARCH)
        d.update(kw)
        return d

    variants = []
    pool = [
        {"name": "U2_2_2", "architecture": arch(variant={
            "kind": "res_path", "conv_depth": 2, "connections": 2})},
        {"name": "U3_2", "architecture": arch(variant={
            "kind": "multires", "blocks_per_path": 2})},
        {"name": "U4_2", "architecture": arch(), "training": {"stages": 2}},
        {"name": "U5", "architecture": arch(), "training": {"use_identity_loss": True}},
    ]
    variants = pool[:n_variants]
    if duplicate:
        variants[1] = dict(pool[0])
    raw = {
        "output_dir": str(out_dir),
        "dataset": TINY_DATASET,
        "training": TINY_TRAIN,
        "data_seed": 3,
        "freeze_seed": 17,
        "baseline": {"name": "U1", "architecture": arch()},
        "variants": variants,
    }
    path.write_text(yaml.safe_dump(raw))
    return path


class TestSearchCommand:
    def test_three_variant_search_emits_correlation_files(self, tmp_path, capsys):
        vfile = write_variants(tmp_path / "variants.yaml", tmp_path / "search")
        assert main(["search", "--variants", str(vfile)]) == 0
        out = tmp_path / "search"
        corr = json.loads((out / "correlation.json").read_text())
        assert set(corr) == {"vocals", "accompaniment"}
        assert len(corr["vocals"]["points"]) == 3
        assert (out / "scatter_vocals.png").exists()
        assert (out / "scatter_accompaniment.png").exists()
        assert (out / "ranking.csv").read_text().startswith("rank,name,")
        manifest = read_manifest(out / "manifest.json")
        assert manifest.kind == "search"
        # J and U runs both trained per variant
        for prefix in ("U", "J"):
            assert (out / f"{prefix}1" / "best.ckpt").exists()

    def test_duplicate_variant_rejected(self, tmp_path, capsys):
        vfile = write_variants(tmp_path / "v.yaml", tmp_path / "s", duplicate=True)
        assert main(["search", "--variants", str(vfile)]) == 1
        assert "report error" in capsys.readouterr().err

    def test_too_few_variants_rejected(self, tmp_path, capsys):
        vfile = write_variants(tmp_path / "v.yaml", tmp_path / "s", n_variants=2)
        assert main(["search", "--variants", str(vfile)]) == 1
        err = capsys.readouterr().err
        assert "report error" in err and "3" in err


class TestReportCommand:
    def test_consolidates_runs_and_is_idempotent(self, tmp_path, capsys):
        vfile = write_variants(tmp_path / "variants.yaml", tmp_path / "search")
        main(["search", "--variants", str(vfile)])
        out = tmp_path / "summary"
        assert main(["report", "--dir", str(tmp_path / "search"), "--out", str(out)]) == 0
        table = (out / "report_table.csv").read_text()
        header = table.splitlines()[0]
        assert header.startswith("source,stat,")
        assert "U1" in header.split(",") and "J1" in header.split(",")
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(["report", "--dir", str(tmp_path / "search"), "--out", str(out)]) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_empty_directory_rejected(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["report", "--dir", str(tmp_path / "empty")]) == 1
        assert "report error" in capsys.readouterr().err

    def test_missing_directory_rejected(self, tmp_path, capsys):
        assert main(["report", "--dir", str(tmp_path / "missing")]) == 1
        assert "report error" in capsys.readouterr().err
