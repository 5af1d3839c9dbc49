import json
from pathlib import Path

import numpy as np

from nubblematch.harness import SynthSpec, synth_clusters
from nubblematch.tensorio import write_tensor
from conftest import run_cli


def _synth_into(dirpath, seed=11):
    spec = SynthSpec(height=4, width=4, channels=24, fg_fraction=0.4, margin=0.5,
                     noise_channel=5, dominant_value=25.0, seed=seed)
    ref, fg, tgt, tgt_gt = synth_clusters(spec)
    dirpath = Path(dirpath)
    write_tensor(ref, dirpath / "ref.npy")
    write_tensor(fg, dirpath / "fg.npy")
    write_tensor(tgt, dirpath / "tgt.npy")
    write_tensor(tgt_gt, dirpath / "tgt_gt.npy")


class TestDropCommand:
    def test_contract_example(self, tmp_path):
        _synth_into(tmp_path)
        code, out, err = run_cli(["drop", "--in", "ref.npy", "--ratio", "0.1",
                                  "--seed", "42", "--out", "ref_d.npy",
                                  "--mask-out", "mask.json"], tmp_path)
        assert code == 0, err
        assert (tmp_path / "ref_d.npy").exists()
        assert (tmp_path / "mask.json").exists()
        summary = json.loads(out)
        assert summary["dropped_count"] == 2  # round(0.1 * 24)

    def test_stdout_is_one_json_line(self, tmp_path):
        _synth_into(tmp_path)
        code, out, _ = run_cli(["normalize", "--in", "ref.npy", "--out", "n.npy"],
                               tmp_path)
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 1
        json.loads(lines[0])


class TestSweepCommand:
    def test_row_count(self, tmp_path):
        code, out, err = run_cli(["synth", "--out-dir", "inst", "--height", "4",
                                  "--width", "4", "--channels", "24",
                                  "--fg-fraction", "0.4", "--margin", "0.5",
                                  "--noise-channel", "5", "--dominant-value", "25",
                                  "--seed", "7", "--count", "2"], tmp_path)
        assert code == 0, err
        code, out, err = run_cli(["sweep", "--manifest", "inst/manifest.json",
                                  "--ratios", "0,0.1,0.2", "--trials", "3",
                                  "--seed", "7", "--out", "sweep.csv",
                                  "--tau", "0.75"], tmp_path)
        assert code == 0, err
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 4  # header + 3 data rows


class TestDiagnoseCommand:
    def test_report_fields(self, tmp_path):
        _synth_into(tmp_path)
        code, out, err = run_cli(["diagnose", "--in", "ref.npy", "--kappa", "0.5",
                                  "--nu", "0.0004", "--out", "diag.json"], tmp_path)
        assert code == 0, err
        doc = json.loads((tmp_path / "diag.json").read_text())
        assert "dominant_patch_count" in doc["payload"]
        assert "submergence_flag" in doc["payload"]
        summary = json.loads(out)
        assert summary["dominant_patch_count"] >= 1


class TestErrorPaths:
    def test_unknown_subcommand(self, tmp_path):
        code, _, err = run_cli(["bogus"], tmp_path)
        assert code == 2
        assert "usage" in err.lower() or "invalid choice" in err

    def test_no_subcommand(self, tmp_path):
        code, _, err = run_cli([], tmp_path)
        assert code == 2

    def test_invalid_ratio_exits_2_no_partial_output(self, tmp_path):
        _synth_into(tmp_path)
        code, _, err = run_cli(["drop", "--in", "ref.npy", "--ratio", "1.5",
                                "--seed", "1", "--out", "x.npy"], tmp_path)
        assert code == 2
        assert not (tmp_path / "x.npy").exists()

    def test_missing_input_exits_1(self, tmp_path):
        code, _, err = run_cli(["normalize", "--in", "absent.npy",
                                "--out", "x.npy"], tmp_path)
        assert code == 1
        assert not (tmp_path / "x.npy").exists()

    def test_missing_seed_for_sampling(self, tmp_path):
        _synth_into(tmp_path)
        code, _, err = run_cli(["drop", "--in", "ref.npy", "--ratio", "0.1",
                                "--out", "x.npy"], tmp_path)
        assert code == 2
        assert "seed" in err

    def test_synth_requires_seed_flag(self, tmp_path):
        code, _, err = run_cli(["synth", "--out-dir", "i", "--height", "2",
                                "--width", "2", "--channels", "4",
                                "--fg-fraction", "0.5", "--margin", "0.5"],
                               tmp_path)
        assert code == 2
        assert "--seed" in err

    def test_missing_required_flag(self, tmp_path):
        code, _, err = run_cli(["normalize", "--in", "a.npy"], tmp_path)
        assert code == 2
        assert "--out" in err


class TestConfigMerge:
    def test_config_supplies_defaults(self, tmp_path):
        _synth_into(tmp_path)
        (tmp_path / "cfg.json").write_text(json.dumps(
            {"ratio": 0.25, "seed": 9, "output_path": "from_cfg.npy"}))
        code, out, err = run_cli(["--config", "cfg.json", "drop",
                                  "--in", "ref.npy"], tmp_path)
        assert code == 0, err
        assert (tmp_path / "from_cfg.npy").exists()
        assert json.loads(out)["dropped_count"] == 6  # round(0.25 * 24)

    def test_flags_override_config(self, tmp_path):
        _synth_into(tmp_path)
        (tmp_path / "cfg.json").write_text(json.dumps({"ratio": 0.25, "seed": 9}))
        code, out, _ = run_cli(["--config", "cfg.json", "drop", "--in", "ref.npy",
                                "--out", "o.npy", "--ratio", "0.5"], tmp_path)
        assert code == 0
        assert json.loads(out)["dropped_count"] == 12  # CLI ratio wins

    def test_unknown_config_key(self, tmp_path):
        _synth_into(tmp_path)
        (tmp_path / "cfg.json").write_text(json.dumps({"rotio": 0.25}))
        code, _, err = run_cli(["--config", "cfg.json", "drop", "--in", "ref.npy",
                                "--out", "o.npy", "--seed", "3", "--ratio", "0.1"],
                               tmp_path)
        assert code == 2
        assert "rotio" in err


class TestMatchPipeline:
    def test_match_prompts_segment_iou(self, tmp_path):
        _synth_into(tmp_path)
        code, _, err = run_cli(["match", "--target", "tgt.npy", "--ref", "ref.npy",
                                "--fg", "fg.npy", "--out", "sim.npy",
                                "--ratio", "0.2", "--seed", "4"], tmp_path)
        assert code == 0, err
        code, _, err = run_cli(["prompts", "--in", "sim.npy", "--out", "p.json",
                                "--k", "3", "--min-separation", "1",
                                "--tau", "0.75"], tmp_path)
        assert code == 0, err
        code, _, err = run_cli(["segment", "--in", "sim.npy", "--out", "seg.npy",
                                "--tau", "0.75"], tmp_path)
        assert code == 0, err
        code, out, err = run_cli(["iou", "--pred", "seg.npy", "--gt", "tgt_gt.npy"],
                                 tmp_path)
        assert code == 0, err
        assert 0.0 <= json.loads(out)["iou"] <= 1.0

    def test_trim_and_prune(self, tmp_path):
        _synth_into(tmp_path)
        code, _, err = run_cli(["trim", "--in", "ref.npy", "--m-per-patch", "2",
                                "--out", "trimmed.npy"], tmp_path)
        assert code == 0, err
        code, out, err = run_cli(["prune", "--in", "ref.npy", "--fg", "fg.npy",
                                  "--budget", "1", "--k-bg", "3",
                                  "--out", "prune.json"], tmp_path)
        assert code == 0, err
        doc = json.loads((tmp_path / "prune.json").read_text())
        assert doc["mask"]["dropped"] == [5]  # the injected channel

    def test_interaction(self, tmp_path):
        (tmp_path / "net.json").write_text(json.dumps(
            {"weights": [[[1, -2, 3], [4, 5, -6]]], "output_weights": [2, -1]}))
        code, out, err = run_cli(["interaction", "--in", "net.json",
                                  "--indices", "0,1"], tmp_path)
        assert code == 0, err
        assert json.loads(out)["strengths"] == [3.0, 4.5]
