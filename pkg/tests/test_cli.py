"""
End-to-end tests of the pointseg command line on the compact profile.
"""

import csv

import numpy as np
import pytest

import cli
from src.utilities.config import CONFIG_ONLY_KEYS
from src.utilities.dataio import (class_map_pixels, frame_record, read_labeled_cloud, read_ppm, save_frame_array,
                                  save_velodyne_bin)
from src.utilities.synthetic import synthetic_frame, synthetic_scene

from .conftest import COMPACT_PROJECTION


@pytest.fixture
def frame_file(tmp_path):
    path = tmp_path / "frame.npy"
    save_frame_array(frame_record(synthetic_frame(0, COMPACT_PROJECTION)), path)
    return path


class TestUsage:
    """Help text and usage errors."""

    def test_no_arguments_prints_help_and_fails(self, capsys):
        assert cli.main([]) == 1
        assert "usage" in capsys.readouterr().out

    def test_help_lists_defaults(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["train", "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        assert "default: 100" in out
        assert "default: 0.001" in out
        assert "default: 32" in out
        assert "POINTSEG_THREADS" in out

    def test_help_names_the_config_file_keys(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train", "--help"])
        out = " ".join(capsys.readouterr().out.split())
        for key in CONFIG_ONLY_KEYS:
            assert key in out

    def test_unknown_command_is_a_usage_error(self, capsys):
        assert cli.main(["segment"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_flag_value_is_a_usage_error(self):
        assert cli.main(["train", "--steps", "many"]) == 1

    def test_missing_output_is_a_usage_error(self, frame_file, capsys):
        assert cli.main(["infer", "-i", str(frame_file), "--profile", "compact"]) == 1
        assert "--output" in capsys.readouterr().err

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert cli.main(["bench", "--config", str(cfg)]) == 1


class TestProjectAndInfer:
    """Single-frame commands."""

    def test_project_writes_frame_and_preview(self, tmp_path, capsys):
        scan = tmp_path / "scan.bin"
        save_velodyne_bin(synthetic_scene(0, COMPACT_PROJECTION).cloud(), scan)
        out = tmp_path / "out" / "scan"
        assert cli.main(["project", "-i", str(scan), "-o", str(out), "--profile", "compact"]) == 0
        assert (tmp_path / "out" / "scan.npy").is_file()
        assert (tmp_path / "out" / "scan.png").is_file()
        assert "projected" in capsys.readouterr().out

    def test_infer_on_an_empty_frame_is_all_background(self, tmp_path):
        empty = tmp_path / "empty.npy"
        save_frame_array(np.zeros((8, 32, 6), np.float32), empty)
        out = tmp_path / "pred"
        assert cli.main(["infer", "-i", str(empty), "-o", str(out), "--profile", "compact"]) == 0
        assert not read_ppm(tmp_path / "pred.ppm").any()
        assert (tmp_path / "pred.txt").read_text() == ""

    def test_infer_labels_every_point(self, tmp_path, frame_file):
        out = tmp_path / "pred"
        assert cli.main(["infer", "-i", str(frame_file), "-o", str(out), "--profile", "compact", "--ransac"]) == 0
        lines = (tmp_path / "pred.txt").read_text().splitlines()
        assert len(lines) == int(synthetic_frame(0, COMPACT_PROJECTION).occupancy.sum())
        assert all(line.split()[3] in "0123" for line in lines)
        assert read_ppm(tmp_path / "pred.ppm").shape == (8, 32, 3)

    def test_ransac_image_agrees_with_the_text_labels(self, tmp_path, frame_file):
        out = tmp_path / "pred"
        assert cli.main(["infer", "-i", str(frame_file), "-o", str(out), "--profile", "compact", "--ransac",
                         "--seed", "3"]) == 0
        labels = read_labeled_cloud(tmp_path / "pred.txt").labels
        image = read_ppm(tmp_path / "pred.ppm")
        occupancy = synthetic_frame(0, COMPACT_PROJECTION).occupancy
        # the text file lists the occupied pixels in row-major order
        np.testing.assert_array_equal(image[occupancy], class_map_pixels(labels[None, :])[0])
        assert not image[~occupancy].any()

    def test_missing_input_is_a_data_error(self, tmp_path, capsys):
        code = cli.main(["infer", "-i", str(tmp_path / "absent.npy"), "-o", str(tmp_path / "p"),
                         "--profile", "compact"])
        assert code == 2
        assert "error occurred" in capsys.readouterr().err

    def test_unsupported_input_is_a_usage_error(self, tmp_path):
        source = tmp_path / "scan.pcd"
        source.write_text("")
        assert cli.main(["infer", "-i", str(source), "-o", str(tmp_path / "p"), "--profile", "compact"]) == 1

    def test_wrong_frame_size_is_a_data_error(self, frame_file, tmp_path):
        assert cli.main(["infer", "-i", str(frame_file), "-o", str(tmp_path / "p")]) == 2


class TestTrainEvalBench:
    """Commands that run many frames."""

    def test_train_then_eval(self, tmp_path, capsys):
        checkpoint = tmp_path / "model.pseg"
        code = cli.main(["train", "--synthetic", "2", "--profile", "compact", "--steps", "3", "--batch", "2",
                         "-o", str(checkpoint)])
        assert code == 0
        assert checkpoint.is_file()
        assert (tmp_path / "model_loss.png").is_file()
        rows = list(csv.reader((tmp_path / "model_loss.csv").open()))
        assert rows[0] == ["step", "loss"]
        assert [int(r[0]) for r in rows[1:]] == [1, 3]

        report_dir = tmp_path / "report"
        code = cli.main(["eval", "--synthetic", "2", "--profile", "compact", "--checkpoint", str(checkpoint),
                         "-o", str(report_dir)])
        assert code == 0
        table = (report_dir / "report.txt").read_text()
        assert "this run" in table and "reference" in table
        rows = list(csv.reader((report_dir / "report.csv").open()))
        assert [r[0] for r in rows] == ["class", "background", "car", "pedestrian", "cyclist"]
        assert "mean foreground iou" in capsys.readouterr().out

    def test_eval_with_a_damaged_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.pseg"
        bad.write_bytes(b"PSEG\x01")
        assert cli.main(["eval", "--synthetic", "1", "--profile", "compact", "--checkpoint", str(bad),
                         "-o", str(tmp_path / "r")]) == 2

    def test_bench_reports_every_stage(self, tmp_path, frame_file, capsys):
        out = tmp_path / "bench.csv"
        code = cli.main(["bench", "-i", str(frame_file), "--profile", "compact", "--iterations", "3",
                         "--warmup", "1", "-o", str(out), "--threads", "2"])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["stage"] for r in rows] == ["projection", "forward", "argmax", "back-projection", "ransac"]
        assert all(int(r["count"]) == 3 for r in rows)
        assert all(float(r["median_ms"]) >= 0 for r in rows)
        assert "reference" in capsys.readouterr().out

    def test_bench_on_an_empty_frame_stops_early(self, tmp_path, capsys):
        empty = tmp_path / "empty.npy"
        save_frame_array(np.zeros((8, 32, 6), np.float32), empty)
        assert cli.main(["bench", "-i", str(empty), "--profile", "compact", "--iterations", "1"]) == 2
        assert "no occupied pixels" in capsys.readouterr().err
