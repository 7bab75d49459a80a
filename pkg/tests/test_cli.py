import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import write_toy_segmentation_model
from crackseg.cli import cli, main
from crackseg.lowrank import conv2d, tensor_from_json, tensor_to_json


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    runner = CliRunner()
    result = runner.invoke(
        cli,
        ["make-fixtures", "--out", str(root), "--count", "4", "--seed", "9", "--size", "128x96"],
    )
    assert result.exit_code == 0, result.output
    return root


@pytest.fixture()
def runner():
    return CliRunner()


class TestMakeFixtures:
    def test_layout(self, dataset_dir):
        assert len(list((dataset_dir / "images").glob("*.png"))) == 4
        assert len(list((dataset_dir / "masks").glob("*.png"))) == 4
        assert len(list((dataset_dir / "initial").glob("*.png"))) == 4
        assert len(list((dataset_dir / "specs").glob("*.json"))) == 4

    def test_bad_size(self, runner, tmp_path):
        assert main(["make-fixtures", "--out", str(tmp_path), "--size", "huge"]) == 1


class TestSegment:
    def test_writes_mask_and_overlay(self, runner, dataset_dir, tmp_path):
        image = sorted((dataset_dir / "images").glob("*.png"))[0]
        mask = dataset_dir / "masks" / image.name
        result = runner.invoke(
            cli,
            [
                "segment",
                str(image),
                "--gt",
                str(mask),
                "--out",
                str(tmp_path),
                "--report",
                str(tmp_path / "row.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        stem = image.stem
        assert (tmp_path / f"{stem}.mask.png").exists()
        assert (tmp_path / f"{stem}.overlay.png").exists()
        row = json.loads((tmp_path / "row.json").read_text())
        assert "refined" in row and "initial" in row

    def test_missing_gt_with_gt_detector_is_config_error(self, dataset_dir, tmp_path):
        image = sorted((dataset_dir / "images").glob("*.png"))[0]
        code = main(["segment", str(image), "--out", str(tmp_path)])
        assert code == 1


class TestEvaluateCli:
    def test_report_and_exit_zero(self, runner, dataset_dir, tmp_path):
        report_path = tmp_path / "report.json"
        result = runner.invoke(
            cli,
            [
                "evaluate",
                "--images",
                str(dataset_dir / "images"),
                "--masks",
                str(dataset_dir / "masks"),
                "--report",
                str(report_path),
                "--seed",
                "4",
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["schema"] == "crackseg-report/1"
        assert len(report["images"]) == 4
        assert report["aggregate"]["refined"]["dice"] >= report["aggregate"]["initial"]["dice"]

    def test_reports_byte_identical_across_runs(self, runner, dataset_dir, tmp_path):
        paths = []
        for n in (1, 2):
            p = tmp_path / f"r{n}.json"
            result = runner.invoke(
                cli,
                [
                    "evaluate",
                    "--images", str(dataset_dir / "images"),
                    "--masks", str(dataset_dir / "masks"),
                    "--report", str(p),
                    "--seed", "7",
                ],
            )
            assert result.exit_code == 0, result.output
            paths.append(p)
        a = json.loads(paths[0].read_text())
        b = json.loads(paths[1].read_text())
        a.pop("timings"), b.pop("timings")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_missing_images_dir_exit_code(self, tmp_path):
        code = main(
            ["evaluate", "--images", str(tmp_path / "images"), "--masks", str(tmp_path)]
        )
        assert code == 1  # click validates the path

    def test_empty_images_dir_is_data_error(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        code = main(
            [
                "evaluate",
                "--images", str(tmp_path / "images"),
                "--masks", str(tmp_path / "masks"),
            ]
        )
        assert code == 2


class TestRefineCli:
    def test_refines_initial_mask(self, runner, dataset_dir, tmp_path):
        image = sorted((dataset_dir / "images").glob("*.png"))[0]
        initial = dataset_dir / "initial" / image.name
        out = tmp_path / "refined.png"
        result = runner.invoke(
            cli,
            [
                "refine",
                str(image),
                str(initial),
                "--out",
                str(out),
                "--report",
                str(tmp_path / "summary.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert "prompts" in summary and "kernels" in summary

    def test_explicit_boxes(self, runner, dataset_dir, tmp_path):
        image = sorted((dataset_dir / "images").glob("*.png"))[0]
        initial = dataset_dir / "initial" / image.name
        out = tmp_path / "refined.png"
        result = runner.invoke(
            cli,
            ["refine", str(image), str(initial), "--boxes", "0,0,128,96", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output

    def test_bad_boxes_text(self, dataset_dir, tmp_path):
        image = sorted((dataset_dir / "images").glob("*.png"))[0]
        initial = dataset_dir / "initial" / image.name
        code = main(
            ["refine", str(image), str(initial), "--boxes", "nope", "--out", str(tmp_path / "o.png")]
        )
        assert code == 1


class TestKernelOracleCli:
    def test_exports_targets_csv(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "targets.csv"
        result = runner.invoke(
            cli,
            [
                "kernel-oracle",
                "--images", str(dataset_dir / "images"),
                "--masks", str(dataset_dir / "masks"),
                "--initial", str(dataset_dir / "initial"),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("fixture,target")
        assert len(lines[0].split(",")) == 2 + 15
        assert len(lines) >= 2
        for line in lines[1:]:
            target = int(line.split(",")[1])
            assert target % 2 == 1 and 3 <= target <= 31


class TestBenchCli:
    def test_bench_outputs_stages(self, runner, dataset_dir, tmp_path):
        report_path = tmp_path / "bench.json"
        result = runner.invoke(
            cli,
            [
                "bench",
                "--images", str(dataset_dir / "images"),
                "--masks", str(dataset_dir / "masks"),
                "--warmup", "1",
                "--report", str(report_path),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert set(report["throughput"]["stages"]) >= {"detect", "encode", "decode", "cmrm"}
        assert "total_fps" in report["throughput"]


class TestRunGraphCli:
    def test_executes_graph_on_tensors(self, runner, tmp_path, rng):
        write_toy_segmentation_model(tmp_path)
        x = rng.normal(size=(1, 1, 48, 48))
        (tmp_path / "in.json").write_text(
            json.dumps({"inputs": {"image": tensor_to_json(x)}})
        )
        result = runner.invoke(
            cli,
            [
                "run-graph",
                "--graph", str(tmp_path / "encoder.json"),
                "--input", str(tmp_path / "in.json"),
                "--output", str(tmp_path / "out.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "out.json").read_text())
        got = tensor_from_json(payload["outputs"]["embedding"])
        enc_w = np.zeros((4, 1, 3, 3))
        enc_w[0, 0, 1, 1] = 1.0
        enc_w[1, 0, 1, 1] = 0.5
        assert np.allclose(got, conv2d(x, enc_w, padding=1))

    def test_backend_error_exit_code(self, tmp_path):
        bad_graph = tmp_path / "g.json"
        bad_graph.write_text(
            json.dumps(
                {
                    "format": "crackgraph/1",
                    "name": "g",
                    "inputs": [{"name": "x"}],
                    "output": "y",
                    "nodes": [{"name": "y", "op": "warp", "input": "x"}],
                }
            )
        )
        (tmp_path / "in.json").write_text(
            json.dumps({"inputs": {"x": tensor_to_json(np.zeros((1, 1, 2, 2)))}})
        )
        code = main(
            [
                "run-graph",
                "--graph", str(bad_graph),
                "--input", str(tmp_path / "in.json"),
                "--output", str(tmp_path / "o.json"),
            ]
        )
        assert code == 3
