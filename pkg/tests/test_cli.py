import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cf_translate.analysis import REPORT_COLUMNS
from cf_translate.cli import main
from cf_translate.images import DatasetManifest, MultiChannelImage, write_tiff
from cf_translate.training import load_config

SYNTH_ARGS = [
    "synth",
    "--channels", "3",
    "--height", "16",
    "--width", "16",
    "--n-per-group", "3",
    "--effect-channel", "1",
    "--delta", "0.3",
    "--disks", "2",
    "--radius", "2", "4",
    "--blur", "2.0",
    "--seed", "1",
]

TRAIN_ARGS = [
    "train",
    "--p", "8",
    "--s", "8",
    "--d", "1",
    "--epochs", "4",
    "--window", "2", "4",
    "--ensemble", "2",
    "--batch", "4",
    "--seed", "0",
    "--base-width", "2",
    "--depth", "1",
    "--critic-blocks", "2",
    "--critic-base-width", "2",
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full synth -> train -> infer -> analyze run through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    data, run = root / "data", root / "run"
    assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
    assert main(TRAIN_ARGS + ["--data", str(data), "--run", str(run)]) == 0
    assert main(["infer", "--run", str(run), "--data", str(data)]) == 0
    results = run / "counterfactuals"
    assert main(["analyze", "--data", str(data), "--results", str(results)]) == 0
    return dict(data=data, run=run, results=results)


class TestPipelineArtifacts:
    def test_synth_dataset(self, pipeline):
        manifest = DatasetManifest.load(pipeline["data"])
        assert len(manifest.entries) == 6
        assert len(manifest.channel_names) == 3

    def test_train_run_dir(self, pipeline):
        run = pipeline["run"]
        config = load_config(run / "config.json")
        assert config.p == 8 and config.max_epochs == 4
        checkpoints = sorted(p.name for p in (run / "checkpoints").glob("*.pt"))
        assert checkpoints == ["epoch_0002.pt", "epoch_0004.pt"]
        assert (run / "telemetry.csv").exists()

    def test_infer_results(self, pipeline):
        index = json.loads((pipeline["results"] / "results.json").read_text())
        assert len(index["results"]) == 3
        for rec in index["results"]:
            assert (pipeline["results"] / rec["counterfactual"]).exists()

    def test_report_csv_schema(self, pipeline):
        with open(pipeline["results"] / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == REPORT_COLUMNS
        body = rows[1:]
        assert len(body) == 3
        acvs = [float(r[1]) for r in body]
        assert acvs == sorted(acvs, reverse=True)

    def test_report_figures(self, pipeline):
        figures = pipeline["results"] / "figures"
        assert (figures / "acv_bar.png").exists()
        assert (figures / "mcv_bar.png").exists()

    def test_run_records(self, pipeline):
        for where, expected in [
            (pipeline["data"], "synth"),
            (pipeline["run"], "train"),
            (pipeline["results"], ["infer", "analyze"]),
        ]:
            records = json.loads((where / "run.json").read_text())["runs"]
            commands = [r["command"] for r in records]
            expected = [expected] if isinstance(expected, str) else expected
            assert commands == expected
            for r in records:
                assert r["versions"]["cf_translate"]
                assert r["seconds"] >= 0


class TestDirectionReversal:
    def test_reverse_direction_translates_group_1(self, tmp_path):
        data, run = tmp_path / "data", tmp_path / "rev"
        assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
        assert (
            main(
                TRAIN_ARGS
                + ["--data", str(data), "--run", str(run), "--direction", "1,0"]
            )
            == 0
        )
        assert load_config(run / "config.json").direction == (1, 0)
        assert main(["infer", "--run", str(run), "--data", str(data)]) == 0
        index = json.loads((run / "counterfactuals" / "results.json").read_text())
        assert all(r["source_group"] == 1 for r in index["results"])


class TestErrors:
    def test_analyze_without_infer(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
        code = main(
            ["analyze", "--data", str(data), "--results", str(tmp_path / "nowhere")]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "run the translation step first" in err

    def test_infer_channel_mismatch(self, pipeline, tmp_path, capsys):
        other = tmp_path / "five_channel_data"
        assert (
            main(
                [
                    "synth",
                    "--channels", "5",
                    "--height", "16",
                    "--width", "16",
                    "--n-per-group", "2",
                    "--disks", "1",
                    "--radius", "2", "3",
                    "--out", str(other),
                ]
            )
            == 0
        )
        code = main(["infer", "--run", str(pipeline["run"]), "--data", str(other)])
        assert code == 2
        err = capsys.readouterr().err
        assert "trained for 3 channels" in err and "has 5" in err

    def test_infer_without_train(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
        code = main(["infer", "--run", str(tmp_path / "norun"), "--data", str(data)])
        assert code == 2
        assert "train a model into this directory first" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--no-such-flag"])
        assert exc.value.code == 2

    def test_bad_direction_message(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
        code = main(
            TRAIN_ARGS
            + ["--data", str(data), "--run", str(tmp_path / "r"), "--direction", "2"]
        )
        assert code == 2
        assert "--direction" in capsys.readouterr().err


class TestIngest:
    def test_ingest_tiffs_with_normalization(self, tmp_path, capsys):
        files = {}
        rng = np.random.default_rng(0)
        for g in (0, 1):
            for i in range(2):
                path = tmp_path / f"g{g}i{i}.tif"
                write_tiff(path, rng.uniform(0, 40, (2, 12, 12)).astype(np.float32))
                files[(g, i)] = path
        out = tmp_path / "data"
        code = main(
            [
                "ingest",
                "--out", str(out),
                "--group0", str(files[(0, 0)]), str(files[(0, 1)]),
                "--group1", str(files[(1, 0)]), str(files[(1, 1)]),
                "--channel-names", "dapi,cd3",
                "--normalize",
                "--validation", "g0i0",
            ]
        )
        assert code == 0
        manifest = DatasetManifest.load(out)
        assert manifest.channel_names == ("dapi", "cd3")
        assert manifest.validation_entry.image_id == "g0i0"
        img = manifest.load_image("g1i1")
        assert float(img.pixels.min()) == 0.0 and float(img.pixels.max()) == 1.0
        entry = [e for e in manifest.entries if e.image_id == "g1i1"][0]
        assert entry.normalization is not None and len(entry.normalization) == 2

    def test_validation_id_must_exist(self, tmp_path, capsys):
        path = tmp_path / "a.tif"
        write_tiff(path, np.zeros((1, 8, 8), dtype=np.float32))
        path2 = tmp_path / "b.tif"
        write_tiff(path2, np.ones((1, 8, 8), dtype=np.float32))
        code = main(
            [
                "ingest",
                "--out", str(tmp_path / "data"),
                "--group0", str(path),
                "--group1", str(path2),
                "--validation", "missing_id",
            ]
        )
        assert code == 2
        assert "matches no ingested image id" in capsys.readouterr().err


def test_console_script_help():
    proc = subprocess.run(
        [sys.executable, "-m", "cf_translate.cli", "--help"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "analyze" in proc.stdout
