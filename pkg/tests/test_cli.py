import json
import re
from pathlib import Path

import numpy as np
import pytest

from alref.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, load_pool_manifest, main
from alref.raster import LabelRaster, read_bras


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pool")
    code = run_cli("gen-data", "--out", str(out), "--seed", "7",
                   "--images", "3", "--width", "48", "--height", "48")
    assert code == EXIT_OK
    return out


class TestGenData:
    def test_writes_pairs_and_manifest(self, tmp_path):
        out = tmp_path / "pool"
        assert run_cli("gen-data", "--out", str(out), "--width", "32",
                       "--height", "32") == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["images"]) == 6
        for entry in manifest["images"]:
            assert (out / entry["image"]).exists()
            assert (out / entry["labels"]).exists()
        pool, _ = load_pool_manifest(out / "manifest.json")
        assert len(pool) == 6
        assert pool.images[0].bands == 5

    def test_same_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("gen-data", "--out", str(out), "--seed", "7",
                           "--images", "2", "--width", "24", "--height", "24") == EXIT_OK
        for name in ("img_000.bras", "lab_000.bras", "img_001.bras"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_single_image_rejected(self, tmp_path):
        assert run_cli("gen-data", "--out", str(tmp_path / "x"),
                       "--images", "1") == EXIT_USAGE


class TestSimulateCoarse:
    def test_outputs_and_determinism(self, data_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("simulate-coarse", "--manifest", str(data_dir / "manifest.json"),
                           "--out", str(out), "--seed", "3") == EXIT_OK
        log = json.loads((a / "coarse_log.json").read_text())
        assert len(log["images"]) == 3
        assert all(entry["noise_rate"] > 0 for entry in log["images"])
        assert (a / "coarse_000.bras").read_bytes() == (b / "coarse_000.bras").read_bytes()

    def test_fixed_filter_size(self, data_dir, tmp_path):
        out = tmp_path / "fixed"
        assert run_cli("simulate-coarse", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(out), "--min-filter", "2", "--max-filter", "2") == EXIT_OK
        log = json.loads((out / "coarse_log.json").read_text())
        for entry in log["images"]:
            assert all(fw == 2 and fh == 2 for _, fw, fh in entry["steps"])

    def test_coarse_labels_replay_against_source(self, data_dir, tmp_path):
        from test_coarse import dilate_bruteforce

        out = tmp_path / "replay"
        assert run_cli("simulate-coarse", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(out), "--seed", "5", "--max-filter", "6") == EXIT_OK
        log = json.loads((out / "coarse_log.json").read_text())
        entry = log["images"][0]
        fine = read_bras(data_dir / entry["source"], num_classes=4)
        replay = fine.labels.copy()
        for c, fw, fh in entry["steps"]:
            replay = dilate_bruteforce(replay, c, fw, fh)
        coarse = read_bras(out / entry["labels"], num_classes=4)
        assert np.array_equal(coarse.labels, replay)

    def test_missing_manifest(self, tmp_path):
        assert run_cli("simulate-coarse", "--manifest", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "o")) == EXIT_IO


FAST_RUN = ["--cycles", "2", "--repeats", "1", "--n-candidates", "6", "--k-select", "2",
            "--candidate-size", "16", "--epochs", "1", "--chips-per-epoch", "2",
            "--chip-size", "16", "--window", "3", "--max-filter", "8"]


class TestRun:
    def test_row_count(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(out), "--strategy", "us", *FAST_RUN) == EXIT_OK
        lines = (out / "results_us.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 1 * 3 * 3  # header + repeats x folds x (cycles + 1)

    def test_unknown_strategy_is_usage_error(self, data_dir, tmp_path):
        assert run_cli("run", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(tmp_path), "--strategy", "xx") == EXIT_USAGE

    def test_rerun_from_manifest_reproduces_csv(self, data_dir, tmp_path):
        first, second = tmp_path / "r1", tmp_path / "r2"
        assert run_cli("run", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(first), "--strategy", "cs", "--seed", "9",
                       *FAST_RUN) == EXIT_OK
        assert run_cli("run", "--run-manifest", str(first / "run_manifest_cs.json"),
                       "--out", str(second)) == EXIT_OK

        def stable(path):  # wall-time column varies between runs
            return re.sub(r"[^,]+$", "t", path.read_text(), flags=re.M)

        assert stable(first / "results_cs.csv") == stable(second / "results_cs.csv")
        cfg1 = json.loads((first / "run_manifest_cs.json").read_text())["config"]
        cfg2 = json.loads((second / "run_manifest_cs.json").read_text())["config"]
        assert cfg1 == cfg2

    def test_missing_manifest_flag(self, tmp_path):
        assert run_cli("run", "--strategy", "us", "--out", str(tmp_path)) == EXIT_USAGE


@pytest.fixture(scope="module")
def results(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("results")
    for strategy in ("rs", "cs", "us"):
        assert run_cli("run", "--manifest", str(data_dir / "manifest.json"),
                       "--out", str(out), "--strategy", strategy, *FAST_RUN) == EXIT_OK
    return out


class TestReport:
    def test_three_curves_and_summary(self, results, tmp_path):
        out = tmp_path / "report"
        assert run_cli("report", str(results / "results_*.csv"),
                       "--out", str(out)) == EXIT_OK
        svg = (out / "accuracy.svg").read_text()
        assert svg.count("<polyline") == 3
        assert (out / "acquisition.svg").exists()
        summary = (out / "summary.csv").read_text().strip().split("\n")
        assert len(summary) == 4  # header + one row per strategy

    def test_empty_glob_is_error(self, tmp_path):
        assert run_cli("report", str(tmp_path / "nothing_*.csv"),
                       "--out", str(tmp_path)) == EXIT_IO
