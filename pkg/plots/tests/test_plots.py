import builtins
import json

import numpy as np
import pytest

from dibc_plots import figures
from dibc_plots.io import (
    ArtifactError,
    read_diagnostics,
    read_labels_csv,
    read_points_csv,
    subsample_rows,
)


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Real artifacts from a tiny end-to-end run of the clustering CLI."""
    from click.testing import CliRunner

    from dibc.cli import main as dibc_main

    root = tmp_path_factory.mktemp("artifacts")
    runner = CliRunner()
    data = root / "train.csv"
    out_dirs = {}
    assert runner.invoke(
        dibc_main, ["generate", "--n", "400", "--seed", "3", "--out", str(data)]
    ).exit_code == 0
    for workers in (1, 2):
        out_dir = root / f"run{workers}"
        result = runner.invoke(
            dibc_main,
            [
                "fit", "--data", str(data), "--workers", str(workers),
                "--k", "6", "--l", "2", "--iters", "100", "--burn-in", "50",
                "--refine-samples", "10", "--candidates", "4",
                "--param-iters", "150", "--param-burn-in", "50",
                "--seed", "7", "--out-dir", str(out_dir),
                "--label-col", "label",
            ],
        )
        assert result.exit_code == 0, result.output
        metrics = out_dir / "metrics.json"
        assert runner.invoke(
            dibc_main,
            [
                "evaluate", "--pred", str(out_dir / "c_star.csv"),
                "--truth", str(data), "--truth-col", "label",
                "--out", str(metrics),
            ],
        ).exit_code == 0
        out_dirs[workers] = out_dir
    predictive = root / "predictive.csv"
    assert runner.invoke(
        dibc_main,
        [
            "predict", "--draws", str(out_dirs[2] / "draws.bin"),
            "--n", "500", "--seed", "1", "--out", str(predictive),
        ],
    ).exit_code == 0
    return {"data": data, "runs": out_dirs, "predictive": predictive}


class TestReaders:
    def test_points_roundtrip(self, artifacts):
        points, labels = read_points_csv(artifacts["data"], label_column="label")
        assert points.shape == (400, 2)
        assert labels.shape == (400,)

    def test_labels_sorted_by_row(self, artifacts):
        labels = read_labels_csv(artifacts["runs"][2] / "c_star.csv")
        assert labels.shape == (400,)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ArtifactError):
            read_points_csv(path)

    def test_malformed_json_names_file(self, tmp_path):
        path = tmp_path / "diag.json"
        path.write_text("{not json")
        with pytest.raises(ArtifactError, match="diag.json"):
            read_diagnostics(path)

    def test_subsample_fraction(self):
        rows = subsample_rows(12_000, 0.06, seed=5)
        assert rows.shape[0] == 720
        np.testing.assert_array_equal(rows, subsample_rows(12_000, 0.06, seed=5))
        assert not np.array_equal(rows, subsample_rows(12_000, 0.06, seed=6))

    def test_subsample_bad_fraction(self):
        with pytest.raises(ArtifactError):
            subsample_rows(100, 0.0)


class TestFigures:
    def test_cluster_scatter_from_fit(self, artifacts, tmp_path):
        out = figures.plot_clusters(
            artifacts["data"],
            labels_path=artifacts["runs"][2] / "c_star.csv",
            sample_frac=0.5, seed=2, out=str(tmp_path / "clusters.png"),
        )
        assert (tmp_path / "clusters.png").stat().st_size > 0

    def test_cluster_scatter_truth_labels(self, artifacts, tmp_path):
        figures.plot_clusters(
            artifacts["data"], label_column="label",
            out=str(tmp_path / "truth.svg"),
        )
        assert (tmp_path / "truth.svg").stat().st_size > 0

    def test_predictive_scatter(self, artifacts, tmp_path):
        figures.plot_predictive(
            artifacts["predictive"], out=str(tmp_path / "pred.png")
        )
        assert (tmp_path / "pred.png").stat().st_size > 0

    def test_accuracy_delta_violin(self, artifacts, tmp_path):
        figures.plot_accuracy_delta(
            [artifacts["runs"][2] / "diagnostics.json"],
            out=str(tmp_path / "delta.png"),
        )
        assert (tmp_path / "delta.png").stat().st_size > 0

    def test_metrics_vs_workers_two_runs(self, artifacts, tmp_path):
        pairs = [
            (run / "diagnostics.json", run / "metrics.json")
            for run in artifacts["runs"].values()
        ]
        figures.plot_metrics_vs_workers(pairs, out=str(tmp_path / "metrics.png"))
        assert (tmp_path / "metrics.png").stat().st_size > 0

    def test_metrics_single_run_is_single_point(self, artifacts, tmp_path):
        run = artifacts["runs"][1]
        figures.plot_metrics_vs_workers(
            [(run / "diagnostics.json", run / "metrics.json")],
            out=str(tmp_path / "single.png"),
        )
        assert (tmp_path / "single.png").stat().st_size > 0

    def test_timings_bars(self, artifacts, tmp_path):
        figures.plot_timings(
            [run / "diagnostics.json" for run in artifacts["runs"].values()],
            out=str(tmp_path / "timings.png"),
        )
        assert (tmp_path / "timings.png").stat().st_size > 0

    def test_label_length_mismatch_rejected(self, artifacts, tmp_path):
        bad = tmp_path / "short.csv"
        bad.write_text("row,cluster\n0,1\n1,2\n")
        with pytest.raises(ArtifactError):
            figures.plot_clusters(
                artifacts["data"], labels_path=bad, out=str(tmp_path / "x.png")
            )

    def test_rendering_never_writes_artifacts(self, artifacts, tmp_path, monkeypatch):
        # pure view: the only file opened for writing is the output image
        out_path = str(tmp_path / "guard.png")
        written = []
        real_open = builtins.open

        def spy_open(file, mode="r", *args, **kwargs):
            if any(flag in mode for flag in ("w", "a", "x", "+")):
                written.append(str(file))
            return real_open(file, mode, *args, **kwargs)

        monkeypatch.setattr(builtins, "open", spy_open)
        figures.plot_clusters(
            artifacts["data"],
            labels_path=artifacts["runs"][2] / "c_star.csv",
            sample_frac=0.2, out=out_path,
        )
        assert all(path == out_path for path in written), written


class TestCli:
    def test_cli_renders_all_figures(self, artifacts, tmp_path):
        from click.testing import CliRunner

        from dibc_plots.cli import main

        runner = CliRunner()
        run2 = artifacts["runs"][2]
        commands = [
            ["clusters", "--points", str(artifacts["data"]),
             "--labels", str(run2 / "c_star.csv"),
             "--sample-frac", "0.5", "--out", str(tmp_path / "a.png")],
            ["predictive", "--points", str(artifacts["predictive"]),
             "--out", str(tmp_path / "b.png")],
            ["accuracy-delta", str(run2 / "diagnostics.json"),
             "--out", str(tmp_path / "c.png")],
            ["metrics-vs-workers",
             "--run", str(run2 / "diagnostics.json"), str(run2 / "metrics.json"),
             "--out", str(tmp_path / "d.png")],
            ["timings", str(run2 / "diagnostics.json"),
             "--out", str(tmp_path / "e.png")],
        ]
        for args in commands:
            result = runner.invoke(main, args, catch_exceptions=False)
            assert result.exit_code == 0, (args, result.output)
        for name in "abcde":
            assert (tmp_path / f"{name}.png").stat().st_size > 0

    def test_missing_artifact_is_io_error(self, tmp_path):
        from click.testing import CliRunner

        from dibc_plots.cli import main

        bad = tmp_path / "diag.json"
        bad.write_text("{broken")
        result = CliRunner().invoke(
            main, ["timings", str(bad), "--out", str(tmp_path / "x.png")]
        )
        assert result.exit_code == 3
        assert "diag.json" in result.output
