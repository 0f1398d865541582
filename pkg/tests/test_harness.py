"""Benchmark harness: dataset plumbing, artifact paths, verification, reports."""

import numpy as np
import pytest

from pipesgd import net
from pipesgd.engine import TrainConfig, load_model, serialize_model
from pipesgd.errors import ConfigError, VerificationError
from pipesgd.harness import (
    BenchOptions,
    BenchReport,
    _pattern_path,
    build_dataset,
    dataset_sha256,
    run_benchmark,
    run_inproc,
    run_tcp,
    verify_against_reference,
)
from pipesgd.timeline import read_timeline_csv


def small_config(**overrides):
    return TrainConfig(
        layer_dims=(4, 6, 3), world_size=2, iterations=3,
        batch_size=8, dataset_size=16, seed=5, finalize_timeout_s=10.0,
    ).replace(**overrides)


class TestDataset:
    def test_synthetic_dataset_hash_is_stable(self):
        cfg = small_config()
        a = dataset_sha256(build_dataset(cfg))
        b = dataset_sha256(build_dataset(cfg))
        assert a == b
        assert len(a) == 64

    def test_csv_dataset_round_trips_through_build(self, tmp_path):
        cfg = small_config()
        ds = build_dataset(cfg)
        path = str(tmp_path / "data.csv")
        net.save_csv_dataset(ds, path)
        loaded = build_dataset(cfg, dataset_csv=path)
        assert dataset_sha256(loaded) == dataset_sha256(ds)

    def test_different_seeds_different_data(self):
        a = build_dataset(small_config(seed=1))
        b = build_dataset(small_config(seed=2))
        assert dataset_sha256(a) != dataset_sha256(b)


class TestPatternPath:
    def test_single_pattern_keeps_path(self):
        assert _pattern_path("out/timeline.csv", "pipelined", False) == "out/timeline.csv"

    def test_multiple_patterns_tag_before_extension(self):
        assert _pattern_path("t.csv", "barrier", True) == "t.barrier.csv"

    def test_extensionless_path_gets_suffix(self):
        assert _pattern_path("timeline", "pipelined", True) == "timeline.pipelined"


class TestVerification:
    def test_detects_corrupted_model(self):
        cfg = small_config()
        ds = build_dataset(cfg)
        results = run_inproc(cfg, ds)
        results[1].model[0][3] += 1e-9
        with pytest.raises(VerificationError, match="diverges"):
            verify_against_reference(cfg, ds, results)

    def test_detects_missing_layer(self):
        cfg = small_config()
        ds = build_dataset(cfg)
        results = run_inproc(cfg, ds)
        results[0].model.pop()
        with pytest.raises(VerificationError, match="layers"):
            verify_against_reference(cfg, ds, results)


class TestRunTcpGuards:
    def test_rejects_non_loopback_hosts(self):
        cfg = small_config()
        ds = build_dataset(cfg)
        with pytest.raises(ConfigError, match="loopback"):
            run_tcp(cfg, ds, hosts=["10.0.0.7", "127.0.0.1"])

    def test_rejects_wrong_host_count(self):
        cfg = small_config()
        ds = build_dataset(cfg)
        with pytest.raises(ConfigError, match="hosts"):
            run_tcp(cfg, ds, hosts=["127.0.0.1"])


class TestRunBenchmark:
    def test_single_pattern_report(self, capsys):
        reports = run_benchmark(BenchOptions(config=small_config(), quiet=True))
        assert set(reports) == {"pipelined"}
        report = reports["pipelined"]
        assert isinstance(report, BenchReport)
        assert report.wall_ns > 0
        assert report.barrier_calls == 0
        assert len(report.results) == 2
        assert capsys.readouterr().out == ""

    def test_prints_summary_lines(self, capsys):
        run_benchmark(BenchOptions(config=small_config(), verify_oracle=True))
        out = capsys.readouterr().out
        assert "pipelined: verified bit-identical to the reference optimizer" in out
        assert "pipelined.wall_clock_ns=" in out
        assert "pipelined.barrier_calls=0" in out
        assert "pipelined.final_loss=" in out
        assert "pipelined.overlap_ratio=" in out

    def test_both_patterns_emit_wall_ratio(self, capsys):
        reports = run_benchmark(
            BenchOptions(config=small_config(), patterns=("pipelined", "barrier"))
        )
        assert set(reports) == {"pipelined", "barrier"}
        assert reports["barrier"].barrier_calls == 2 * small_config().iterations
        assert "pipelined_over_barrier_wall=" in capsys.readouterr().out

    def test_artifacts_written(self, tmp_path):
        timeline = str(tmp_path / "timeline.csv")
        metrics = str(tmp_path / "metrics.txt")
        checkpoint = str(tmp_path / "model.bin")
        cfg = small_config()
        reports = run_benchmark(BenchOptions(
            config=cfg,
            patterns=("pipelined", "barrier"),
            timeline_path=timeline,
            metrics_path=metrics,
            checkpoint_path=checkpoint,
            quiet=True,
        ))
        for pattern in ("pipelined", "barrier"):
            events = read_timeline_csv(str(tmp_path / f"timeline.{pattern}.csv"))
            assert events
            model = load_model(str(tmp_path / f"model.{pattern}.bin"))
            assert serialize_model(model.layers) == serialize_model(
                reports[pattern].results[0].model
            )
        text = (tmp_path / "metrics.txt").read_text()
        assert text.startswith("dataset_sha256=")
        assert "pipelined.wall_clock_ns=" in text
        assert "barrier.wall_clock_ns=" in text
        assert "pipelined_over_barrier_wall=" in text

    def test_single_pattern_artifact_names_untagged(self, tmp_path):
        checkpoint = str(tmp_path / "model.bin")
        run_benchmark(BenchOptions(
            config=small_config(), checkpoint_path=checkpoint, quiet=True,
        ))
        assert (tmp_path / "model.bin").exists()

    def test_checkpoints_identical_across_patterns(self, tmp_path):
        """Both patterns train to the same bits, so their checkpoints match."""
        reports = run_benchmark(BenchOptions(
            config=small_config(), patterns=("pipelined", "barrier"), quiet=True,
        ))
        a = serialize_model(reports["pipelined"].results[0].model)
        b = serialize_model(reports["barrier"].results[0].model)
        assert a == b

    def test_unknown_transport_rejected(self):
        with pytest.raises(ConfigError, match="transport"):
            run_benchmark(BenchOptions(config=small_config(), transport="carrier-pigeon"))

    def test_tcp_transport_round_trip(self, tmp_path):
        metrics = str(tmp_path / "m.txt")
        reports = run_benchmark(BenchOptions(
            config=small_config(), transport="tcp", verify_oracle=True,
            metrics_path=metrics, quiet=True,
        ))
        assert reports["pipelined"].wall_ns > 0
        assert (tmp_path / "m.txt").read_text().startswith("dataset_sha256=")
