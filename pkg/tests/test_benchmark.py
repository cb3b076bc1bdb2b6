import numpy as np
import orjson
import pytest

from core.benchmark import (
    REPORT_NAME, SUMMARY_NAME, TIMING_NAME, benchmark, load_report, regularizer_sweep, report_table, sweep_table,
    write_sweep_csv,
)
from core.degrade import make_dataset
from core.log_manager import write_jsonl
from core.score_models import StationaryGaussianPrior
from core.tensor_io import write_rtf
from models.log import ManifestRecord
from models.settings import DegradationConfig, EmConfig, GuidanceKind, MStepConfig, ScheduleConfig


def _model_factory(shape):
    return StationaryGaussianPrior.from_power_law(*shape, mean=0.5, pixel_std=0.2, exponent=1.0)


def _config(**overrides):
    values = dict(n=1, guidance=GuidanceKind.PIGDM, schedule=ScheduleConfig(T=10),
                  mstep=MStepConfig(J=2, kernel_size=5), kernel_init="gaussian:k/6", seed=7)
    values.update(overrides)
    return EmConfig(**values)


@pytest.fixture
def dataset(tmp_path, rng):
    images = tmp_path / "images"
    for name in ("a", "b"):
        write_rtf(images / f"{name}.rtf", rng.uniform(size=(16, 16, 1)))
    result = make_dataset(images, tmp_path / "data", DegradationConfig(sigma=0.02, kernel_size=5, rng_seed=2))
    return result.manifest_path


def test_missing_manifest_gives_empty_report(tmp_path):
    report = benchmark(tmp_path / "none.jsonl", _config(), "fastem", _model_factory, tmp_path / "out")
    assert report.records == []
    assert (tmp_path / "out" / REPORT_NAME).read_bytes() == b""
    summary = orjson.loads((tmp_path / "out" / SUMMARY_NAME).read_bytes())
    assert summary["items"] == 0


def test_unknown_algorithm(tmp_path):
    with pytest.raises(ValueError, match="Unknown algorithm"):
        benchmark(tmp_path / "none.jsonl", _config(), "sgd", _model_factory, tmp_path / "out")


def test_fastem_benchmark_writes_reports(tmp_path, dataset):
    out = tmp_path / "bench"
    report = benchmark(dataset, _config(), "fastem", _model_factory, out)
    assert [r.item for r in report.records] == ["a", "b"]
    assert all(r.ok for r in report.records)
    for r in report.records:
        assert r.kernel_mse >= 0
        assert len(r.psnr_particles) == 1
        assert r.psnr == pytest.approx(r.psnr_particles[0])
    assert (out / "kernels" / "a.rtf").exists()
    assert (out / "restored" / "b.rtf").exists()
    assert len(load_report(out / REPORT_NAME)) == 2
    assert (out / TIMING_NAME).exists()
    summary = orjson.loads((out / SUMMARY_NAME).read_bytes())
    assert summary["algo"] == "fastem/pigdm"
    assert "runtime_seconds" not in summary["means"]
    assert report_table(report).row_count == 3


def test_report_is_deterministic_across_runs_and_threads(tmp_path, dataset):
    config = _config(n=2)
    benchmark(dataset, config, "fastem", _model_factory, tmp_path / "one")
    benchmark(dataset, config, "fastem", _model_factory, tmp_path / "two", threads=2)
    assert (tmp_path / "one" / REPORT_NAME).read_bytes() == (tmp_path / "two" / REPORT_NAME).read_bytes()


def test_em_benchmark_runs(tmp_path, dataset):
    report = benchmark(dataset, _config(L=1), "em", _model_factory, tmp_path / "em")
    assert len(report.succeeded) == 2


def test_failing_items_are_recorded(tmp_path, dataset):
    manifest = tmp_path / "data" / "mixed.jsonl"
    rows = [line for line in dataset.read_bytes().splitlines() if line]
    broken = ManifestRecord(clean_path="clean/missing.rtf", kernel_path="kernels/missing.rtf",
                            degraded_path="degraded/missing.rtf", sigma=0.02, seed=0)
    unreadable = ManifestRecord(clean_path="", kernel_path="", degraded_path="degraded/bad.rtf", sigma=0.02, seed=0,
                                error="ValueError: unreadable")
    write_jsonl(manifest, [orjson.loads(rows[0]), broken.to_dict(), unreadable.to_dict()])
    report = benchmark(manifest, _config(), "fastem", _model_factory, tmp_path / "out")
    assert [r.ok for r in report.records] == [True, False, False]
    assert "FileNotFoundError" in report.records[1].error
    assert "unreadable" in report.records[2].error
    assert report.to_dict()["failed"] == 2


def test_noise_free_sweep_recovers_kernels(dataset):
    mstep = MStepConfig(J=10, lam=1.0, beta_hqs=1e5)
    rows = regularizer_sweep(dataset, [0.0, 0.05], ["identity", "l2"], mstep, seed=1)
    assert [(r.sigma, r.regularizer) for r in rows] == [(0.0, "identity"), (0.0, "l2"), (0.05, "identity"),
                                                          (0.05, "l2")]
    assert all(r.items == 2 for r in rows)
    assert rows[0].mean_kernel_mse < 1e-8
    assert all(np.isfinite(r.mean_kernel_mse) for r in rows)


def test_sweep_is_deterministic(dataset):
    mstep = MStepConfig(J=4)
    a = regularizer_sweep(dataset, [0.02], ["l1", "l2"], mstep, seed=3)
    b = regularizer_sweep(dataset, [0.02], ["l1", "l2"], mstep, seed=3, threads=2)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


def test_pnp_sweep_needs_weights(dataset):
    with pytest.raises(ValueError, match="weights"):
        regularizer_sweep(dataset, [0.02], ["pnp"], MStepConfig())


def test_sweep_outputs(tmp_path, dataset):
    rows = regularizer_sweep(dataset, [0.01], ["l1", "l2"], MStepConfig(J=2))
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "sigma,regularizer,lam,mean_kernel_mse,items"
    assert len(lines) == 3
    table = sweep_table(rows)
    assert len(table.columns) == 3
    assert table.row_count == 1


def test_sweep_keeps_the_best_lambda_candidate(dataset):
    mstep = MStepConfig(J=4, lam=1.0)
    single = regularizer_sweep(dataset, [0.02], ["l2"], mstep, seed=5)
    tuned = regularizer_sweep(dataset, [0.02], ["l2", "l1"], mstep, seed=5, lams={"l2": [1e7, 1.0]})
    assert tuned[0].lam == 1.0
    assert tuned[0].mean_kernel_mse == single[0].mean_kernel_mse
    assert tuned[1].lam == mstep.lam


def test_sweep_rejects_negative_lambda(dataset):
    with pytest.raises(ValueError, match="lambda"):
        regularizer_sweep(dataset, [0.02], ["l2"], MStepConfig(), lams={"l2": [-1.0]})


@pytest.mark.slow
def test_trained_pnp_holds_up_better_than_l2_under_noise(tmp_path, trained_denoiser):
    net, _ = trained_denoiser
    rng = np.random.default_rng(8)
    images = tmp_path / "images"
    for i in range(60):
        write_rtf(images / f"img{i:02d}.rtf", rng.uniform(size=(32, 32, 1)))
    result = make_dataset(images, tmp_path / "data", DegradationConfig(sigma=0.0, kernel_size=11, rng_seed=4))
    rows = regularizer_sweep(result.manifest_path, [5 / 255, 20 / 255], ["l2", "pnp"], MStepConfig(J=10),
                             denoiser=net, seed=2, lams={"l2": [0.1, 1.0, 10.0], "pnp": [0.3, 1.0, 3.0, 7.0, 15.0]})
    l2_low, pnp_low, l2_high, pnp_high = rows
    assert all(r.items == 60 for r in rows)
    assert pnp_high.mean_kernel_mse <= l2_high.mean_kernel_mse
    assert (pnp_high.mean_kernel_mse / pnp_low.mean_kernel_mse) < (l2_high.mean_kernel_mse / l2_low.mean_kernel_mse)
