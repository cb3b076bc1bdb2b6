import numpy as np
import pytest

from config import Config, DiffusionConfig
from core.sampler import schedule_from_config
from models.ensemble import ParticleEnsemble
from models.kernel import BlurKernel
from models.log import MetricsRecord, MetricsReport
from models.settings import EmConfig, GuidanceKind, MStepConfig, ScheduleConfig, TrainConfig


class TestBlurKernel:
    def test_rejects_even_size(self):
        with pytest.raises(ValueError, match="odd"):
            BlurKernel(np.full((2, 2), 0.25))

    def test_rejects_negative_entries(self):
        grid = np.zeros((3, 3))
        grid[0, 0] = -0.5
        grid[1, 1] = 1.5
        with pytest.raises(ValueError, match="negative"):
            BlurKernel(grid)

    def test_rejects_wrong_mass(self):
        with pytest.raises(ValueError, match="sum to 1"):
            BlurKernel(np.full((3, 3), 0.1))

    def test_data_is_read_only(self):
        kernel = BlurKernel.delta(3)
        with pytest.raises(ValueError):
            kernel.data[0, 0] = 1.0

    def test_gaussian_is_symmetric_and_normalized(self):
        kernel = BlurKernel.gaussian(9, 1.3)
        assert kernel.data.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(kernel.data, kernel.data.T)
        assert np.argmax(kernel.data) == 4 * 9 + 4

    def test_zero_width_gaussian_is_delta(self):
        np.testing.assert_array_equal(BlurKernel.gaussian(5, 0.0).data, BlurKernel.delta(5).data)

    def test_normalized_clips_and_rescales(self):
        kernel = BlurKernel.normalized(np.array([[-1.0, 1.0, 0.0], [0.0, 2.0, 0.0], [0.0, 1.0, 0.0]]))
        np.testing.assert_allclose(kernel.data[:, 1], [0.25, 0.5, 0.25])
        assert kernel.data[0, 0] == 0.0

    def test_normalized_needs_positive_mass(self):
        with pytest.raises(ValueError):
            BlurKernel.normalized(-np.ones((3, 3)))

    def test_padded_keeps_center(self):
        padded = BlurKernel.delta(3).padded(7)
        assert padded[3, 3] == 1.0
        with pytest.raises(ValueError):
            BlurKernel.delta(5).padded(3)


class TestParticleEnsemble:
    def test_mean_and_shape(self, rng):
        particles = rng.normal(size=(3, 4, 4, 1))
        ensemble = ParticleEnsemble(particles)
        assert ensemble.n == 3
        assert ensemble.image_shape == (4, 4, 1)
        assert ensemble.stream_ids == [0, 1, 2]
        np.testing.assert_allclose(ensemble.mean(), particles.mean(axis=0))

    def test_permuted_keeps_stream_ids_attached(self, rng):
        ensemble = ParticleEnsemble(rng.normal(size=(3, 2, 2, 1)))
        permuted = ensemble.permuted([2, 0, 1])
        assert permuted.stream_ids == [2, 0, 1]
        np.testing.assert_array_equal(permuted[0], ensemble[2])

    def test_rejects_unbatched(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(np.zeros((4, 4, 1)))


class TestSettings:
    def test_mstep_strength(self):
        assert MStepConfig(lam=4.0, beta_hqs=100.0).strength == pytest.approx(0.2)

    @pytest.mark.parametrize("kwargs", [{"J": 0}, {"beta_hqs": 0.0}, {"lam": -1.0}])
    def test_mstep_validation(self, kwargs):
        with pytest.raises(ValueError):
            MStepConfig(**kwargs)

    def test_em_config_accepts_guidance_name(self):
        config = EmConfig(guidance="dps")
        assert config.guidance is GuidanceKind.DPS
        assert config.to_dict()["guidance"] == "dps"

    @pytest.mark.parametrize("kwargs", [{"L": 0}, {"n": 0}, {"mstep_every": 0}])
    def test_em_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            EmConfig(**kwargs)

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(sigma_range=(0.1, 0.0))
        assert TrainConfig().to_dict()["kernel_sizes"] == list(DiffusionConfig.DENOISER_KERNEL_SIZES)

    def test_default_beta_range_follows_step_count(self):
        assert ScheduleConfig(T=1000).betas() == pytest.approx((1e-4, 0.02))
        assert ScheduleConfig(T=100).betas() == pytest.approx((1e-3, 0.2))
        assert ScheduleConfig(T=100, beta_max=0.05).betas() == pytest.approx((1e-3, 0.05))
        assert ScheduleConfig(T=10).betas() == pytest.approx((1e-2, 0.5))

    def test_short_default_schedule_still_reaches_noise(self):
        schedule = schedule_from_config(ScheduleConfig(T=DiffusionConfig.T_PIGDM))
        assert schedule.alpha_bar[-1] < 1e-2


class TestMetricsReport:
    def test_aggregate_skips_failed_items(self):
        report = MetricsReport(records=[
            MetricsRecord(item="a", psnr=20.0, psnr_sa=22.0, kernel_mse=1e-4, reblur=0.5, runtime_seconds=2.0),
            MetricsRecord(item="b", psnr=30.0, psnr_sa=32.0, kernel_mse=3e-4, reblur=1.5, runtime_seconds=4.0),
            MetricsRecord(item="c", error="ValueError: bad"),
        ], algo="fastem/pigdm")
        means = report.aggregate()
        assert len(report.succeeded) == 2
        assert means["psnr"] == pytest.approx(25.0)
        assert means["kernel_mse"] == pytest.approx(2e-4)

    def test_record_round_trip_excludes_timing_by_default(self):
        record = MetricsRecord(item="a", psnr=20.0, psnr_particles=[19.0, 21.0], runtime_seconds=3.0)
        data = record.to_dict()
        assert "runtime_seconds" not in data
        assert MetricsRecord.from_dict(data).psnr_particles == [19.0, 21.0]
        assert record.to_dict(include_timing=True)["runtime_seconds"] == 3.0


class TestConfig:
    def test_threads_resolution(self, monkeypatch):
        monkeypatch.delenv(Config.THREADS_ENV_VAR, raising=False)
        assert Config.get_threads() == 1
        monkeypatch.setenv(Config.THREADS_ENV_VAR, "4")
        assert Config.get_threads() == 4
        assert Config.get_threads(2) == 2
        assert Config.validate() == []

    def test_invalid_thread_env_is_reported(self, monkeypatch):
        monkeypatch.setenv(Config.THREADS_ENV_VAR, "many")
        assert Config.get_threads() == 1
        assert any(Config.THREADS_ENV_VAR in e for e in Config.validate())
