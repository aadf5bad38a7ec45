"""Tests for diffusion module."""
import pytest
import torch
import torch.nn as nn

from src.diffusion import (
    GuidanceTrace,
    PretrainConfig,
    SamplerConfig,
    diffusion_loss,
    generate_pool,
    pretrain_diffusion,
    sample_cfg,
    sampling_timesteps,
)
from src.domains import DomainParams, pretrain_corpus
from src.errors import InvalidArgumentError
from src.noise_schedule import build_noise_schedule
from src.samples import ClassToken, Label, Origin
from src.unet import UNetConfig, build_diffusion_model

TINY = UNetConfig(image_size=8, widths=(4, 8), blocks_per_stage=1, emb_dim=8)
SMALL_DOMAIN = DomainParams(image_size=8, blob_radius_min=1.0, blob_radius_max=2.0)


def fixed_loss(model, images, labels, sched, t, eps) -> float:
    loss, _ = diffusion_loss(
        model, images, labels, sched, torch.Generator().manual_seed(0), p_uncond=0.0, t=t, eps=eps
    )
    return float(loss)


class ScaledOutput(nn.Module):
    """Predictor returning weight * output(x); weight starts at 1."""

    def __init__(self, output) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(()))
        self.output = output

    def forward(self, x: torch.Tensor, t: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return self.weight * self.output(x)


class TestDiffusionLoss:
    """Tests for diffusion_loss."""

    def test_gradients_match_finite_differences(self) -> None:
        """Analytic gradients should agree with central differences in float64."""
        model = build_diffusion_model(TINY, 0).double()
        sched = build_noise_schedule(20)
        g = torch.Generator().manual_seed(1)
        images = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)
        labels = torch.tensor([0, 1])
        t = torch.tensor([3, 15])
        eps = torch.randn(2, 1, 8, 8, generator=g, dtype=torch.float64)

        _, grads = diffusion_loss(
            model, images, labels, sched, torch.Generator().manual_seed(0), p_uncond=0.0, t=t, eps=eps
        )
        h = 1e-6
        for name in ("stem.weight", "out_conv.bias", "class_emb.weight", "time_mlp.0.weight"):
            param = dict(model.named_parameters())[name]
            flat = param.data.view(-1)
            for index in (0, flat.numel() // 2):
                original = float(flat[index])
                flat[index] = original + h
                up = fixed_loss(model, images, labels, sched, t, eps)
                flat[index] = original - h
                down = fixed_loss(model, images, labels, sched, t, eps)
                flat[index] = original
                numeric = (up - down) / (2 * h)
                analytic = float(grads[name].view(-1)[index])
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8), f"{name}[{index}]"

    def test_full_dropout_uses_unconditional_token(self) -> None:
        """p_uncond=1 should make the loss independent of labels."""
        model = build_diffusion_model(TINY, 0)
        with torch.no_grad():
            model.class_emb.weight.normal_()
        sched = build_noise_schedule(20)
        images = torch.rand(2, 1, 8, 8)
        a, _ = diffusion_loss(model, images, torch.tensor([0, 0]), sched, torch.Generator().manual_seed(5), 1.0)
        b, _ = diffusion_loss(model, images, torch.tensor([1, 1]), sched, torch.Generator().manual_seed(5), 1.0)
        assert float(a) == float(b)

    def test_exact_noise_predictor_has_zero_loss(self) -> None:
        """A predictor returning the injected noise should score exactly 0."""
        g = torch.Generator().manual_seed(2)
        images = torch.rand(4, 1, 8, 8, generator=g)
        eps = torch.randn(4, 1, 8, 8, generator=g)
        model = ScaledOutput(lambda x: eps)
        loss, grads = diffusion_loss(
            model, images, torch.tensor([0, 1, 0, 1]), build_noise_schedule(20),
            torch.Generator().manual_seed(0), p_uncond=0.0, t=torch.tensor([0, 5, 10, 19]), eps=eps,
        )
        assert float(loss) == 0.0
        assert float(grads["weight"]) == 0.0

    def test_zero_predictor_loss_near_one(self) -> None:
        """A predictor returning zeros should score the mean squared noise, about 1."""
        images = torch.rand(64, 1, 8, 8, generator=torch.Generator().manual_seed(3))
        model = ScaledOutput(torch.zeros_like)
        loss, _ = diffusion_loss(
            model, images, torch.zeros(64, dtype=torch.int64), build_noise_schedule(20),
            torch.Generator().manual_seed(4),
        )
        assert float(loss) == pytest.approx(1.0, abs=0.1)

    def test_empty_batch_raises_error(self) -> None:
        """An empty batch should be rejected."""
        model = build_diffusion_model(TINY, 0)
        with pytest.raises(InvalidArgumentError, match="non-empty"):
            diffusion_loss(
                model, torch.zeros(0, 1, 8, 8), torch.zeros(0, dtype=torch.int64),
                build_noise_schedule(10), torch.Generator(),
            )


class TestPretrainDiffusion:
    """Tests for pretrain_diffusion."""

    def test_loss_log_and_determinism(self) -> None:
        """Pretraining should log one finite loss per step and be reproducible."""
        corpus = pretrain_corpus("lungspot", SMALL_DOMAIN, 8, 0.5, seed=0)
        cfg = PretrainConfig(steps=3, batch_size=4, n_images=8, log_every=0)
        sched = build_noise_schedule(20)
        model_a, log_a = pretrain_diffusion(corpus, cfg, TINY, sched, seed=3)
        model_b, log_b = pretrain_diffusion(corpus, cfg, TINY, sched, seed=3)
        assert [r.step for r in log_a] == [0, 1, 2]
        assert all(torch.isfinite(torch.tensor(r.loss)) for r in log_a)
        assert [r.loss for r in log_a] == [r.loss for r in log_b]
        for pa, pb in zip(model_a.parameters(), model_b.parameters()):
            assert torch.equal(pa, pb)

    def test_zero_steps_returns_seeded_init(self) -> None:
        """steps=0 should return the seeded initialisation and an empty log."""
        corpus = pretrain_corpus("lungspot", SMALL_DOMAIN, 4, 0.5, seed=0)
        model, log = pretrain_diffusion(corpus, PretrainConfig(steps=0), TINY, build_noise_schedule(20), seed=7)
        fresh = build_diffusion_model(TINY, 7)
        assert log == []
        for (name, pa), (_, pb) in zip(model.named_parameters(), fresh.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_loss_decreases(self) -> None:
        """The last losses of a short run should average below the first ones."""
        corpus = pretrain_corpus("lungspot", SMALL_DOMAIN, 16, 0.5, seed=0)
        cfg = PretrainConfig(steps=150, batch_size=16, learning_rate=5e-3, n_images=16, log_every=0)
        _, log = pretrain_diffusion(corpus, cfg, TINY, build_noise_schedule(1000), seed=0)
        losses = [r.loss for r in log]
        k = 30
        assert sum(losses[-k:]) / k < sum(losses[:k]) / k

    def test_missing_class_raises_error(self) -> None:
        """The base model needs both classes."""
        corpus = pretrain_corpus("lungspot", SMALL_DOMAIN, 6, 0.5, seed=0).filter(label=Label.NEGATIVE)
        with pytest.raises(InvalidArgumentError, match="no positive samples"):
            pretrain_diffusion(corpus, PretrainConfig(steps=1), TINY, build_noise_schedule(10), 0)

    def test_size_mismatch_raises_error(self) -> None:
        """Images must match the architecture's image size."""
        corpus = pretrain_corpus("lungspot", DomainParams(image_size=16, blob_radius_max=3.0), 4, 0.5, seed=0)
        with pytest.raises(InvalidArgumentError, match="image_size"):
            pretrain_diffusion(corpus, PretrainConfig(steps=1), TINY, build_noise_schedule(10), 0)


class TestSamplingTimesteps:
    """Tests for sampling_timesteps."""

    def test_endpoints_and_order(self) -> None:
        """Timesteps should run from T-1 down to 0, strictly decreasing."""
        ts = sampling_timesteps(1000, 24)
        assert len(ts) == 24
        assert ts[0] == 999
        assert ts[-1] == 0
        assert all(a > b for a, b in zip(ts, ts[1:]))

    def test_full_length(self) -> None:
        """steps == T should visit every timestep."""
        assert sampling_timesteps(5, 5) == [4, 3, 2, 1, 0]

    @pytest.mark.parametrize("steps", [0, 11])
    def test_out_of_range_raises_error(self, steps: int) -> None:
        """Steps outside [1, T] should be rejected."""
        with pytest.raises(InvalidArgumentError, match="sampler steps"):
            sampling_timesteps(10, steps)


class TestSampleCfg:
    """Tests for classifier-free guided sampling."""

    def setup_method(self) -> None:
        self.model = build_diffusion_model(TINY, 0)
        with torch.no_grad():
            self.model.class_emb.weight.normal_(generator=torch.Generator().manual_seed(9))
        self.sched = build_noise_schedule(20)

    def test_deterministic_given_seed(self) -> None:
        """Same seed should give the same image; another seed should differ."""
        cfg = SamplerConfig(steps=4, seed=11)
        a = sample_cfg(self.model, self.sched, cfg, ClassToken.POSITIVE)
        b = sample_cfg(self.model, self.sched, cfg, ClassToken.POSITIVE)
        c = sample_cfg(self.model, self.sched, SamplerConfig(steps=4, seed=12), ClassToken.POSITIVE)
        assert a.shape == (1, 8, 8)
        assert torch.equal(a, b)
        assert float(((a - c).abs() > 1e-3).float().mean()) >= 0.01
        assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0

    def test_guidance_combination(self) -> None:
        """eps_hat should equal eps_u + s * (eps_c - eps_u) at every step."""
        traces: list[GuidanceTrace] = []
        sample_cfg(self.model, self.sched, SamplerConfig(steps=3, guidance_scale=2.5), 1, traces.append)
        assert len(traces) == 3
        for tr in traces:
            expected = tr.eps_uncond + 2.5 * (tr.eps_cond - tr.eps_uncond)
            assert torch.allclose(tr.eps_hat, expected, atol=1e-6)
        assert traces[-1].t_prev == -1

    def test_scale_one_uses_conditional_only(self) -> None:
        """s=1 should skip the unconditional branch."""
        traces: list[GuidanceTrace] = []
        sample_cfg(self.model, self.sched, SamplerConfig(steps=2, guidance_scale=1.0), 1, traces.append)
        assert all(tr.eps_uncond is None and tr.eps_cond is not None for tr in traces)
        assert all(torch.equal(tr.eps_hat, tr.eps_cond) for tr in traces)

    def test_scale_zero_ignores_label(self) -> None:
        """s=0 should sample unconditionally, so the label does not matter."""
        cfg = SamplerConfig(steps=3, guidance_scale=0.0, seed=4)
        a = sample_cfg(self.model, self.sched, cfg, ClassToken.POSITIVE)
        b = sample_cfg(self.model, self.sched, cfg, ClassToken.NEGATIVE)
        assert torch.equal(a, b)

    def test_stochastic_sampler_is_seeded(self) -> None:
        """eta > 0 should stay reproducible given the seed."""
        cfg = SamplerConfig(steps=4, eta=1.0, seed=2)
        a = sample_cfg(self.model, self.sched, cfg, 1)
        b = sample_cfg(self.model, self.sched, cfg, 1)
        assert torch.equal(a, b)

    def test_unknown_label_raises_error(self) -> None:
        """Labels outside the token table should be rejected."""
        with pytest.raises(InvalidArgumentError, match="unknown class token"):
            sample_cfg(self.model, self.sched, SamplerConfig(steps=2), 5)

    def test_too_many_steps_raises_error(self) -> None:
        """More steps than timesteps should be rejected."""
        with pytest.raises(InvalidArgumentError, match="sampler steps"):
            sample_cfg(self.model, self.sched, SamplerConfig(steps=21), 1)


class TestGeneratePool:
    """Tests for generate_pool."""

    def setup_method(self) -> None:
        self.model = build_diffusion_model(TINY, 0)
        self.sched = build_noise_schedule(20)

    def test_pool_fields(self) -> None:
        """Every sample should be a synthetic positive with a sequential id."""
        pool = generate_pool(self.model, self.sched, SamplerConfig(steps=2, batch_size=2), 5, 100,
                             domain="tilecrack", id_prefix="pool")
        assert len(pool) == 5
        assert pool.domain == "tilecrack"
        assert [s.id for s in pool] == [f"pool-{i:05d}" for i in range(5)]
        assert pool.count(label=Label.POSITIVE, origin=Origin.SYNTHETIC) == 5

    def test_sample_depends_on_its_seed(self) -> None:
        """Sample i should match a single draw with seed seed0 + i."""
        cfg = SamplerConfig(steps=2, batch_size=3)
        pool = generate_pool(self.model, self.sched, cfg, 4, 50)
        single = sample_cfg(self.model, self.sched, SamplerConfig(steps=2, seed=52), ClassToken.POSITIVE)
        assert torch.allclose(pool[2].image, single, atol=1e-5)

    def test_batch_size_does_not_change_images(self) -> None:
        """Pools drawn with different batch sizes should hold the same images."""
        one = generate_pool(self.model, self.sched, SamplerConfig(steps=2, batch_size=1), 4, 50)
        three = generate_pool(self.model, self.sched, SamplerConfig(steps=2, batch_size=3), 4, 50)
        for a, b in zip(one, three):
            assert torch.allclose(a.image, b.image, atol=1e-5)

    def test_negative_label_raises_error(self) -> None:
        """Only the rare class is synthesized."""
        with pytest.raises(InvalidArgumentError, match="positive"):
            generate_pool(self.model, self.sched, SamplerConfig(steps=2), 2, 0, label=ClassToken.NEGATIVE)

    def test_empty_pool_raises_error(self) -> None:
        """Pool size must be at least one."""
        with pytest.raises(InvalidArgumentError, match="pool size"):
            generate_pool(self.model, self.sched, SamplerConfig(steps=2), 0, 0)
