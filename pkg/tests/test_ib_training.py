import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from scipy import integrate, stats

from drop_bottleneck.core.exceptions import EmptyBatchError, EmptyBufferError
from drop_bottleneck.core.random import torch_generator
from drop_bottleneck.models.domain import EntropyEstimate, RepresentationVariant, VIBMode
from drop_bottleneck.services.bottleneck import DropParams, init_drop_params
from drop_bottleneck.services import ib_training
from drop_bottleneck.services.ib_training import (
    DBTrainer, FeatureExtractor, IBObjectiveConfig, TransitionBuffer, VIBLayer, build_infomax_model,
    db_exploration_loss, db_supervised_loss, infomax_db_loss, train_db, train_db_supervised,
    train_vib_supervised, vib_forward, vib_kl_term,
)
from drop_bottleneck.services.mutual_information import Discriminator


def small_cfg(**overrides) -> IBObjectiveConfig:
    values = dict(d=6, hidden=16, n_dup=3, batch_size=16, epochs=1, discriminator_epochs=1,
                  beta=0.1, bin_count=8)
    values.update(overrides)
    return IBObjectiveConfig(**values)


def random_batch(gen, n=24, dim=5):
    states = torch.randn(n, dim, generator=gen)
    next_states = states + 0.1 * torch.randn(n, dim, generator=gen)
    return states, next_states


def zero_linear(in_features, out_features) -> nn.Linear:
    layer = nn.Linear(in_features, out_features)
    nn.init.zeros_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


def smooth_discriminator(disc: Discriminator) -> Discriminator:
    # ReLU 꺾임점이 차분 구간에 걸리지 않도록
    for index, layer in enumerate(disc.body):
        if isinstance(layer, nn.ReLU):
            disc.body[index] = nn.Tanh()
    return disc


def assert_logit_gradient(loss_value, logits: torch.Tensor, h: float = 1e-4):
    """∂loss/∂p′ 해석 그래디언트 vs 중앙 차분 (상대 오차 < 1e−4)"""
    logits.grad = None
    loss_value().backward()
    analytic = logits.grad.clone()
    for i in range(logits.shape[0]):
        with torch.no_grad():
            logits[i] += h
            up = float(loss_value())
            logits[i] -= 2 * h
            down = float(loss_value())
            logits[i] += h
        assert float(analytic[i]) == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)


class TestExplorationObjective:
    def setup_parts(self, gen, cfg):
        model = build_infomax_model(RepresentationVariant.DB, 5, cfg, gen)
        states, next_states = random_batch(gen)
        entropies = model.feature_entropies(next_states, cfg.bin_count)
        return model, states, next_states, entropies

    def test_decomposition(self, gen):
        cfg = small_cfg()
        model, states, next_states, entropies = self.setup_parts(gen, cfg)
        losses = db_exploration_loss(states, next_states, model.extractor, model.params,
                                     model.discriminator, cfg, entropies, gen)
        reassembled = -losses.mi_estimate + cfg.beta * losses.compression
        assert float(losses.total) == pytest.approx(float(reassembled), abs=1e-6)

    def test_gradient_flow_separation(self, gen):
        cfg = small_cfg()
        model, states, next_states, entropies = self.setup_parts(gen, cfg)
        losses = db_exploration_loss(states, next_states, model.extractor, model.params,
                                     model.discriminator, cfg, entropies, gen)
        losses.compression.backward(retain_graph=True)
        assert model.params.logits.grad is not None and torch.any(model.params.logits.grad != 0)
        for module in (model.extractor, model.discriminator):
            assert all(p.grad is None or torch.all(p.grad == 0) for p in module.parameters())

        model.zero_grad(set_to_none=True)
        (-losses.mi_estimate).backward()
        for module in (model.extractor, model.discriminator, model.params):
            assert any(p.grad is not None and torch.any(p.grad != 0) for p in module.parameters())

    def test_no_compression_pressure_at_zero_beta(self, gen):
        cfg = small_cfg(beta=0.0)
        model, states, next_states, entropies = self.setup_parts(gen, cfg)
        assert np.all(entropies.entropies > 0)
        losses = db_exploration_loss(states, next_states, model.extractor, model.params,
                                     model.discriminator, cfg, entropies, gen)
        logits = model.params.logits
        (grad,) = torch.autograd.grad(losses.weight * losses.compression, logits)
        assert torch.all(grad == 0)

    def test_zero_discriminator_and_no_dropping(self, gen):
        d = 4
        params = DropParams(torch.full((d,), -60.0))
        disc = Discriminator(d, d, zero_init_output=True)
        H = EntropyEstimate(entropies=np.array([0.5, 1.0, 1.5, 2.0]), bin_count=8)
        x = torch.randn(8, d, generator=gen)
        losses = infomax_db_loss(x, x.clone(), params, disc, beta=0.2, n_dup=2, entropies=H, rng=gen)
        assert float(losses.total) == pytest.approx(0.2 * 5.0, abs=1e-5)

    def test_empty_batch(self, gen):
        params = init_drop_params(3, rng=gen)
        H = EntropyEstimate(entropies=np.ones(3), bin_count=8)
        with pytest.raises(EmptyBatchError):
            infomax_db_loss(torch.zeros(0, 3), torch.zeros(0, 3), params, Discriminator(3, 3), 0.1, 2, H)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_difference(self, float64, seed):
        config = np.random.default_rng(seed)
        cfg = small_cfg(d=int(config.integers(2, 7)), n_dup=int(config.integers(1, 4)),
                        beta=float(config.uniform(0.0, 0.5)), temperature=float(config.uniform(0.3, 1.0)))
        model = build_infomax_model(RepresentationVariant.DB, 5, cfg, torch_generator(seed))
        smooth_discriminator(model.discriminator)
        states, next_states = random_batch(torch_generator(100 + seed), n=int(config.integers(4, 11)))
        entropies = model.feature_entropies(next_states, cfg.bin_count)

        def loss_value():
            return db_exploration_loss(states, next_states, model.extractor, model.params, model.discriminator,
                                       cfg, entropies, torch_generator(11)).total

        assert_logit_gradient(loss_value, model.params.logits)

    def test_duplication_keeps_expected_prediction_term(self, gen):
        d = 4
        torch.manual_seed(0)
        disc = Discriminator(d, d)
        params = init_drop_params(d, -1.0, 1.0, rng=gen)
        H = EntropyEstimate(entropies=np.ones(d), bin_count=8)
        x = torch.randn(64, d, generator=gen)
        y = x + 0.3 * torch.randn(64, d, generator=gen)

        def prediction_terms(n_dup, draws):
            with torch.no_grad():
                return np.array([float(infomax_db_loss(x, y, params, disc, 0.0, n_dup, H,
                                                       torch_generator(seed)).mi_estimate)
                                 for seed in range(draws)])

        single, duplicated = prediction_terms(1, 400), prediction_terms(50, 100)
        se_single = single.std(ddof=1) / math.sqrt(single.size)
        se_duplicated = duplicated.std(ddof=1) / math.sqrt(duplicated.size)
        assert abs(single.mean() - duplicated.mean()) <= 2 * (se_single + se_duplicated)
        assert duplicated.std() < single.std()


class TestSupervisedObjective:
    def test_untrained_classifier_gives_log_classes(self, gen):
        n_classes = 5
        X = torch.randn(20, 4, generator=gen)
        labels = torch.randint(0, n_classes, (20,), generator=gen)
        params = init_drop_params(4, rng=gen)
        losses = db_supervised_loss(X, labels, None, params, zero_linear(4, n_classes), beta=0.0, rng=gen)
        assert float(losses.total) == pytest.approx(math.log(n_classes), abs=1e-6)
        assert float(losses.mi_estimate) == pytest.approx(-math.log(n_classes), abs=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_difference(self, float64, seed):
        config = np.random.default_rng(seed)
        gen = torch_generator(seed)
        d, n, n_classes = int(config.integers(2, 7)), int(config.integers(6, 16)), int(config.integers(2, 5))
        X = torch.randn(n, d, generator=gen)
        labels = torch.randint(0, n_classes, (n,), generator=gen)
        params = init_drop_params(d, rng=gen, dtype=torch.float64, temperature=float(config.uniform(0.3, 1.0)))
        torch.manual_seed(seed)
        classifier = nn.Linear(d, n_classes)
        beta = float(config.uniform(0.0, 0.5))

        def loss_value():
            return db_supervised_loss(X, labels, None, params, classifier, beta=beta, rng=torch_generator(9)).total

        assert_logit_gradient(loss_value, params.logits)

    def test_heavy_compression_raises_drop_probabilities(self, gen):
        X = torch.randn(256, 6, generator=gen)
        labels = torch.randint(0, 2, (256,), generator=gen)
        params = init_drop_params(6, rng=gen)
        before = float(params.probabilities().mean())
        cfg = small_cfg(d=6, beta=50.0, learning_rate=0.05, batch_size=64)
        result = train_db_supervised(X, labels, cfg, nn.Linear(6, 2), params, rng=gen, steps=80)
        assert len(result.trace) == 80
        assert float(params.probabilities().mean()) > before
        assert float(params.probabilities().min()) > 0.5

    def test_entropies_estimated_once_before_epochs(self, gen, monkeypatch):
        calls = []
        real = ib_training.estimate_entropy_binning

        def counting(X, bin_count):
            calls.append(bin_count)
            return real(X, bin_count)

        monkeypatch.setattr(ib_training, "estimate_entropy_binning", counting)
        X = torch.randn(48, 4, generator=gen)
        labels = (X[:, 0] > 0).long()
        result = train_db_supervised(X, labels, small_cfg(d=4, epochs=3, batch_size=16), nn.Linear(4, 2),
                                     init_drop_params(4, rng=gen), rng=gen)
        assert len(result.trace) == 9
        assert calls == [8]

    def test_vib_baseline_trains(self, gen):
        X = torch.randn(64, 4, generator=gen)
        labels = (X[:, 0] > 0).long()
        result = train_vib_supervised(X, labels, small_cfg(epochs=2, batch_size=16), nn.Linear(4, 2),
                                      VIBLayer(4, 4), beta=0.01, rng=gen)
        assert result.params is None
        assert result.vib is not None
        assert all(step.compression >= 0 for step in result.trace)

    def test_empty_training_set(self, gen):
        with pytest.raises(EmptyBufferError):
            train_db_supervised(torch.zeros(0, 3), torch.zeros(0, dtype=torch.long), small_cfg(),
                                nn.Linear(3, 2), init_drop_params(3, rng=gen))


class TestVIB:
    def layer_with(self, mean, logvar) -> VIBLayer:
        layer = VIBLayer(1, len(mean))
        with torch.no_grad():
            layer.encoder.weight.zero_()
            layer.encoder.bias.copy_(torch.tensor(list(mean) + list(logvar)))
        return layer

    @pytest.mark.parametrize("mean, logvar, expected", [
        ([0.0], [0.0], 0.0),
        ([1.0], [0.0], 0.5),
    ])
    def test_kl_closed_form(self, mean, logvar, expected):
        assert float(vib_kl_term(self.layer_with(mean, logvar), torch.ones(3, 1))) == pytest.approx(expected)

    @pytest.mark.parametrize("mean, std", [(0.3, 0.5), (-1.2, 1.7), (2.0, 0.8)])
    def test_kl_matches_quadrature(self, mean, std, float64):
        layer = self.layer_with([mean], [2 * math.log(std)])
        q, prior = stats.norm(mean, std), stats.norm(0.0, 1.0)
        oracle, _ = integrate.quad(lambda v: q.pdf(v) * (q.logpdf(v) - prior.logpdf(v)), -30, 30)
        assert float(vib_kl_term(layer, torch.ones(1, 1))) == pytest.approx(oracle, abs=1e-6)

    def test_kl_nonnegative(self, gen):
        layer = VIBLayer(3, 4)
        assert float(vib_kl_term(layer, torch.randn(50, 3, generator=gen))) >= 0

    def test_vanishing_variance(self, gen):
        layer = self.layer_with([0.7, -0.2], [-200.0, -200.0])
        sample = vib_forward(layer, torch.ones(4, 1), gen, VIBMode.SAMPLE)
        assert torch.allclose(sample, torch.tensor([[0.7, -0.2]] * 4))

    def test_mode_repeatable(self, gen):
        layer = VIBLayer(3, 2)
        x = torch.randn(5, 3, generator=gen)
        assert torch.equal(vib_forward(layer, x, mode=VIBMode.MODE), vib_forward(layer, x, mode=VIBMode.MODE))


class TestTrainer:
    def buffer(self, gen, n=40) -> TransitionBuffer:
        states, next_states = random_batch(gen, n=n)
        return TransitionBuffer.from_arrays(next_states.numpy(), states.numpy())

    def test_zero_epochs_leave_parameters(self, gen):
        cfg = small_cfg(epochs=0)
        model = build_infomax_model(RepresentationVariant.DB, 5, cfg, gen)
        before = {name: value.clone() for name, value in model.state_dict().items()}
        train_db(self.buffer(gen), cfg, gen, model=model)
        for name, value in model.state_dict().items():
            assert torch.equal(value, before[name])

    def test_round_records_steps(self, gen):
        cfg = small_cfg(epochs=2)
        trainer = DBTrainer(build_infomax_model(RepresentationVariant.DB, 5, cfg, gen), cfg)
        result = trainer.train(self.buffer(gen), gen)
        # 40행, 배치 16 → 에폭당 3 스텝
        assert [m.step for m in result.trace] == list(range(1, 7))
        assert trainer.rounds == 1
        assert all(math.isfinite(m.loss) and m.discriminator_mi is not None for m in result.trace)
        assert 0 < result.trace[-1].mean_p < 1

    @pytest.mark.parametrize("variant", [RepresentationVariant.VIB, RepresentationVariant.NO_DROP])
    def test_baseline_variants(self, gen, variant):
        cfg = small_cfg()
        model = build_infomax_model(variant, 5, cfg, gen)
        result = DBTrainer(model, cfg).train(self.buffer(gen), gen)
        assert result.trace
        assert math.isnan(result.trace[-1].mean_p)
        assert model.embed(torch.zeros(2, 5)).shape == (2, cfg.d)

    def test_same_seed_same_model(self):
        cfg = small_cfg()
        first = build_infomax_model(RepresentationVariant.DB, 5, cfg, torch_generator(2))
        second = build_infomax_model(RepresentationVariant.DB, 5, cfg, torch_generator(2))
        for (name, a), (_, b) in zip(first.state_dict().items(), second.state_dict().items()):
            assert torch.equal(a, b), name

    def test_empty_buffer(self, gen):
        with pytest.raises(EmptyBufferError):
            train_db(TransitionBuffer(), small_cfg(), gen)

    def test_snapshot_is_frozen(self, gen):
        cfg = small_cfg()
        model = build_infomax_model(RepresentationVariant.DB, 5, cfg, gen)
        frozen = model.snapshot()
        DBTrainer(model, cfg).train(self.buffer(gen), gen)
        assert not any(p.requires_grad for p in frozen.parameters())
        assert not torch.equal(frozen.params.logits, model.params.logits)


def test_extractor_shape():
    assert FeatureExtractor(7, d=3, hidden=5)(torch.zeros(2, 7)).shape == (2, 3)
