import math
from collections import Counter

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from drop_bottleneck.core.exceptions import (
    CannotShuffleError, DimensionMismatchError, EmptyInputError, InsufficientSamplesError,
    InvalidSelectionError,
)
from drop_bottleneck.models.domain import PairBatch, PairingMode
from drop_bottleneck.services.mutual_information import (
    Discriminator, discriminator_score, estimate_mi, jsd_mi_estimate, knn_mi_scores,
    make_marginal_pairs, select_top_features, train_discriminator,
)


class TestDiscriminator:
    def test_zero_output_layer(self, gen):
        disc = Discriminator(3, 2, zero_init_output=True)
        z = torch.randn(10, 3, generator=gen)
        y = torch.randn(10, 2, generator=gen)
        assert torch.all(disc(z, y) == 0)

    def test_repeatable(self, gen):
        disc = Discriminator(3, 2)
        z = torch.randn(3, generator=gen)
        y = torch.randn(2, generator=gen)
        assert discriminator_score(disc, z, y) == discriminator_score(disc, z, y)

    def test_width_checked(self):
        with pytest.raises(DimensionMismatchError):
            Discriminator(3, 2)(torch.zeros(1, 4), torch.zeros(1, 2))


class TestJSD:
    def test_zero_scores(self):
        assert float(jsd_mi_estimate(torch.zeros(5), torch.zeros(7))) == pytest.approx(0.0, abs=1e-7)

    def test_saturation(self):
        value = jsd_mi_estimate(torch.full((4,), 60.0), torch.full((4,), -60.0))
        assert float(value) == pytest.approx(math.log(2), abs=1e-6)

    def test_hand_example(self):
        value = float(jsd_mi_estimate(torch.tensor([1.0, 1.0]), torch.tensor([-1.0, -1.0])))
        expected = 0.5 * (-F.softplus(torch.tensor(-1.0)) - F.softplus(torch.tensor(-1.0)) + math.log(4))
        assert value == pytest.approx(float(expected), abs=1e-6)
        assert value == pytest.approx(0.3799, abs=1e-4)

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=20),
           st.lists(st.floats(-20, 20), min_size=1, max_size=20))
    def test_bounded_above(self, joint, marginal):
        value = float(jsd_mi_estimate(torch.tensor(joint, dtype=torch.float64),
                                      torch.tensor(marginal, dtype=torch.float64)))
        assert value <= math.log(2) + 1e-12

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            jsd_mi_estimate(torch.zeros(0), torch.zeros(3))


class TestMarginalPairs:
    def test_rows_permuted(self, gen):
        z = torch.arange(12.0).reshape(6, 2)
        y = torch.arange(6.0).reshape(6, 1)
        shuffled = make_marginal_pairs(PairBatch(z=z, y=y), gen)
        assert shuffled.pairing == PairingMode.MARGINAL
        assert torch.equal(shuffled.z, z)
        assert sorted(shuffled.y.reshape(-1).tolist()) == list(range(6))

    def test_two_rows(self):
        z = torch.zeros(2, 1)
        y = torch.tensor([[1.0], [2.0]])
        seen = set()
        for seed in range(20):
            generator = torch.Generator().manual_seed(seed)
            seen.add(tuple(make_marginal_pairs(PairBatch(z=z, y=y), generator).y.reshape(-1).tolist()))
        assert seen <= {(1.0, 2.0), (2.0, 1.0)}
        assert (2.0, 1.0) in seen

    def test_four_rows_uniform_over_permutations(self, gen):
        trials = 10_000
        batch = PairBatch(z=torch.zeros(4, 1), y=torch.arange(4.0).reshape(4, 1))
        counts = Counter(
            tuple(int(v) for v in make_marginal_pairs(batch, gen).y.reshape(-1).tolist()) for _ in range(trials)
        )
        assert len(counts) == 24
        expected = trials / 24
        sigma = math.sqrt(trials * (1 / 24) * (23 / 24))
        assert all(abs(count - expected) <= 3 * sigma for count in counts.values())

    def test_single_row(self):
        with pytest.raises(CannotShuffleError):
            make_marginal_pairs(PairBatch(z=torch.zeros(1, 2), y=torch.zeros(1, 2)))


class TestTrainedEstimate:
    n = 10_000

    def trained_estimate(self, z, y, gen) -> float:
        torch.manual_seed(0)
        disc = Discriminator(8, 8)
        train_discriminator(disc, z, y, epochs=40, lr=3e-3, batch_size=512, rng=gen)
        return estimate_mi(disc, z, y, gen)

    def test_independent_gaussians_near_zero(self, gen):
        z = torch.randn(self.n, 8, generator=gen)
        y = torch.randn(self.n, 8, generator=gen)
        assert abs(self.trained_estimate(z, y, gen)) <= 0.05

    def test_identical_gaussians(self, gen):
        z = torch.randn(self.n, 8, generator=gen)
        assert self.trained_estimate(z, z.clone(), gen) >= 0.3


class TestKnnScores:
    def test_independent_feature(self, np_rng):
        labels = np_rng.integers(0, 3, size=5000)
        X = np_rng.standard_normal((5000, 1))
        assert knn_mi_scores(X, labels)[0] == pytest.approx(0.0, abs=0.05)

    def test_near_deterministic_feature(self, np_rng):
        labels = np_rng.integers(0, 4, size=5000)
        X = (labels + 1e-3 * np_rng.standard_normal(5000)).reshape(-1, 1)
        frequencies = np.bincount(labels) / labels.size
        h_label = float(-(frequencies * np.log(frequencies)).sum())
        assert knn_mi_scores(X, labels)[0] == pytest.approx(h_label, rel=0.1)

    def test_constant_feature(self, np_rng):
        labels = np_rng.integers(0, 2, size=200)
        X = np.column_stack([np.full(200, 3.0), labels + 0.1 * np_rng.standard_normal(200)])
        scores = knn_mi_scores(X, labels)
        assert scores[0] == 0.0
        assert scores[1] > 0.1

    def test_permutation_equivariant(self, np_rng):
        labels = np_rng.integers(0, 3, size=1000)
        X = np.column_stack([labels + s * np_rng.standard_normal(1000) for s in (0.2, 0.5, 1.0, 3.0, 10.0)])
        perm = np.array([3, 0, 4, 1, 2])
        assert_allclose(knn_mi_scores(X[:, perm], labels), knn_mi_scores(X, labels)[perm], atol=1e-9)

    def test_alignment_checked(self):
        with pytest.raises(DimensionMismatchError):
            knn_mi_scores(np.zeros((10, 2)), np.zeros(9))

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            knn_mi_scores(np.zeros((3, 2)), np.zeros(3), k=3)


class TestSelectTopFeatures:
    @pytest.mark.parametrize("scores, m, expected", [
        ([3.0, 1.0, 2.0], 2, [0, 2]),
        ([3.0, 1.0, 2.0], 3, [0, 1, 2]),
        ([1.0, 1.0, 1.0], 1, [0]),
        ([0.5, 2.0, 2.0, 0.1], 2, [1, 2]),
    ])
    def test_selection(self, scores, m, expected):
        assert select_top_features(scores, m) == expected

    @pytest.mark.parametrize("m", [0, 4])
    def test_range(self, m):
        with pytest.raises(InvalidSelectionError):
            select_top_features([1.0, 2.0, 3.0], m)

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.data())
    def test_selected_dominate_rest(self, scores, data):
        m = data.draw(st.integers(1, len(scores)))
        chosen = select_top_features(scores, m)
        rest = [s for i, s in enumerate(scores) if i not in chosen]
        assert len(chosen) == m
        assert not rest or min(scores[i] for i in chosen) >= max(rest)
