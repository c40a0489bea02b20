import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drop_bottleneck.core.exceptions import DimensionMismatchError, DropBottleneckError, OracleSizeError
from drop_bottleneck.models.domain import DiscretePMF
from drop_bottleneck.services.information_oracle import (
    brute_force_mi, exact_entropy_estimate, total_correlation,
)


def independent_pmf(marginals, supports) -> DiscretePMF:
    table = marginals[0]
    for marginal in marginals[1:]:
        table = np.multiply.outer(table, marginal)
    return DiscretePMF(support=supports, table=table)


def bound(pmf: DiscretePMF, p) -> float:
    H = exact_entropy_estimate(pmf).entropies
    return float(np.sum(H * (1.0 - np.asarray(p))))


def test_everything_dropped():
    pmf = DiscretePMF(support=[[1.0, 2.0], [1.0, 3.0]], table=np.full((2, 2), 0.25))
    assert brute_force_mi(pmf, [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)


def test_single_dimension_tight():
    pmf = DiscretePMF(support=[[1.0, 2.0]], table=[0.5, 0.5])
    assert brute_force_mi(pmf, [0.5]) == pytest.approx(0.5 * math.log(2), abs=1e-9)


def test_independent_dimensions_meet_bound(np_rng):
    marginals = [np_rng.dirichlet(np.ones(3)) for _ in range(3)]
    supports = [[1.0, 2.0, 4.0], [-1.0, 0.5, 3.0], [2.0, 5.0, 7.0]]
    pmf = independent_pmf(marginals, supports)
    p = np_rng.uniform(0.05, 0.95, size=3)
    assert brute_force_mi(pmf, p) == pytest.approx(bound(pmf, p), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 0.95), min_size=2, max_size=2),
       st.lists(st.floats(0.01, 1.0), min_size=9, max_size=9))
def test_upper_bound_with_total_correlation_gap(p, weights):
    # 상관된 2차원 분포; 0을 지지집합에서 제외해 드롭과 구분되게 함
    table = np.asarray(weights).reshape(3, 3)
    pmf = DiscretePMF(support=[[1.0, 2.0, 3.0], [1.0, 4.0, 9.0]], table=table / table.sum())
    mi = brute_force_mi(pmf, p)
    gap = bound(pmf, p) - mi
    assert mi >= -1e-12
    assert gap >= -1e-9
    assert gap == pytest.approx(total_correlation(pmf, p), abs=1e-9)


def test_total_correlation_zero_for_independent():
    pmf = independent_pmf([np.array([0.3, 0.7]), np.array([0.6, 0.4])], [[1.0, 2.0], [1.0, 5.0]])
    assert total_correlation(pmf, [0.4, 0.2]) == pytest.approx(0.0, abs=1e-12)


def test_exact_entropies():
    pmf = DiscretePMF(support=[[1.0, 2.0], [1.0, 2.0, 3.0, 4.0]], table=np.full((2, 4), 1 / 8))
    assert np.allclose(exact_entropy_estimate(pmf).entropies, [math.log(2), math.log(4)])


def test_oracle_size_limit():
    supports = [np.arange(1, 11, dtype=float)] * 6
    table = np.full((10,) * 6, 1e-6)
    with pytest.raises(OracleSizeError):
        brute_force_mi(DiscretePMF(support=supports, table=table), np.full(6, 0.5))


def test_p_shape_checked():
    pmf = DiscretePMF(support=[[1.0, 2.0]], table=[0.5, 0.5])
    with pytest.raises(DimensionMismatchError):
        brute_force_mi(pmf, [0.5, 0.5])


def test_table_must_normalize():
    with pytest.raises(DropBottleneckError):
        DiscretePMF(support=[[1.0, 2.0]], table=[0.5, 0.6])


def random_instance(rng, independent: bool) -> DiscretePMF:
    d = int(rng.integers(1, 4))
    sizes = [int(rng.integers(2, 6)) for _ in range(d)]
    # 0은 드롭과 구분되지 않으므로 지지집합에서 제외
    supports = [sorted(rng.choice(np.arange(1, 20), size=size, replace=False).astype(float)) for size in sizes]
    if independent:
        return independent_pmf([rng.dirichlet(np.ones(size)) for size in sizes], supports)
    table = rng.dirichlet(np.full(int(np.prod(sizes)), 0.5)).reshape(sizes)
    return DiscretePMF(support=supports, table=table)


@pytest.mark.parametrize("independent", [False, True])
def test_bound_over_random_instances(independent):
    rng = np.random.default_rng(7 if independent else 11)
    for _ in range(100):
        pmf = random_instance(rng, independent)
        p = rng.uniform(0.0, 1.0, size=len(pmf.support))
        mi = brute_force_mi(pmf, p)
        gap = bound(pmf, p) - mi
        assert gap >= -1e-9
        assert gap == pytest.approx(total_correlation(pmf, p), abs=1e-9)
        if independent:
            assert gap == pytest.approx(0.0, abs=1e-9)
