import numpy as np
import pytest
from scipy import linalg

from fcspdc_modeling.tools.numba_tools import contract_loops, exchange_overlap, trace_purity
from tests.utilities.amplitudes import random_amplitude, schmidt_amplitude


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trace_purity_matches_svd(seed):
    f = random_amplitude(seed).values
    s = linalg.svd(f, compute_uv=False)
    expected = np.sum(s**4) / np.sum(s**2) ** 2
    assert trace_purity(np.ascontiguousarray(f)) == pytest.approx(expected, rel=1e-10)


def test_trace_purity_of_product_state_is_one():
    f = schmidt_amplitude([1.0]).values
    assert trace_purity(np.ascontiguousarray(f)) == pytest.approx(1.0, rel=1e-10)


def test_contract_loops_matches_matmul():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(16, 20)) + 1j * rng.normal(size=(16, 20))
    b = rng.normal(size=(20, 12)) + 1j * rng.normal(size=(20, 12))

    out = contract_loops(a, b, 0.5)
    expected = 0.5 * (a @ b)
    assert out.shape == (16, 12)
    assert np.linalg.norm(out - expected) / np.linalg.norm(expected) < 1e-12


def test_exchange_overlap():
    symmetric = np.array([[1.0, 2.0], [2.0, 1.0]], dtype=np.complex128)
    overlap, norm = exchange_overlap(symmetric)
    assert overlap == pytest.approx(norm)
    assert norm == pytest.approx(10.0)

    antisymmetric = np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=np.complex128)
    overlap, norm = exchange_overlap(antisymmetric)
    assert overlap == pytest.approx(norm)

    upper = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)
    overlap, norm = exchange_overlap(upper)
    assert overlap == 0.0
    assert norm == 1.0
